#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biaslens/model.hpp"

namespace biaslens::stats {

enum class Field { y_true, y_pred, error };
enum class SplitFilter { source, target, both };

std::string_view to_string(Field field);
bool split_matches(Split split, SplitFilter filter);

/// Probability (or count) table keyed by outcome label.
using Table = std::map<std::string, double>;

/// Assigns records to attribute cells. Categorical values are their own
/// cells; continuous values are binned. Quantile edges are computed once from
/// the dataset the mapper was built from and then reused for any other
/// dataset (reference, target), so cell labels agree across datasets.
class CellMapper {
 public:
  static CellMapper build(const Dataset& dataset, const AttributeSpec& spec);

  const std::string& attribute() const noexcept { return attribute_; }
  AttributeKind kind() const noexcept { return kind_; }
  /// Cell labels in canonical order (bins are zero-padded so lexical order
  /// is bin order).
  const std::vector<std::string>& cells() const noexcept { return cells_; }
  /// Interior cut points for binned attributes.
  const std::vector<double>& cuts() const noexcept { return cuts_; }

  /// Cell of a record, or nullopt when the attribute is missing.
  std::optional<std::string> cell_of(const PredictionRecord& record) const;
  std::optional<std::size_t> index_of(const PredictionRecord& record) const;
  std::size_t index_of_label(const std::string& label) const;

 private:
  std::string attribute_;
  AttributeKind kind_ = AttributeKind::categorical;
  std::vector<std::string> cells_;
  std::vector<double> cuts_;
  std::size_t bin_of(double x) const;
};

/// Attribute spec for an audit: the dataset's spec with the config's binning
/// applied. Throws missing_attribute when the dataset lacks the attribute.
AttributeSpec resolve_attribute(const Dataset& dataset, const AuditConfig& config,
                                const std::string& name);

/// Quantile cut points for `n_bins` bins: at most n_bins non-empty bins.
std::vector<double> quantile_cuts(std::vector<double> values, int n_bins);

/// Per-cell multiplier applied on top of record weights.
struct WeightAssignment {
  std::string attribute;
  std::map<std::string, double> weights;
};

struct CellDistribution {
  Table counts;  // raw (weighted) counts over the support
  Table probs;   // smoothed probabilities; empty when n = 0 and alpha = 0
  double n = 0.0;
  std::size_t records = 0;
};

struct ConditionalDistribution {
  std::string attribute;
  Field field = Field::y_true;
  std::vector<std::string> support;
  std::map<std::string, CellDistribution> cells;
  double smoothing_alpha = 0.0;
  /// Records skipped because the attribute was missing.
  std::size_t missing = 0;
};

/// Outcome support for a field: union of y_true and y_pred labels over all
/// records plus `extra`; {"0","1"} for the error field.
std::vector<std::string> outcome_support(const Dataset& dataset, Field field,
                                         const std::vector<std::string>& extra = {});

/// Q(field | attribute) with additive smoothing:
/// p(y) = (count(y) + alpha) / (n + alpha * K).
ConditionalDistribution estimate_conditional(const Dataset& dataset, const CellMapper& mapper,
                                             Field field, SplitFilter split, double alpha,
                                             const std::vector<std::string>& support = {},
                                             const WeightAssignment* weights = nullptr);

/// Convenience overload building the mapper from the dataset itself.
ConditionalDistribution estimate_conditional(const Dataset& dataset, const AttributeSpec& attribute,
                                             Field field, SplitFilter split, double alpha);

/// Weighted attribute marginal (counts) for a split.
struct Marginal {
  Table counts;
  double total = 0.0;
  std::size_t records = 0;
  std::size_t missing = 0;
  Table probabilities() const;
};

Marginal attribute_marginal(const Dataset& dataset, const CellMapper& mapper, SplitFilter split,
                            const WeightAssignment* weights = nullptr);

/// Resolved reference distribution P(Y | A).
class IdealDistribution {
 public:
  enum class Kind { explicit_table, uniform, empirical, toward_uniform };

  static IdealDistribution explicit_table(std::map<std::string, Table> table);
  static IdealDistribution uniform();
  /// Conditional of `field` in `reference`, cells from `mapper`.
  static IdealDistribution empirical_from(const Dataset& reference, const CellMapper& mapper,
                                          Field field, double smoothing = 0.0);
  static IdealDistribution toward_uniform(const IdealDistribution& base, double lambda);

  Kind kind() const noexcept { return kind_; }
  /// Outcomes this ideal assigns probability to (empty for uniform).
  std::vector<std::string> outcomes() const;
  /// Row for `cell` over `support`; outcomes without mass get 0.
  Table row(const std::string& cell, const std::vector<std::string>& support) const;

 private:
  Kind kind_ = Kind::uniform;
  std::map<std::string, Table> table_;
  double lambda_ = 0.0;
  std::shared_ptr<const IdealDistribution> base_;
};

/// Builds an ideal from its config description. `source`, `target_ref` and
/// `trusted_ref` are the datasets an empirical spec may point at.
IdealDistribution resolve_ideal(const IdealSpec& spec, const CellMapper& mapper,
                                const Dataset& source, const Dataset* target_ref,
                                const Dataset* trusted_ref);

struct DivergenceResult {
  enum class Kind { kl, llr_g, mean_gap, weat_d };
  double statistic = 0.0;
  std::map<std::string, double> per_cell;
  Kind kind = Kind::kl;
};

std::string_view to_string(DivergenceResult::Kind kind);

/// sum_y q(y) ln(q(y)/p(y)) in nats.
double kl_divergence(const Table& q, const Table& p);

/// G = 2 sum_y O_y ln(O_y / (n p_y)), 0 ln 0 = 0.
DivergenceResult llr_statistic(const Table& observed_counts, const Table& ideal);

/// G summed over cells of `observed` (cells with n = 0 skipped).
DivergenceResult llr_by_cell(const ConditionalDistribution& observed,
                             const std::map<std::string, Table>& ideal_rows);

/// Per-record error: 0/1 loss for categorical outcomes, |y - y_hat| else.
std::vector<double> error_values(const Dataset& dataset);
double error_value(const PredictionRecord& record);

/// Normalizes a count table to probabilities.
Table normalize(const Table& counts);

/// Records restricted to a split with the attribute present, sorted by id,
/// with their cell indices. The canonical order for resampling.
struct CellAssignment {
  std::vector<const PredictionRecord*> records;
  std::vector<int> cells;
  std::size_t n_cells = 0;
  std::size_t missing = 0;
};

CellAssignment assign_cells(const Dataset& dataset, const CellMapper& mapper, SplitFilter split);

using GroupStatistic =
    std::function<double(const std::vector<const PredictionRecord*>&, const std::vector<int>&)>;

struct PermutationResult {
  double observed = 0.0;
  double p_value = 1.0;
};

/// Label-shuffle test: cell labels are permuted among records (records in
/// ascending id order, so the result does not depend on input order).
/// p = (1 + #{null >= observed}) / (1 + n_permutations).
PermutationResult permutation_test(const Dataset& dataset, const CellMapper& mapper,
                                   SplitFilter split, const GroupStatistic& statistic,
                                   std::size_t n_permutations, std::uint64_t seed);

}  // namespace biaslens::stats
