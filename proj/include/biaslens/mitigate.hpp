#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "biaslens/model.hpp"
#include "biaslens/stats.hpp"

namespace biaslens::mitigate {

/// weight(a) = target(a) / source(a). Both marginals are normalized first.
/// Source cells without target mass get weight 0.
stats::WeightAssignment poststratify_weights(const stats::Table& source_marginal,
                                             const stats::Table& target_marginal,
                                             const std::string& attribute = {});

/// Copy of `dataset` with each record's weight multiplied by its cell weight.
/// Records lacking the attribute keep their weight.
Dataset apply_weights(const Dataset& dataset, const stats::CellMapper& mapper,
                      const stats::WeightAssignment& weights);

enum class ResampleMode { down, up_with_replacement };

ResampleMode parse_resample_mode(std::string_view text);

/// Cell sizes proportional to `target` summing to `n` (largest remainder,
/// ties to the earlier cell).
std::map<std::string, std::size_t> apportion(const stats::Table& target, std::size_t n);

/// Resamples so the attribute marginal matches `target_marginal` within 1/n.
/// Down: uniform without replacement inside each cell; `n_out` defaults to
/// the largest feasible size. Up: every original is kept and each cell is
/// topped up by draws with replacement (copies get ids "<id>#r<k>").
/// Records lacking the attribute are dropped. Original relative order is
/// preserved.
Dataset stratified_resample(const Dataset& dataset, const AttributeSpec& attribute,
                            const stats::Table& target_marginal, ResampleMode mode,
                            std::uint64_t seed, std::optional<std::size_t> n_out = std::nullopt);

struct MatchResult {
  std::vector<PredictionRecord> controls;                  // in matching order
  std::vector<std::pair<std::string, std::string>> pairs;  // (case id, control id)
  std::size_t shortfall = 0;
  std::vector<std::string> warnings;
};

/// Greedy 1-nearest-neighbour matching without replacement. Continuous
/// attributes are standardized over cases and controls together; a
/// categorical mismatch costs 1. Cases are visited in ascending id order and
/// distance ties are broken by a seed-derived key per control.
MatchResult matched_controls(const std::vector<PredictionRecord>& cases,
                             const std::vector<PredictionRecord>& controls,
                             const std::vector<AttributeSpec>& attributes, std::uint64_t seed);

/// Unordered word pairs swapped whole-token with case preserved.
class SwapLexicon {
 public:
  SwapLexicon() = default;
  explicit SwapLexicon(const std::vector<std::pair<std::string, std::string>>& pairs);

  /// Two columns per line (whitespace, comma or tab separated); '#' starts a
  /// comment.
  static SwapLexicon load(std::istream& in);

  /// Partner of a lowercase word, if the word is in the lexicon.
  std::optional<std::string> partner(const std::string& lowercase_word) const;
  const std::vector<std::pair<std::string, std::string>>& pairs() const noexcept { return pairs_; }

 private:
  std::vector<std::pair<std::string, std::string>> pairs_;
  std::map<std::string, std::string> partner_;
};

/// Swaps every lexicon token in `text`. Sets `hits` to the number swapped.
std::string swap_text(const std::string& text, const SwapLexicon& lexicon, std::size_t* hits = nullptr);

/// Number of whole-token, case-insensitive occurrences of `word`.
std::size_t count_token(const std::string& text, const std::string& word);

struct AttributeFlip {
  std::string attribute;
  std::map<std::string, std::string> mapping;
};

/// Appends, after the originals, one swapped copy (id "<id>#cf") of every
/// record whose text contains a lexicon word.
Dataset counterfactual_augment(const Dataset& dataset, const SwapLexicon& lexicon,
                               const std::optional<AttributeFlip>& flip = std::nullopt);

struct ScoredRecord {
  double score = 0.0;
  std::string cell;
};

struct ThresholdResult {
  std::map<std::string, double> thresholds;  // admit score >= threshold
  std::map<std::string, double> achieved;    // positive rate per cell
  std::map<std::string, std::size_t> n;
};

/// Per-cell thresholds admitting the fewest records whose share reaches the
/// cell's ideal positive rate.
ThresholdResult threshold_match(const std::vector<ScoredRecord>& scores,
                                const std::map<std::string, double>& ideal_positive_rates);

/// Warning text when the weighted y_true marginal moved by more than
/// `tolerance` in any label.
std::optional<std::string> label_shift_warning(const Dataset& before, const Dataset& after,
                                               double tolerance = 0.05);

}  // namespace biaslens::mitigate
