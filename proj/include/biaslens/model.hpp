#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace biaslens {

enum class OutcomeKind { categorical, continuous };
enum class AttributeKind { categorical, continuous };
enum class Split { source, target };

/// Categorical label or real value.
using OutcomeValue = std::variant<std::string, double>;
using AttributeValue = std::variant<std::string, double>;

OutcomeKind kind_of(const OutcomeValue& value);
/// Label text for categorical values; shortest round-trip text for reals.
std::string value_text(const std::variant<std::string, double>& value);

std::string_view to_string(Split split);
Split parse_split(std::string_view text);
std::string_view to_string(OutcomeKind kind);
std::string_view to_string(AttributeKind kind);

struct PredictionRecord {
  std::string id;
  OutcomeValue y_true;
  OutcomeValue y_pred;
  std::map<std::string, AttributeValue> attrs;
  Split split = Split::source;
  std::optional<std::string> text;
  double weight = 1.0;

  bool operator==(const PredictionRecord&) const = default;
};

struct Binning {
  enum class Strategy { quantile, fixed_edges };
  Strategy strategy = Strategy::quantile;
  int n_bins = 0;             // quantile
  std::vector<double> edges;  // fixed_edges, strictly increasing

  bool operator==(const Binning&) const = default;
};

struct AttributeSpec {
  std::string name;
  AttributeKind kind = AttributeKind::categorical;
  std::optional<Binning> binning;

  bool operator==(const AttributeSpec&) const = default;
};

/// Immutable, validated collection of prediction records.
///
/// Construction checks every record invariant: unique ids, one outcome kind
/// shared by all y_true/y_pred values, finite non-negative weights, finite
/// continuous attributes, and one kind per attribute name. Attribute specs
/// are inferred from the values; `specs` may supply binning or declare
/// attributes that no record carries.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<PredictionRecord> records, std::vector<AttributeSpec> specs = {},
                   std::optional<OutcomeKind> declared_kind = std::nullopt);

  const std::vector<PredictionRecord>& records() const noexcept { return records_; }
  OutcomeKind outcome_kind() const noexcept { return outcome_kind_; }
  const std::vector<AttributeSpec>& attribute_specs() const noexcept { return specs_; }
  const AttributeSpec* find_attribute(std::string_view name) const;
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  bool has_split(Split split) const;

  /// Copy with binning taken from `binning` for the named attributes.
  Dataset with_binning(const std::map<std::string, Binning>& binning) const;

  bool operator==(const Dataset&) const = default;

 private:
  std::vector<PredictionRecord> records_;
  OutcomeKind outcome_kind_ = OutcomeKind::categorical;
  std::vector<AttributeSpec> specs_;
};

// ---------------------------------------------------------------------------
// Ingestion

enum class RecordFormat { jsonl, csv };

RecordFormat parse_format(std::string_view text);

struct ColumnMap {
  struct Attribute {
    std::string column;
    std::string name;
    AttributeKind kind = AttributeKind::categorical;
  };
  std::string id = "id";
  std::string y_true = "y_true";
  std::string y_pred = "y_pred";
  std::string split = "split";
  std::optional<std::string> weight;
  std::optional<std::string> text;
  OutcomeKind outcome_kind = OutcomeKind::categorical;
  std::vector<Attribute> attributes;
};

ColumnMap column_map_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ColumnMap& map);

/// Reads a record stream. Row order is preserved. CSV input requires a column
/// map. Malformed rows raise an Error carrying the 1-based line number.
Dataset parse_records(std::istream& in, RecordFormat format,
                      const std::optional<ColumnMap>& columns = std::nullopt);

/// Inverse of parse_records. Reals are written with round-trip precision.
void serialize_records(std::ostream& out, const Dataset& dataset, RecordFormat format,
                       const std::optional<ColumnMap>& columns = std::nullopt);

nlohmann::ordered_json record_to_json(const PredictionRecord& record);

// ---------------------------------------------------------------------------
// Audit configuration

/// Configuration-level description of an ideal distribution. Resolved into a
/// stats::IdealDistribution once the referenced datasets are loaded.
struct IdealSpec {
  enum class Type { explicit_table, uniform, empirical, toward_uniform };
  Type type = Type::uniform;
  /// explicit_table: cell -> outcome -> probability; cell "*" applies to
  /// every cell without its own row.
  std::map<std::string, std::map<std::string, double>> table;
  /// empirical: "source", "trusted_ref" or "target_ref".
  std::string from = "source";
  std::string field = "y_true";
  double smoothing = 0.0;
  /// toward_uniform
  double lambda = 0.0;
  std::shared_ptr<IdealSpec> base;
};

IdealSpec ideal_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const IdealSpec& spec);

struct AuditConfig {
  std::vector<std::string> attributes;
  /// Ideal per attribute; key "*" is the fallback for unlisted attributes.
  std::map<std::string, IdealSpec> ideal;
  double alpha = 0.05;
  double effect_floor = 0.01;
  std::size_t n_permutations = 1000;
  std::uint64_t seed = 0;
  double smoothing_alpha = 0.5;
  std::map<std::string, Binning> binning;
  /// Explicit target attribute marginals for the selection check.
  std::map<std::string, std::map<std::string, double>> target_marginals;
  std::optional<ColumnMap> columns;
  /// Raw WEAT probe documents ({X, Y, A, B}) for the semantic check.
  std::vector<nlohmann::json> weat_specs;

  /// Ideal spec for an attribute, falling back to "*" and then to Uniform.
  IdealSpec ideal_for(const std::string& attribute) const;
};

/// Parses a JSON config document and applies defaults. Throws on values that
/// violate the config invariants (alpha in (0,1), n_permutations >= 100,
/// smoothing_alpha >= 0).
AuditConfig parse_config(std::istream& in);
AuditConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AuditConfig& config);
Binning binning_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Binning& binning);

struct ValidationFinding {
  enum class Kind { missing_attribute, incompatible_spec, support_mismatch, invalid_ideal };
  Kind kind;
  std::string attribute;
  std::string message;

  bool operator==(const ValidationFinding&) const = default;
};

std::string_view to_string(ValidationFinding::Kind kind);

/// Pure check of a config against a dataset. Empty iff every audited
/// attribute exists with a compatible spec and every explicit ideal table
/// covers the observed outcomes.
std::vector<ValidationFinding> validate_config(const AuditConfig& config, const Dataset& dataset);

}  // namespace biaslens
