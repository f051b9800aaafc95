#pragma once

#include <optional>
#include <string>
#include <vector>

#include "biaslens/model.hpp"
#include "biaslens/stats.hpp"

namespace biaslens::origins {

enum class Origin { label_bias, selection_bias, overamplification, semantic_bias };

std::string_view to_string(Origin origin);

/// Fixed wording attached to every finding.
extern const char* const kCaveat;

struct OriginFinding {
  Origin origin = Origin::selection_bias;
  stats::DivergenceResult divergence;
  double p_value = 1.0;
  double effect_size_nats = 0.0;
  bool flagged = false;
  std::string evidence;
  std::string caveat = kCaveat;
  std::string test;
  /// overamplification only: "amplified", "attenuated" or "unchanged".
  std::optional<std::string> direction;
  /// Per-cell signed gaps or per-probe numbers, for the report.
  nlohmann::json detail = nlohmann::json::object();
  std::vector<std::string> warnings;
};

/// Target population for the selection check: a reference dataset or an
/// explicit attribute marginal.
struct TargetReference {
  const Dataset* dataset = nullptr;
  std::optional<stats::Table> marginal;

  bool present() const { return dataset != nullptr || marginal.has_value(); }
};

/// Q(A_s) against P(A_t). Effect: KL(source marginal || target marginal),
/// unsmoothed. Null: multinomial draws from an explicit marginal, or
/// hypergeometric reassignment of source/target membership for a dataset.
OriginFinding selection_bias_check(const Dataset& source, const TargetReference& target,
                                   const AttributeSpec& attribute, const AuditConfig& config,
                                   const stats::WeightAssignment* weights = nullptr);

/// Q(Y_s | A_s) against a trusted P(Y_s | A_s), on gold labels. Throws
/// missing_reference when `trusted` is null.
OriginFinding label_bias_check(const Dataset& source, const stats::IdealDistribution* trusted,
                               const AttributeSpec& attribute, const AuditConfig& config);

/// Q(Y_hat_s | A_s) against Q(Y_s | A_s) on the same records. Null: the two
/// labels of a record are exchangeable.
OriginFinding overamplification_check(const Dataset& dataset, const AttributeSpec& attribute,
                                      const AuditConfig& config);

struct DiagnosisMatrix {
  std::string attribute;
  std::optional<bool> representative;      // unset when no target reference
  std::optional<bool> correct_annotation;  // unset when no trusted reference
  /// Origins named by the label x selection table (unchecked inputs count
  /// as not flagged).
  std::vector<Origin> table_cell;
  std::string cell_label;
  std::optional<OriginFinding> selection;
  std::optional<OriginFinding> label;
  std::optional<OriginFinding> overamplification;
  std::vector<OriginFinding> semantic;
  std::string caveat = kCaveat;
  std::vector<std::string> notes;

  /// Every flagged origin across the component findings.
  std::vector<Origin> flagged_origins() const;
};

/// Label x selection interaction cell for two check outcomes.
std::vector<Origin> table_cell(bool selection_flagged, bool label_flagged);
std::string cell_label(const std::vector<Origin>& cell);

DiagnosisMatrix diagnose(const Dataset& source, const TargetReference& target,
                         const stats::IdealDistribution* trusted, const AttributeSpec& attribute,
                         const AuditConfig& config, std::vector<OriginFinding> semantic = {});

}  // namespace biaslens::origins
