#pragma once

#include <map>
#include <string>
#include <vector>

#include "biaslens/model.hpp"
#include "biaslens/stats.hpp"

namespace biaslens::disparity {

struct CellDetail {
  stats::Table observed;  // raw proportions (or mean error for continuous outcomes)
  stats::Table smoothed;  // smoothed proportions; empty for continuous outcomes
  stats::Table ideal;
  double n = 0.0;
  std::size_t records = 0;
};

struct DisparityReport {
  enum class Kind { outcome, error };
  Kind kind = Kind::outcome;
  std::string attribute;
  stats::DivergenceResult divergence;
  double p_value = 1.0;
  double effect_size_nats = 0.0;
  bool flagged = false;
  std::map<std::string, CellDetail> per_cell_detail;
  std::string split_used;
  std::string test;  // description of the null model
  std::size_t missing = 0;
  std::vector<std::string> warnings;
};

std::string_view to_string(DisparityReport::Kind kind);

/// p < alpha and effect >= effect_floor.
bool flag_rule(double p_value, double effect, const AuditConfig& config);

/// Q(y_pred | A) on the target split (source when no target split exists)
/// against an ideal P(Y | A). Statistic: G summed over cells. Null: per-cell
/// multinomial draws from the ideal. Effect: G / 2N, the record-weighted KL
/// from the observed conditional to the ideal.
DisparityReport outcome_disparity(const Dataset& dataset, const AttributeSpec& attribute,
                                  const stats::IdealDistribution& ideal, const AuditConfig& config);

/// Equality of the error distribution across cells. Categorical outcomes:
/// G between cell and 0/1 error (every cell against the pooled error rate).
/// Continuous outcomes: largest gap between per-cell mean absolute errors,
/// with the effect measured as the mutual information between cell and the
/// pooled error quartile. Null: label shuffle.
DisparityReport error_disparity(const Dataset& dataset, const AttributeSpec& attribute,
                                const AuditConfig& config);

}  // namespace biaslens::disparity
