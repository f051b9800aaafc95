#include "biaslens/disparity.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "biaslens/error.hpp"
#include "biaslens/kernels.hpp"
#include "biaslens/rng.hpp"

namespace biaslens::disparity {

std::string_view to_string(DisparityReport::Kind kind) {
  return kind == DisparityReport::Kind::outcome ? "outcome" : "error";
}

bool flag_rule(double p_value, double effect, const AuditConfig& config) {
  return p_value < config.alpha && effect >= config.effect_floor;
}

namespace {

struct SplitChoice {
  stats::SplitFilter filter;
  std::string name;
  std::optional<std::string> warning;
};

SplitChoice choose_split(const Dataset& dataset) {
  if (dataset.has_split(Split::target)) return {stats::SplitFilter::target, "target", std::nullopt};
  return {stats::SplitFilter::source, "source",
          "no target-split records; audited the source split instead"};
}

void require_two_cells(const std::map<std::string, stats::CellDistribution>& cells,
                       const std::string& attribute) {
  std::size_t occupied = 0;
  for (const auto& [cell, c] : cells)
    if (c.n > 0.0) ++occupied;
  if (occupied < 2)
    throw Error(ErrorCode::single_cell,
                fmt::format("attribute '{}' has fewer than two non-empty cells; disparity is "
                            "undefined over one group",
                            attribute));
}

stats::Table proportions(const stats::CellDistribution& c) {
  stats::Table out;
  for (const auto& [y, count] : c.counts) out[y] = c.n > 0.0 ? count / c.n : 0.0;
  return out;
}

}  // namespace

DisparityReport outcome_disparity(const Dataset& dataset, const AttributeSpec& attribute,
                                  const stats::IdealDistribution& ideal, const AuditConfig& config) {
  if (dataset.outcome_kind() != OutcomeKind::categorical)
    throw Error(ErrorCode::validation, "outcome disparity requires categorical outcomes");
  const auto split = choose_split(dataset);
  const auto mapper = stats::CellMapper::build(dataset, attribute);
  const auto support = stats::outcome_support(dataset, stats::Field::y_pred, ideal.outcomes());
  const auto observed = stats::estimate_conditional(dataset, mapper, stats::Field::y_pred,
                                                    split.filter, config.smoothing_alpha, support);
  require_two_cells(observed.cells, attribute.name);

  DisparityReport report;
  report.kind = DisparityReport::Kind::outcome;
  report.attribute = attribute.name;
  report.split_used = split.name;
  report.missing = observed.missing;
  if (split.warning) report.warnings.push_back(*split.warning);

  std::map<std::string, stats::Table> rows;
  kernels::FitProblem problem;
  double total = 0.0;
  for (const auto& [cell, c] : observed.cells) {
    if (c.n <= 0.0) continue;
    rows[cell] = ideal.row(cell, support);
    problem.records.push_back(static_cast<std::int64_t>(c.records));
    problem.weight_totals.push_back(c.n);
    std::vector<double> p;
    for (const auto& y : support) p.push_back(rows[cell].at(y));
    problem.ideal.push_back(std::move(p));
    total += c.n;
    report.per_cell_detail[cell] = {proportions(c), c.probs, rows[cell], c.n, c.records};
  }
  report.divergence = stats::llr_by_cell(observed, rows);
  report.effect_size_nats = report.divergence.statistic / (2.0 * total);
  const auto null = kernels::multinomial_null(
      problem, config.n_permutations, derive_seed(config.seed, "outcome_disparity/" + attribute.name));
  report.p_value = kernels::add_one_p_value(report.divergence.statistic, null);
  report.flagged = flag_rule(report.p_value, report.effect_size_nats, config);
  report.test = fmt::format("Monte Carlo goodness of fit, {} draws from the ideal per cell",
                            config.n_permutations);
  if (observed.missing > 0)
    report.warnings.push_back(fmt::format("{} record(s) lack attribute '{}' and were excluded",
                                          observed.missing, attribute.name));
  return report;
}

namespace {

DisparityReport categorical_error_disparity(const stats::CellAssignment& a,
                                            const stats::CellMapper& mapper,
                                            const AuditConfig& config) {
  const std::size_t k = a.n_cells;
  std::vector<int> errors;
  std::vector<double> weights;
  errors.reserve(a.records.size());
  for (const auto* r : a.records) {
    errors.push_back(stats::error_value(*r) == 0.0 ? 0 : 1);
    weights.push_back(r->weight);
  }

  DisparityReport report;
  std::vector<double> n(k, 0.0), wrong(k, 0.0);
  std::vector<std::size_t> recs(k, 0);
  double total = 0.0, total_wrong = 0.0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    const auto c = static_cast<std::size_t>(a.cells[i]);
    n[c] += weights[i];
    wrong[c] += errors[i] * weights[i];
    ++recs[c];
  }
  for (std::size_t c = 0; c < k; ++c) {
    total += n[c];
    total_wrong += wrong[c];
  }
  const double pooled = total > 0.0 ? total_wrong / total : 0.0;
  const stats::Table pooled_row = {{"0", 1.0 - pooled}, {"1", pooled}};

  report.divergence.kind = stats::DivergenceResult::Kind::llr_g;
  for (std::size_t c = 0; c < k; ++c) {
    if (n[c] <= 0.0) continue;
    const stats::Table counts = {{"0", n[c] - wrong[c]}, {"1", wrong[c]}};
    double g = 0.0;
    for (const auto& [y, o] : counts)
      if (o > 0.0) g += o * std::log(o / (n[c] * pooled_row.at(y)));
    g *= 2.0;
    const auto& cell = mapper.cells()[c];
    report.divergence.per_cell[cell] = g;
    const double alpha = config.smoothing_alpha;
    const stats::Table smoothed = {{"0", (n[c] - wrong[c] + alpha) / (n[c] + 2 * alpha)},
                                   {"1", (wrong[c] + alpha) / (n[c] + 2 * alpha)}};
    report.per_cell_detail[cell] = {{{"0", 1.0 - wrong[c] / n[c]}, {"1", wrong[c] / n[c]}},
                                    smoothed,
                                    pooled_row,
                                    n[c],
                                    recs[c]};
  }
  report.divergence.statistic = kernels::g_groups(errors, 2, a.cells, k, weights);
  report.effect_size_nats = report.divergence.statistic / (2.0 * total);
  const auto null = kernels::shuffle_null(
      a.cells, config.n_permutations, derive_seed(config.seed, "error_disparity/" + mapper.attribute()),
      [&](const std::vector<int>& perm) { return kernels::g_groups(errors, 2, perm, k, weights); });
  report.p_value = kernels::add_one_p_value(report.divergence.statistic, null);
  report.test = fmt::format("label shuffle, {} permutations", config.n_permutations);
  return report;
}

double weighted_mean_gap(const std::vector<double>& errors, const std::vector<double>& weights,
                         const std::vector<int>& cells, std::size_t k) {
  std::vector<double> sum(k, 0.0), w(k, 0.0);
  for (std::size_t i = 0; i < errors.size(); ++i) {
    sum[static_cast<std::size_t>(cells[i])] += errors[i] * weights[i];
    w[static_cast<std::size_t>(cells[i])] += weights[i];
  }
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t c = 0; c < k; ++c) {
    if (w[c] <= 0.0) continue;
    lo = std::min(lo, sum[c] / w[c]);
    hi = std::max(hi, sum[c] / w[c]);
  }
  return hi >= lo ? hi - lo : 0.0;
}

DisparityReport continuous_error_disparity(const stats::CellAssignment& a,
                                           const stats::CellMapper& mapper,
                                           const AuditConfig& config) {
  const std::size_t k = a.n_cells;
  std::vector<double> errors, weights;
  for (const auto* r : a.records) {
    errors.push_back(stats::error_value(*r));
    weights.push_back(r->weight);
  }

  DisparityReport report;
  report.divergence.kind = stats::DivergenceResult::Kind::mean_gap;
  std::vector<double> sum(k, 0.0), w(k, 0.0);
  std::vector<std::size_t> recs(k, 0);
  double pooled_sum = 0.0, pooled_w = 0.0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    const auto c = static_cast<std::size_t>(a.cells[i]);
    sum[c] += errors[i] * weights[i];
    w[c] += weights[i];
    ++recs[c];
    pooled_sum += errors[i] * weights[i];
    pooled_w += weights[i];
  }
  const double pooled = pooled_w > 0.0 ? pooled_sum / pooled_w : 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (w[c] <= 0.0) continue;
    const auto& cell = mapper.cells()[c];
    report.divergence.per_cell[cell] = sum[c] / w[c];
    report.per_cell_detail[cell] = {{{"mean_abs_error", sum[c] / w[c]}},
                                    {},
                                    {{"mean_abs_error", pooled}},
                                    w[c],
                                    recs[c]};
  }
  report.divergence.statistic = weighted_mean_gap(errors, weights, a.cells, k);

  // Effect: mutual information (nats) between cell and pooled error quartile.
  const auto cuts = stats::quantile_cuts(errors, 4);
  std::vector<int> quartile;
  quartile.reserve(errors.size());
  for (double e : errors)
    quartile.push_back(static_cast<int>(std::upper_bound(cuts.begin(), cuts.end(), e) - cuts.begin()));
  report.effect_size_nats =
      kernels::g_groups(quartile, cuts.size() + 1, a.cells, k, weights) / (2.0 * pooled_w);

  const auto null = kernels::shuffle_null(
      a.cells, config.n_permutations, derive_seed(config.seed, "error_disparity/" + mapper.attribute()),
      [&](const std::vector<int>& perm) { return weighted_mean_gap(errors, weights, perm, k); });
  report.p_value = kernels::add_one_p_value(report.divergence.statistic, null);
  report.test = fmt::format("label shuffle on the largest per-cell mean absolute error gap, {} "
                            "permutations",
                            config.n_permutations);
  return report;
}

}  // namespace

DisparityReport error_disparity(const Dataset& dataset, const AttributeSpec& attribute,
                                const AuditConfig& config) {
  const auto split = choose_split(dataset);
  const auto mapper = stats::CellMapper::build(dataset, attribute);
  const auto a = stats::assign_cells(dataset, mapper, split.filter);
  if (a.records.empty())
    throw Error(ErrorCode::empty_distribution,
                fmt::format("no records with attribute '{}' in the {} split", attribute.name, split.name));
  if (std::set<int>(a.cells.begin(), a.cells.end()).size() < 2)
    throw Error(ErrorCode::single_cell,
                fmt::format("attribute '{}' has fewer than two non-empty cells; disparity is "
                            "undefined over one group",
                            attribute.name));

  auto report = dataset.outcome_kind() == OutcomeKind::categorical
                    ? categorical_error_disparity(a, mapper, config)
                    : continuous_error_disparity(a, mapper, config);
  report.kind = DisparityReport::Kind::error;
  report.attribute = attribute.name;
  report.split_used = split.name;
  report.missing = a.missing;
  if (split.warning) report.warnings.push_back(*split.warning);
  if (a.missing > 0)
    report.warnings.push_back(fmt::format("{} record(s) lack attribute '{}' and were excluded",
                                          a.missing, attribute.name));
  report.flagged = flag_rule(report.p_value, report.effect_size_nats, config);
  return report;
}

}  // namespace biaslens::disparity
