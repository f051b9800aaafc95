#include "biaslens/origins.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "biaslens/disparity.hpp"
#include "biaslens/error.hpp"
#include "biaslens/kernels.hpp"
#include "biaslens/rng.hpp"

namespace biaslens::origins {

const char* const kCaveat =
    "A flag means the data are consistent with this origin of bias. It does not establish that "
    "this origin caused the observed disparity; origins can co-occur and confound one another.";

std::string_view to_string(Origin origin) {
  switch (origin) {
    case Origin::label_bias: return "label_bias";
    case Origin::selection_bias: return "selection_bias";
    case Origin::overamplification: return "overamplification";
    case Origin::semantic_bias: return "semantic_bias";
  }
  return "unknown";
}

namespace {

stats::SplitFilter source_filter(const Dataset& d) {
  return d.has_split(Split::source) ? stats::SplitFilter::source : stats::SplitFilter::both;
}

std::string pct(double x) { return fmt::format("{:.4f}", x); }

}  // namespace

// ---------------------------------------------------------------------------
// Selection

OriginFinding selection_bias_check(const Dataset& source, const TargetReference& target,
                                   const AttributeSpec& attribute, const AuditConfig& config,
                                   const stats::WeightAssignment* weights) {
  if (!target.present())
    throw Error(ErrorCode::missing_reference,
                "selection check needs a target reference dataset or an explicit attribute marginal");
  const auto mapper = stats::CellMapper::build(source, attribute);
  const auto src = stats::attribute_marginal(source, mapper, source_filter(source), weights);
  if (src.total <= 0.0)
    throw Error(ErrorCode::empty_distribution,
                fmt::format("source has no records with attribute '{}'", attribute.name));

  std::optional<stats::Marginal> tgt_counts;
  stats::Table tgt;
  if (target.dataset) {
    tgt_counts = stats::attribute_marginal(*target.dataset, mapper, stats::SplitFilter::both);
    if (tgt_counts->total <= 0.0)
      throw Error(ErrorCode::empty_distribution,
                  fmt::format("target reference has no records with attribute '{}'", attribute.name));
    tgt = tgt_counts->probabilities();
  } else {
    tgt = stats::normalize(*target.marginal);
  }

  // Align cell sets; the target may name cells the source never saw.
  stats::Table q = src.probabilities();
  for (const auto& [cell, p] : tgt) q.emplace(cell, 0.0);
  for (const auto& [cell, p] : q) tgt.emplace(cell, 0.0);
  std::vector<std::string> unsupported;
  for (const auto& [cell, p] : q)
    if (p > 0.0 && tgt.at(cell) <= 0.0) unsupported.push_back(cell);
  if (!unsupported.empty())
    throw Error(ErrorCode::support_mismatch,
                fmt::format("source cells with no target mass for attribute '{}': [{}]",
                            attribute.name, fmt::join(unsupported, ", ")));

  OriginFinding f;
  f.origin = Origin::selection_bias;
  f.divergence.kind = stats::DivergenceResult::Kind::kl;
  for (const auto& [cell, qc] : q) {
    const double term = qc > 0.0 ? qc * std::log(qc / tgt.at(cell)) : 0.0;
    f.divergence.per_cell[cell] = term;
    f.divergence.statistic += term;
    f.detail[cell] = {{"source", qc}, {"target", tgt.at(cell)}, {"source_n", src.counts.count(cell) ? src.counts.at(cell) : 0.0}};
  }
  f.effect_size_nats = f.divergence.statistic;

  // Per-cell record counts for the null; weights enter as a per-cell scale.
  std::map<std::string, std::size_t> src_records;
  for (const auto& r : source.records()) {
    if (!stats::split_matches(r.split, source_filter(source))) continue;
    if (auto cell = mapper.cell_of(r)) ++src_records[*cell];
  }
  const auto stream = derive_seed(config.seed, "selection_bias/" + attribute.name);
  double g = 0.0;
  std::vector<double> null;
  if (tgt_counts) {
    std::map<std::string, std::size_t> tgt_records;
    for (const auto& r : target.dataset->records())
      if (auto cell = mapper.cell_of(r)) ++tgt_records[*cell];
    kernels::MembershipProblem problem;
    for (const auto& [cell, qc] : q) {
      const auto a = src_records.count(cell) ? src_records[cell] : 0;
      const auto b = tgt_records.count(cell) ? tgt_records[cell] : 0;
      problem.group_a.push_back(static_cast<std::int64_t>(a));
      problem.group_b.push_back(static_cast<std::int64_t>(b));
      const double wa = src.counts.count(cell) ? src.counts.at(cell) : 0.0;
      const double wb = tgt_counts->counts.count(cell) ? tgt_counts->counts.at(cell) : 0.0;
      problem.scale_a.push_back(a > 0 ? wa / static_cast<double>(a) : 1.0);
      problem.scale_b.push_back(b > 0 ? wb / static_cast<double>(b) : 1.0);
    }
    g = kernels::membership_statistic(problem, problem.group_a);
    null = kernels::membership_null(problem, config.n_permutations, stream);
    f.test = fmt::format("source/target membership reassignment (hypergeometric), {} draws",
                         config.n_permutations);
  } else {
    kernels::FitProblem problem;
    problem.records.push_back(static_cast<std::int64_t>(src.records));
    problem.weight_totals.push_back(src.total);
    std::vector<double> p, observed;
    for (const auto& [cell, qc] : q) {
      p.push_back(tgt.at(cell));
      observed.push_back(src.counts.count(cell) ? src.counts.at(cell) : 0.0);
    }
    problem.ideal.push_back(p);
    g = kernels::g_fit(observed, p);
    null = kernels::multinomial_null(problem, config.n_permutations, stream);
    f.test = fmt::format("Monte Carlo goodness of fit to the target marginal, {} draws",
                         config.n_permutations);
  }
  f.p_value = kernels::add_one_p_value(g, null);
  f.flagged = disparity::flag_rule(f.p_value, f.effect_size_nats, config);
  f.detail["g_statistic"] = g;

  std::vector<std::string> parts;
  for (const auto& [cell, qc] : q)
    parts.push_back(fmt::format("{} {} vs {}", cell, pct(qc), pct(tgt.at(cell))));
  f.evidence = fmt::format("attribute '{}' source vs target marginal: {}; KL {:.6g} nats, G {:.6g}, p {:.4g}",
                           attribute.name, fmt::join(parts, ", "), f.divergence.statistic, g,
                           f.p_value);
  if (src.missing > 0)
    f.warnings.push_back(fmt::format("{} source record(s) lack attribute '{}'", src.missing,
                                     attribute.name));
  return f;
}

// ---------------------------------------------------------------------------
// Label

OriginFinding label_bias_check(const Dataset& source, const stats::IdealDistribution* trusted,
                               const AttributeSpec& attribute, const AuditConfig& config) {
  if (!trusted)
    throw Error(ErrorCode::missing_reference,
                "label bias cannot be detected from the labeled sample alone; supply a trusted "
                "reference (explicit table or expert-labeled dataset) for P(Y | A)");
  if (source.outcome_kind() != OutcomeKind::categorical)
    throw Error(ErrorCode::validation, "label bias check requires categorical outcomes");
  const auto mapper = stats::CellMapper::build(source, attribute);
  const auto support = stats::outcome_support(source, stats::Field::y_true, trusted->outcomes());
  const auto observed = stats::estimate_conditional(source, mapper, stats::Field::y_true,
                                                    source_filter(source), config.smoothing_alpha,
                                                    support);
  OriginFinding f;
  f.origin = Origin::label_bias;
  std::map<std::string, stats::Table> rows;
  kernels::FitProblem problem;
  double total = 0.0;
  std::vector<std::string> parts;
  for (const auto& [cell, c] : observed.cells) {
    if (c.n <= 0.0) continue;
    rows[cell] = trusted->row(cell, support);
    std::vector<double> p;
    nlohmann::json cell_detail;
    for (const auto& y : support) {
      p.push_back(rows[cell].at(y));
      cell_detail[y] = {{"observed", c.counts.at(y) / c.n}, {"reference", rows[cell].at(y)}};
    }
    f.detail[cell] = cell_detail;
    problem.records.push_back(static_cast<std::int64_t>(c.records));
    problem.weight_totals.push_back(c.n);
    problem.ideal.push_back(std::move(p));
    total += c.n;
    const auto& first = support.back();
    parts.push_back(fmt::format("{} P({}) {} vs {}", cell, first, pct(c.counts.at(first) / c.n),
                                pct(rows[cell].at(first))));
  }
  f.divergence = stats::llr_by_cell(observed, rows);
  f.effect_size_nats = f.divergence.statistic / (2.0 * total);
  const auto null = kernels::multinomial_null(
      problem, config.n_permutations, derive_seed(config.seed, "label_bias/" + attribute.name));
  f.p_value = kernels::add_one_p_value(f.divergence.statistic, null);
  f.flagged = disparity::flag_rule(f.p_value, f.effect_size_nats, config);
  f.test = fmt::format("Monte Carlo goodness of fit to the trusted reference, {} draws",
                       config.n_permutations);
  f.evidence = fmt::format("attribute '{}' gold labels vs trusted reference: {}; G {:.6g}, effect "
                           "{:.6g} nats, p {:.4g}",
                           attribute.name, fmt::join(parts, ", "), f.divergence.statistic,
                           f.effect_size_nats, f.p_value);
  return f;
}

// ---------------------------------------------------------------------------
// Overamplification

namespace {

double total_variation(const stats::Table& a, const stats::Table& b) {
  double tv = 0.0;
  for (const auto& [y, p] : a) tv += std::abs(p - b.at(y));
  return tv / 2.0;
}

std::string direction_of(double amplification) {
  if (amplification > 1e-12) return "amplified";
  if (amplification < -1e-12) return "attenuated";
  return "unchanged";
}

}  // namespace

OriginFinding overamplification_check(const Dataset& dataset, const AttributeSpec& attribute,
                                      const AuditConfig& config) {
  if (dataset.outcome_kind() != OutcomeKind::categorical)
    throw Error(ErrorCode::validation, "overamplification check requires categorical outcomes");
  if (!dataset.has_split(Split::source))
    throw Error(ErrorCode::empty_distribution, "overamplification check: source split is empty");
  const auto mapper = stats::CellMapper::build(dataset, attribute);
  const auto support = stats::outcome_support(dataset, stats::Field::y_true);
  const std::size_t k = support.size();
  const auto a = stats::assign_cells(dataset, mapper, stats::SplitFilter::source);
  if (a.records.empty())
    throw Error(ErrorCode::empty_distribution,
                fmt::format("no source records with attribute '{}'", attribute.name));

  auto label_index = [&](const OutcomeValue& v) {
    const auto& s = std::get<std::string>(v);
    return static_cast<std::size_t>(std::lower_bound(support.begin(), support.end(), s) -
                                    support.begin());
  };
  kernels::PairedProblem problem;
  problem.support = k;
  std::vector<std::vector<std::int64_t>> pairs(a.n_cells, std::vector<std::int64_t>(k * k, 0));
  std::vector<double> w(a.n_cells, 0.0);
  std::vector<std::size_t> recs(a.n_cells, 0);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto c = static_cast<std::size_t>(a.cells[i]);
    ++pairs[c][label_index(a.records[i]->y_true) * k + label_index(a.records[i]->y_pred)];
    w[c] += a.records[i]->weight;
    ++recs[c];
  }
  std::vector<std::string> cell_names;
  for (std::size_t c = 0; c < a.n_cells; ++c) {
    if (recs[c] == 0) continue;
    problem.pairs.push_back(pairs[c]);
    problem.scale.push_back(w[c] / static_cast<double>(recs[c]));
    cell_names.push_back(mapper.cells()[c]);
  }

  OriginFinding f;
  f.origin = Origin::overamplification;
  f.divergence.kind = stats::DivergenceResult::Kind::llr_g;

  // Pooled gold-label distribution: the reference point for "amplified".
  stats::Table pooled;
  for (const auto& y : support) pooled[y] = 0.0;
  double total = 0.0;
  std::vector<stats::Table> true_rows, pred_rows;
  std::vector<double> cell_n;
  for (std::size_t j = 0; j < problem.pairs.size(); ++j) {
    stats::Table t, p;
    for (const auto& y : support) t[y] = p[y] = 0.0;
    for (std::size_t x = 0; x < k; ++x)
      for (std::size_t y = 0; y < k; ++y) {
        const double cnt = static_cast<double>(problem.pairs[j][x * k + y]) * problem.scale[j];
        t[support[x]] += cnt;
        p[support[y]] += cnt;
      }
    double n = 0.0;
    for (const auto& [y, v] : t) n += v;
    for (const auto& [y, v] : t) pooled[y] += v;
    total += n;
    true_rows.push_back(t);
    pred_rows.push_back(p);
    cell_n.push_back(n);
  }
  for (auto& [y, v] : pooled) v /= total;

  const double alpha = config.smoothing_alpha;
  double effect = 0.0, amplification = 0.0;
  std::vector<std::string> parts;
  for (std::size_t j = 0; j < problem.pairs.size(); ++j) {
    const double n = cell_n[j];
    stats::Table ts, ps, tr, pr;
    for (const auto& y : support) {
      ts[y] = (true_rows[j][y] + alpha) / (n + alpha * static_cast<double>(k));
      ps[y] = (pred_rows[j][y] + alpha) / (n + alpha * static_cast<double>(k));
      tr[y] = true_rows[j][y] / n;
      pr[y] = pred_rows[j][y] / n;
    }
    effect += n * stats::kl_divergence(ps, ts);
    const double cell_amp = total_variation(pr, pooled) - total_variation(tr, pooled);
    amplification += n * cell_amp;

    std::vector<double> table(2 * k);
    for (std::size_t x = 0; x < k; ++x) {
      table[x] = true_rows[j][support[x]];
      table[k + x] = pred_rows[j][support[x]];
    }
    const double g = kernels::g_independence(table, 2, k);
    f.divergence.per_cell[cell_names[j]] = g;

    nlohmann::json gaps = nlohmann::json::object();
    for (const auto& y : support) gaps[y] = pr[y] - tr[y];
    f.detail[cell_names[j]] = {{"n", n}, {"signed_gap", gaps}, {"direction", direction_of(cell_amp)}};
    const auto& shown = support.back();
    parts.push_back(fmt::format("{} P({}) gold {} predicted {} ({:+.4f})", cell_names[j], shown,
                                pct(tr[shown]), pct(pr[shown]), pr[shown] - tr[shown]));
  }
  f.divergence.statistic = kernels::paired_statistic(problem, problem.pairs);
  f.effect_size_nats = effect / total;
  f.direction = direction_of(amplification / total);
  const auto null = kernels::paired_swap_null(
      problem, config.n_permutations, derive_seed(config.seed, "overamplification/" + attribute.name));
  f.p_value = kernels::add_one_p_value(f.divergence.statistic, null);
  f.flagged = disparity::flag_rule(f.p_value, f.effect_size_nats, config);
  f.test = fmt::format("paired label swap, {} draws", config.n_permutations);
  f.evidence = fmt::format("attribute '{}': {}; direction {}; G {:.6g}, effect {:.6g} nats, p {:.4g}",
                           attribute.name, fmt::join(parts, ", "), *f.direction,
                           f.divergence.statistic, f.effect_size_nats, f.p_value);
  return f;
}

// ---------------------------------------------------------------------------
// Diagnosis

std::vector<Origin> table_cell(bool selection_flagged, bool label_flagged) {
  std::vector<Origin> cell;
  if (selection_flagged) cell.push_back(Origin::selection_bias);
  if (label_flagged) cell.push_back(Origin::label_bias);
  return cell;
}

std::string cell_label(const std::vector<Origin>& cell) {
  const bool sel = std::find(cell.begin(), cell.end(), Origin::selection_bias) != cell.end();
  const bool lab = std::find(cell.begin(), cell.end(), Origin::label_bias) != cell.end();
  if (sel && lab) return "selection bias, label bias";
  if (sel) return "selection bias";
  if (lab) return "label bias";
  return "no bias";
}

std::vector<Origin> DiagnosisMatrix::flagged_origins() const {
  std::vector<Origin> out;
  if (label && label->flagged) out.push_back(Origin::label_bias);
  if (selection && selection->flagged) out.push_back(Origin::selection_bias);
  if (overamplification && overamplification->flagged) out.push_back(Origin::overamplification);
  for (const auto& s : semantic)
    if (s.flagged) {
      out.push_back(Origin::semantic_bias);
      break;
    }
  return out;
}

DiagnosisMatrix diagnose(const Dataset& source, const TargetReference& target,
                         const stats::IdealDistribution* trusted, const AttributeSpec& attribute,
                         const AuditConfig& config, std::vector<OriginFinding> semantic) {
  DiagnosisMatrix m;
  m.attribute = attribute.name;
  if (target.present()) {
    m.selection = selection_bias_check(source, target, attribute, config);
    m.representative = !m.selection->flagged;
  } else {
    m.notes.push_back("selection check not run: no target reference supplied");
  }
  if (trusted) {
    m.label = label_bias_check(source, trusted, attribute, config);
    m.correct_annotation = !m.label->flagged;
  } else {
    m.notes.push_back("label check not run: label bias needs a trusted reference");
  }
  if (source.outcome_kind() == OutcomeKind::categorical)
    m.overamplification = overamplification_check(source, attribute, config);
  else
    m.notes.push_back("overamplification check not run: outcomes are continuous");
  m.semantic = std::move(semantic);
  m.table_cell = table_cell(m.selection && m.selection->flagged, m.label && m.label->flagged);
  m.cell_label = cell_label(m.table_cell);
  return m;
}

}  // namespace biaslens::origins
