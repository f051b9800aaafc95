#include "biaslens/stats.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "biaslens/error.hpp"
#include "biaslens/kernels.hpp"
#include "biaslens/rng.hpp"

namespace biaslens::stats {

std::string_view to_string(Field field) {
  switch (field) {
    case Field::y_true: return "y_true";
    case Field::y_pred: return "y_pred";
    case Field::error: return "error";
  }
  return "unknown";
}

bool split_matches(Split split, SplitFilter filter) {
  switch (filter) {
    case SplitFilter::source: return split == Split::source;
    case SplitFilter::target: return split == Split::target;
    case SplitFilter::both: return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Cells

AttributeSpec resolve_attribute(const Dataset& dataset, const AuditConfig& config,
                                const std::string& name) {
  const AttributeSpec* spec = dataset.find_attribute(name);
  if (!spec)
    throw Error(ErrorCode::missing_attribute,
                fmt::format("attribute '{}' does not occur in the dataset", name));
  AttributeSpec out = *spec;
  if (auto it = config.binning.find(name); it != config.binning.end()) out.binning = it->second;
  return out;
}

std::vector<double> quantile_cuts(std::vector<double> values, int n_bins) {
  std::vector<double> cuts;
  if (values.empty() || n_bins <= 1) return cuts;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const auto k = static_cast<std::size_t>(n_bins);
  for (std::size_t j = 1; j < k; ++j) {
    const double c = values[j * n / k];
    if (c > values.front() && (cuts.empty() || c > cuts.back())) cuts.push_back(c);
  }
  return cuts;
}

namespace {

std::string bin_label(std::size_t index, std::size_t count, const std::string& lo,
                      const std::string& hi, bool closed_right) {
  const int width = std::max<int>(2, static_cast<int>(fmt::format("{}", count - 1).size()));
  return fmt::format("{:0{}}:[{},{}{}", index, width, lo, hi, closed_right ? "]" : ")");
}

}  // namespace

CellMapper CellMapper::build(const Dataset& dataset, const AttributeSpec& spec) {
  CellMapper m;
  m.attribute_ = spec.name;
  m.kind_ = spec.kind;
  if (spec.kind == AttributeKind::categorical) {
    if (spec.binning)
      throw Error(ErrorCode::validation,
                  fmt::format("categorical attribute '{}' must not be binned", spec.name));
    std::set<std::string> seen;
    for (const auto& r : dataset.records())
      if (auto it = r.attrs.find(spec.name); it != r.attrs.end())
        seen.insert(std::get<std::string>(it->second));
    m.cells_.assign(seen.begin(), seen.end());
    return m;
  }

  if (!spec.binning)
    throw Error(ErrorCode::validation,
                fmt::format("continuous attribute '{}' needs a binning spec", spec.name));
  const auto& b = *spec.binning;
  if (b.strategy == Binning::Strategy::quantile) {
    std::vector<double> values;
    for (const auto& r : dataset.records())
      if (auto it = r.attrs.find(spec.name); it != r.attrs.end())
        values.push_back(std::get<double>(it->second));
    m.cuts_ = quantile_cuts(values, b.n_bins);
    const std::size_t count = m.cuts_.size() + 1;
    for (std::size_t i = 0; i < count; ++i) {
      const std::string lo = i == 0 ? "-inf" : fmt::format("{}", m.cuts_[i - 1]);
      const std::string hi = i + 1 == count ? "inf" : fmt::format("{}", m.cuts_[i]);
      m.cells_.push_back(bin_label(i, count, lo, hi, false));
    }
  } else {
    m.cuts_.assign(b.edges.begin() + 1, b.edges.end() - 1);
    const std::size_t count = b.edges.size() - 1;
    for (std::size_t i = 0; i < count; ++i)
      m.cells_.push_back(bin_label(i, count, fmt::format("{}", b.edges[i]),
                                   fmt::format("{}", b.edges[i + 1]), i + 1 == count));
  }
  return m;
}

std::size_t CellMapper::bin_of(double x) const {
  return static_cast<std::size_t>(std::upper_bound(cuts_.begin(), cuts_.end(), x) - cuts_.begin());
}

std::optional<std::string> CellMapper::cell_of(const PredictionRecord& record) const {
  auto it = record.attrs.find(attribute_);
  if (it == record.attrs.end()) return std::nullopt;
  if (kind_ == AttributeKind::categorical) {
    if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
    throw Error(ErrorCode::validation,
                fmt::format("record '{}': attribute '{}' is not categorical", record.id, attribute_));
  }
  const auto* x = std::get_if<double>(&it->second);
  if (!x)
    throw Error(ErrorCode::validation,
                fmt::format("record '{}': attribute '{}' is not continuous", record.id, attribute_));
  return cells_[bin_of(*x)];
}

std::optional<std::size_t> CellMapper::index_of(const PredictionRecord& record) const {
  auto it = record.attrs.find(attribute_);
  if (it == record.attrs.end()) return std::nullopt;
  if (kind_ == AttributeKind::continuous) {
    const auto* x = std::get_if<double>(&it->second);
    if (!x) return std::nullopt;
    return bin_of(*x);
  }
  const auto* s = std::get_if<std::string>(&it->second);
  if (!s) return std::nullopt;
  auto pos = std::lower_bound(cells_.begin(), cells_.end(), *s);
  if (pos == cells_.end() || *pos != *s) return std::nullopt;
  return static_cast<std::size_t>(pos - cells_.begin());
}

std::size_t CellMapper::index_of_label(const std::string& label) const {
  auto pos = std::find(cells_.begin(), cells_.end(), label);
  if (pos == cells_.end())
    throw Error(ErrorCode::validation,
                fmt::format("attribute '{}' has no cell '{}'", attribute_, label));
  return static_cast<std::size_t>(pos - cells_.begin());
}

// ---------------------------------------------------------------------------
// Estimation

namespace {

std::string field_label(const PredictionRecord& r, Field field) {
  switch (field) {
    case Field::y_true: return std::get<std::string>(r.y_true);
    case Field::y_pred: return std::get<std::string>(r.y_pred);
    case Field::error: return error_value(r) == 0.0 ? "0" : "1";
  }
  return {};
}

double cell_multiplier(const WeightAssignment* weights, const std::string& cell) {
  if (!weights) return 1.0;
  auto it = weights->weights.find(cell);
  return it == weights->weights.end() ? 1.0 : it->second;
}

}  // namespace

std::vector<std::string> outcome_support(const Dataset& dataset, Field field,
                                         const std::vector<std::string>& extra) {
  std::set<std::string> s(extra.begin(), extra.end());
  if (field == Field::error) {
    s.insert("0");
    s.insert("1");
  } else if (dataset.outcome_kind() == OutcomeKind::categorical) {
    for (const auto& r : dataset.records()) {
      s.insert(std::get<std::string>(r.y_true));
      s.insert(std::get<std::string>(r.y_pred));
    }
  }
  return {s.begin(), s.end()};
}

ConditionalDistribution estimate_conditional(const Dataset& dataset, const CellMapper& mapper,
                                             Field field, SplitFilter split, double alpha,
                                             const std::vector<std::string>& support,
                                             const WeightAssignment* weights) {
  if (field != Field::error && dataset.outcome_kind() != OutcomeKind::categorical)
    throw Error(ErrorCode::validation,
                fmt::format("{} distribution requires categorical outcomes", to_string(field)));
  if (alpha < 0.0) throw Error(ErrorCode::validation, "smoothing alpha must be >= 0");

  ConditionalDistribution d;
  d.attribute = mapper.attribute();
  d.field = field;
  d.smoothing_alpha = alpha;
  d.support = support.empty() ? outcome_support(dataset, field) : support;
  std::set<std::string> support_set(d.support.begin(), d.support.end());

  Table zero;
  for (const auto& y : d.support) zero[y] = 0.0;
  for (const auto& cell : mapper.cells()) d.cells[cell].counts = zero;

  std::size_t used = 0;
  for (const auto& r : dataset.records()) {
    if (!split_matches(r.split, split)) continue;
    const auto cell = mapper.cell_of(r);
    if (!cell) {
      ++d.missing;
      continue;
    }
    const auto y = field_label(r, field);
    if (!support_set.count(y))
      throw Error(ErrorCode::support_mismatch,
                  fmt::format("outcome '{}' of record '{}' is outside the support", y, r.id));
    auto& c = d.cells[*cell];
    if (c.counts.empty()) c.counts = zero;
    const double w = r.weight * cell_multiplier(weights, *cell);
    c.counts[y] += w;
    c.n += w;
    ++c.records;
    ++used;
  }
  if (used == 0)
    throw Error(ErrorCode::empty_distribution,
                fmt::format("no records with attribute '{}' in the selected split", d.attribute));

  const double k = static_cast<double>(d.support.size());
  for (auto& [cell, c] : d.cells) {
    if (c.n <= 0.0 && alpha == 0.0) continue;
    for (const auto& [y, count] : c.counts) c.probs[y] = (count + alpha) / (c.n + alpha * k);
  }
  return d;
}

ConditionalDistribution estimate_conditional(const Dataset& dataset, const AttributeSpec& attribute,
                                             Field field, SplitFilter split, double alpha) {
  if (!dataset.find_attribute(attribute.name))
    throw Error(ErrorCode::missing_attribute,
                fmt::format("attribute '{}' does not occur in the dataset", attribute.name));
  return estimate_conditional(dataset, CellMapper::build(dataset, attribute), field, split, alpha);
}

Table Marginal::probabilities() const { return normalize(counts); }

Marginal attribute_marginal(const Dataset& dataset, const CellMapper& mapper, SplitFilter split,
                            const WeightAssignment* weights) {
  Marginal m;
  for (const auto& cell : mapper.cells()) m.counts[cell] = 0.0;
  for (const auto& r : dataset.records()) {
    if (!split_matches(r.split, split)) continue;
    const auto cell = mapper.cell_of(r);
    if (!cell) {
      ++m.missing;
      continue;
    }
    const double w = r.weight * cell_multiplier(weights, *cell);
    m.counts[*cell] += w;
    m.total += w;
    ++m.records;
  }
  return m;
}

Table normalize(const Table& counts) {
  double total = 0.0;
  for (const auto& [k, v] : counts) total += v;
  if (total <= 0.0) throw Error(ErrorCode::empty_distribution, "cannot normalize an empty table");
  Table out;
  for (const auto& [k, v] : counts) out[k] = v / total;
  return out;
}

// ---------------------------------------------------------------------------
// Ideals

IdealDistribution IdealDistribution::explicit_table(std::map<std::string, Table> table) {
  for (const auto& [cell, row] : table) {
    double total = 0.0;
    for (const auto& [y, p] : row) {
      if (!(p >= 0.0 && p <= 1.0))
        throw Error(ErrorCode::validation,
                    fmt::format("ideal probability for cell '{}' outcome '{}' outside [0,1]", cell, y));
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw Error(ErrorCode::validation,
                  fmt::format("ideal row for cell '{}' sums to {}, not 1", cell, total));
  }
  IdealDistribution d;
  d.kind_ = Kind::explicit_table;
  d.table_ = std::move(table);
  return d;
}

IdealDistribution IdealDistribution::uniform() { return IdealDistribution{}; }

IdealDistribution IdealDistribution::empirical_from(const Dataset& reference, const CellMapper& mapper,
                                                    Field field, double smoothing) {
  if (reference.empty())
    throw Error(ErrorCode::unresolvable_ideal, "empirical ideal: reference dataset is empty");
  ConditionalDistribution cond;
  try {
    cond = estimate_conditional(reference, mapper, field, SplitFilter::both, smoothing,
                                outcome_support(reference, field));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::empty_distribution)
      throw Error(ErrorCode::unresolvable_ideal, fmt::format("empirical ideal: {}", e.what()));
    throw;
  }
  IdealDistribution d;
  d.kind_ = Kind::empirical;
  for (const auto& [cell, c] : cond.cells)
    if (!c.probs.empty()) d.table_[cell] = c.probs;
  return d;
}

IdealDistribution IdealDistribution::toward_uniform(const IdealDistribution& base, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw Error(ErrorCode::validation, "toward_uniform lambda must lie in [0, 1]");
  IdealDistribution d;
  d.kind_ = Kind::toward_uniform;
  d.lambda_ = lambda;
  d.base_ = std::make_shared<const IdealDistribution>(base);
  return d;
}

std::vector<std::string> IdealDistribution::outcomes() const {
  if (kind_ == Kind::toward_uniform) return base_->outcomes();
  std::set<std::string> s;
  for (const auto& [cell, row] : table_)
    for (const auto& [y, p] : row) s.insert(y);
  return {s.begin(), s.end()};
}

Table IdealDistribution::row(const std::string& cell, const std::vector<std::string>& support) const {
  if (support.empty()) throw Error(ErrorCode::empty_distribution, "ideal row over an empty support");
  const double k = static_cast<double>(support.size());
  Table out;
  switch (kind_) {
    case Kind::uniform:
      for (const auto& y : support) out[y] = 1.0 / k;
      return out;
    case Kind::explicit_table:
    case Kind::empirical: {
      auto it = table_.find(cell);
      if (it == table_.end()) it = table_.find("*");
      if (it == table_.end())
        throw Error(ErrorCode::unresolvable_ideal,
                    fmt::format("ideal distribution has no row for cell '{}'", cell));
      for (const auto& y : support) {
        auto jt = it->second.find(y);
        out[y] = jt == it->second.end() ? 0.0 : jt->second;
      }
      return out;
    }
    case Kind::toward_uniform: {
      out = base_->row(cell, support);
      if (lambda_ == 0.0) return out;
      if (lambda_ == 1.0) {
        for (auto& [y, p] : out) p = 1.0 / k;
        return out;
      }
      for (auto& [y, p] : out) p = (1.0 - lambda_) * p + lambda_ / k;
      return out;
    }
  }
  return out;
}

IdealDistribution resolve_ideal(const IdealSpec& spec, const CellMapper& mapper, const Dataset& source,
                                const Dataset* target_ref, const Dataset* trusted_ref) {
  switch (spec.type) {
    case IdealSpec::Type::uniform: return IdealDistribution::uniform();
    case IdealSpec::Type::explicit_table: return IdealDistribution::explicit_table(spec.table);
    case IdealSpec::Type::toward_uniform:
      if (!spec.base) throw Error(ErrorCode::validation, "toward_uniform ideal needs a base");
      return IdealDistribution::toward_uniform(
          resolve_ideal(*spec.base, mapper, source, target_ref, trusted_ref), spec.lambda);
    case IdealSpec::Type::empirical: {
      const Dataset* ref = &source;
      if (spec.from == "target_ref") ref = target_ref;
      if (spec.from == "trusted_ref") ref = trusted_ref;
      if (!ref)
        throw Error(ErrorCode::unresolvable_ideal,
                    fmt::format("empirical ideal refers to '{}', which was not supplied", spec.from));
      const Field field = spec.field == "y_pred" ? Field::y_pred : Field::y_true;
      return IdealDistribution::empirical_from(*ref, mapper, field, spec.smoothing);
    }
  }
  return IdealDistribution::uniform();
}

// ---------------------------------------------------------------------------
// Divergences

std::string_view to_string(DivergenceResult::Kind kind) {
  switch (kind) {
    case DivergenceResult::Kind::kl: return "kl";
    case DivergenceResult::Kind::llr_g: return "llr_g";
    case DivergenceResult::Kind::mean_gap: return "mean_gap";
    case DivergenceResult::Kind::weat_d: return "weat_d";
  }
  return "unknown";
}

double kl_divergence(const Table& q, const Table& p) {
  std::vector<std::string> only_q, only_p;
  for (const auto& [y, v] : q)
    if (!p.count(y)) only_q.push_back(y);
  for (const auto& [y, v] : p)
    if (!q.count(y)) only_p.push_back(y);
  if (!only_q.empty() || !only_p.empty())
    throw Error(ErrorCode::support_mismatch,
                fmt::format("tables differ in support (only in q: [{}]; only in p: [{}])",
                            fmt::join(only_q, ", "), fmt::join(only_p, ", ")));
  double kl = 0.0;
  for (const auto& [y, qy] : q) {
    if (qy <= 0.0) continue;
    const double py = p.at(y);
    if (py <= 0.0)
      throw Error(ErrorCode::infinite_divergence,
                  fmt::format("p('{}') = 0 where q('{}') = {} (unsmoothed input?)", y, y, qy));
    kl += qy * std::log(qy / py);
  }
  return kl;
}

DivergenceResult llr_statistic(const Table& observed_counts, const Table& ideal) {
  double n = 0.0;
  for (const auto& [y, o] : observed_counts) {
    if (o < 0.0) throw Error(ErrorCode::validation, "observed counts must be non-negative");
    n += o;
  }
  if (n <= 0.0) throw Error(ErrorCode::empty_distribution, "llr statistic over zero observations");
  DivergenceResult r;
  r.kind = DivergenceResult::Kind::llr_g;
  double g = 0.0;
  for (const auto& [y, o] : observed_counts) {
    if (o <= 0.0) continue;
    auto it = ideal.find(y);
    const double p = it == ideal.end() ? 0.0 : it->second;
    if (p <= 0.0)
      throw Error(ErrorCode::infinite_divergence,
                  fmt::format("ideal assigns zero probability to observed outcome '{}'", y));
    g += o * std::log(o / (n * p));
  }
  r.statistic = 2.0 * g;
  return r;
}

DivergenceResult llr_by_cell(const ConditionalDistribution& observed,
                             const std::map<std::string, Table>& ideal_rows) {
  DivergenceResult r;
  r.kind = DivergenceResult::Kind::llr_g;
  for (const auto& [cell, c] : observed.cells) {
    if (c.n <= 0.0) continue;
    auto it = ideal_rows.find(cell);
    if (it == ideal_rows.end())
      throw Error(ErrorCode::unresolvable_ideal, fmt::format("no ideal row for cell '{}'", cell));
    const double g = llr_statistic(c.counts, it->second).statistic;
    r.per_cell[cell] = g;
    r.statistic += g;
  }
  return r;
}

double error_value(const PredictionRecord& r) {
  if (const auto* t = std::get_if<std::string>(&r.y_true))
    return *t == std::get<std::string>(r.y_pred) ? 0.0 : 1.0;
  return std::abs(std::get<double>(r.y_true) - std::get<double>(r.y_pred));
}

std::vector<double> error_values(const Dataset& dataset) {
  if (dataset.empty()) throw Error(ErrorCode::empty_distribution, "error values of an empty dataset");
  std::vector<double> out;
  out.reserve(dataset.size());
  for (const auto& r : dataset.records()) out.push_back(error_value(r));
  return out;
}

// ---------------------------------------------------------------------------
// Permutation test

CellAssignment assign_cells(const Dataset& dataset, const CellMapper& mapper, SplitFilter split) {
  CellAssignment a;
  a.n_cells = mapper.cells().size();
  for (const auto& r : dataset.records()) {
    if (!split_matches(r.split, split)) continue;
    const auto idx = mapper.index_of(r);
    if (!idx) {
      ++a.missing;
      continue;
    }
    a.records.push_back(&r);
  }
  std::sort(a.records.begin(), a.records.end(),
            [](const PredictionRecord* x, const PredictionRecord* y) { return x->id < y->id; });
  a.cells.reserve(a.records.size());
  for (const auto* r : a.records) a.cells.push_back(static_cast<int>(*mapper.index_of(*r)));
  return a;
}

PermutationResult permutation_test(const Dataset& dataset, const CellMapper& mapper,
                                   SplitFilter split, const GroupStatistic& statistic,
                                   std::size_t n_permutations, std::uint64_t seed) {
  const auto a = assign_cells(dataset, mapper, split);
  std::set<int> occupied(a.cells.begin(), a.cells.end());
  if (occupied.size() < 2)
    throw Error(ErrorCode::single_cell,
                fmt::format("attribute '{}' has fewer than two non-empty cells", mapper.attribute()));
  PermutationResult result;
  result.observed = statistic(a.records, a.cells);
  const auto null = kernels::shuffle_null(
      a.cells, n_permutations, derive_seed(seed, "permutation_test"),
      [&](const std::vector<int>& perm) { return statistic(a.records, perm); });
  result.p_value = kernels::add_one_p_value(result.observed, null);
  return result;
}

}  // namespace biaslens::stats
