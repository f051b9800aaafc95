#include "biaslens/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "biaslens/error.hpp"
#include "biaslens/mitigate.hpp"
#include "biaslens/origins.hpp"
#include "biaslens/rng.hpp"

namespace biaslens::synth {

namespace {

constexpr std::pair<Origin, std::string_view> kOrigins[] = {
    {Origin::none, "none"},
    {Origin::label, "label"},
    {Origin::selection, "selection"},
    {Origin::overamp, "overamp"},
    {Origin::compound, "compound"},
};

constexpr std::pair<Preset, std::string_view> kPresets[] = {
    {Preset::wsj_effect, "wsj_effect"},
    {Preset::kitchen, "kitchen"},
    {Preset::mental_health, "mental_health"},
    {Preset::hate_speech, "hate_speech"},
};

const std::vector<double> kAgeEdges = {18, 30, 42, 54, 66, 80};

}  // namespace

std::string_view to_string(Origin origin) {
  for (const auto& [o, name] : kOrigins)
    if (o == origin) return name;
  return "none";
}

Origin parse_origin(std::string_view text) {
  for (const auto& [o, name] : kOrigins)
    if (name == text) return o;
  throw Error(ErrorCode::validation,
              fmt::format("unknown origin '{}' (expected none, label, selection, overamp or compound)", text));
}

std::string_view to_string(Preset preset) {
  for (const auto& [p, name] : kPresets)
    if (p == preset) return name;
  return "kitchen";
}

Preset parse_preset(std::string_view text) {
  for (const auto& [p, name] : kPresets)
    if (name == text) return p;
  throw Error(ErrorCode::validation,
              fmt::format("unknown preset '{}' (expected wsj_effect, kitchen, mental_health or hate_speech)",
                          text));
}

ScenarioSpec scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::parse, "scenario spec must be a JSON object");
  static const std::set<std::string> known = {
      "origin",   "n",        "attribute", "cells",    "base_rates",       "strength",
      "label_strength", "selection_strength", "preset", "seed", "positive", "negative",
      "score_separation"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw Error(ErrorCode::validation, fmt::format("unknown scenario key '{}'", key));

  ScenarioSpec s;
  try {
    if (j.contains("origin")) s.origin = parse_origin(j.at("origin").get<std::string>());
    if (j.contains("n")) {
      const auto n = j.at("n").get<std::int64_t>();
      if (n < 0) throw Error(ErrorCode::validation, "scenario n must be non-negative");
      s.n = static_cast<std::size_t>(n);
    }
    if (j.contains("attribute")) s.attribute = j.at("attribute").get<std::string>();
    if (j.contains("cells")) s.attribute_cells = j.at("cells").get<stats::Table>();
    if (j.contains("base_rates")) s.base_rates = j.at("base_rates").get<std::map<std::string, double>>();
    if (j.contains("strength")) s.strength = j.at("strength").get<double>();
    if (j.contains("label_strength")) s.label_strength = j.at("label_strength").get<double>();
    if (j.contains("selection_strength")) s.selection_strength = j.at("selection_strength").get<double>();
    if (j.contains("preset") && !j.at("preset").is_null())
      s.preset = parse_preset(j.at("preset").get<std::string>());
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("positive")) s.positive = j.at("positive").get<std::string>();
    if (j.contains("negative")) s.negative = j.at("negative").get<std::string>();
    if (j.contains("score_separation")) s.score_separation = j.at("score_separation").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, fmt::format("scenario spec: {}", e.what()));
  }
  return s;
}

nlohmann::json to_json(const ScenarioSpec& s) {
  nlohmann::json j = {{"origin", to_string(s.origin)},
                      {"n", s.n},
                      {"attribute", s.attribute},
                      {"cells", s.attribute_cells},
                      {"base_rates", s.base_rates},
                      {"strength", s.strength},
                      {"seed", s.seed},
                      {"positive", s.positive},
                      {"negative", s.negative},
                      {"score_separation", s.score_separation}};
  if (s.label_strength) j["label_strength"] = *s.label_strength;
  if (s.selection_strength) j["selection_strength"] = *s.selection_strength;
  if (s.preset) j["preset"] = to_string(*s.preset);
  return j;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double rate_preserving_offset(double rate, double beta) {
  if (rate <= 0.0) return -40.0;
  if (rate >= 1.0) return 40.0;
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double f = rate * normal_cdf(beta / 2 + mid) + (1 - rate) * normal_cdf(mid - beta / 2) - rate;
    (f < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

stats::IdealDistribution Scenario::trusted_reference() const {
  if (trusted_table.empty())
    throw Error(ErrorCode::missing_reference, "this scenario has no categorical trusted reference");
  return stats::IdealDistribution::explicit_table(trusted_table);
}

namespace {

std::string record_id(char prefix, std::size_t i) { return fmt::format("{}{:06d}", prefix, i + 1); }

void check_probability(double p, const std::string& what) {
  if (!std::isfinite(p) || p < 0.0 || p > 1.0)
    throw Error(ErrorCode::infeasible, fmt::format("{} = {} lies outside [0, 1]", what, p));
}

void validate_spec(const ScenarioSpec& s) {
  if (s.n == 0) throw Error(ErrorCode::validation, "scenario n must be at least 1");
  if (s.attribute_cells.size() < 2)
    throw Error(ErrorCode::validation, "scenario needs at least two attribute cells");
  double sum = 0.0;
  for (const auto& [cell, p] : s.attribute_cells) {
    if (!std::isfinite(p) || p < 0.0)
      throw Error(ErrorCode::validation, fmt::format("cell '{}' has invalid mass {}", cell, p));
    sum += p;
    if (!s.base_rates.count(cell))
      throw Error(ErrorCode::validation, fmt::format("cell '{}' has no base rate", cell));
    const double r = s.base_rates.at(cell);
    if (!std::isfinite(r) || r < 0.0 || r > 1.0)
      throw Error(ErrorCode::validation, fmt::format("base rate of cell '{}' is {} (must be in [0, 1])", cell, r));
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw Error(ErrorCode::validation, fmt::format("cell marginal sums to {}, not 1", sum));
  for (const auto& [cell, r] : s.base_rates)
    if (!s.attribute_cells.count(cell))
      throw Error(ErrorCode::validation, fmt::format("base rate given for unknown cell '{}'", cell));
  for (double v : {s.strength, s.label_strength.value_or(0.0), s.selection_strength.value_or(0.0)})
    if (!std::isfinite(v) || v < 0.0)
      throw Error(ErrorCode::validation, "injection strength must be finite and non-negative");
  if (s.positive == s.negative) throw Error(ErrorCode::validation, "positive and negative labels must differ");
}

struct Injection {
  double label = 0.0;
  double selection = 0.0;
  double overamp = 0.0;
};

Injection injection_of(const ScenarioSpec& s) {
  Injection in;
  switch (s.origin) {
    case Origin::none: break;
    case Origin::label: in.label = s.strength; break;
    case Origin::selection: in.selection = s.strength; break;
    case Origin::overamp: in.overamp = s.strength; break;
    case Origin::compound:
      in.label = s.label_strength.value_or(s.strength);
      in.selection = s.selection_strength.value_or(s.strength);
      break;
  }
  return in;
}

/// Draws one categorical population. Cell sizes are apportioned exactly;
/// labels are Bernoulli with the per-cell rate; predictions come from one
/// global threshold on z = beta (y - 1/2) + h_c + N(0, 1).
std::vector<PredictionRecord> draw_population(const ScenarioSpec& s, const stats::Table& marginal,
                                              const std::map<std::string, double>& label_rates,
                                              const std::map<std::string, double>& score_shift,
                                              Split split, char id_prefix, Engine& rng) {
  const auto sizes = mitigate::apportion(marginal, s.n);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<PredictionRecord> out;
  out.reserve(s.n);
  for (const auto& [cell, m] : sizes) {
    const double rate = label_rates.at(cell);
    const double h = rate_preserving_offset(rate, s.score_separation) + score_shift.at(cell);
    for (std::size_t i = 0; i < m; ++i) {
      const bool y = uniform01(rng) < rate;
      const double z = s.score_separation * (y ? 0.5 : -0.5) + h + noise(rng);
      PredictionRecord r;
      r.id = record_id(id_prefix, out.size());
      r.y_true = y ? s.positive : s.negative;
      r.y_pred = z > 0.0 ? s.positive : s.negative;
      r.attrs[s.attribute] = cell;
      r.split = split;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::map<std::string, stats::Table> rate_table(const std::map<std::string, double>& rates,
                                               const std::string& positive, const std::string& negative) {
  std::map<std::string, stats::Table> t;
  for (const auto& [cell, r] : rates) t[cell] = {{positive, r}, {negative, 1.0 - r}};
  return t;
}

AuditConfig base_config(const std::string& attribute, std::uint64_t seed) {
  AuditConfig c;
  c.attributes = {attribute};
  c.seed = seed;
  return c;
}

IdealSpec explicit_ideal(const std::map<std::string, stats::Table>& table) {
  IdealSpec spec;
  spec.type = IdealSpec::Type::explicit_table;
  spec.table = table;
  return spec;
}

Scenario generate_generic(const ScenarioSpec& s) {
  validate_spec(s);
  const auto in = injection_of(s);
  const std::string first = s.attribute_cells.begin()->first;

  // Selection: move `selection` mass onto the first cell, shrinking the rest
  // proportionally.
  stats::Table source_marginal = s.attribute_cells;
  if (in.selection > 0.0) {
    const double p0 = s.attribute_cells.at(first);
    const double q0 = p0 + in.selection;
    check_probability(q0, fmt::format("skewed mass of cell '{}'", first));
    for (auto& [cell, q] : source_marginal)
      q = cell == first ? q0 : (p0 < 1.0 ? q * (1.0 - q0) / (1.0 - p0) : 0.0);
  }

  // Label: flip negatives of the first cell to positive with probability s.
  auto source_rates = s.base_rates;
  if (in.label > 0.0) {
    check_probability(in.label, "label flip probability");
    const double r = s.base_rates.at(first);
    source_rates[first] = r + (1.0 - r) * in.label;
    check_probability(source_rates[first], fmt::format("label rate of cell '{}'", first));
  }

  // Overamp: push each cell's score away from the marginal-weighted mean
  // base rate, the largest deviation receiving the full shift.
  std::map<std::string, double> shift;
  double mean_rate = 0.0;
  for (const auto& [cell, p] : s.attribute_cells) mean_rate += p * s.base_rates.at(cell);
  double max_dev = 0.0;
  for (const auto& [cell, r] : s.base_rates) max_dev = std::max(max_dev, std::abs(r - mean_rate));
  for (const auto& [cell, r] : s.base_rates) shift[cell] = 0.0;
  if (in.overamp > 0.0) {
    if (max_dev <= 0.0)
      throw Error(ErrorCode::infeasible,
                  "overamplification needs cells with different base rates to amplify");
    for (const auto& [cell, r] : s.base_rates) shift[cell] = in.overamp * (r - mean_rate) / max_dev;
  }

  Engine src_rng(derive_seed(s.seed, "synth/source"));
  Engine tgt_rng(derive_seed(s.seed, "synth/target"));
  Scenario out;
  out.source = Dataset(draw_population(s, source_marginal, source_rates, shift, Split::source, 's', src_rng));
  std::map<std::string, double> no_shift;
  for (const auto& [cell, r] : s.base_rates) no_shift[cell] = 0.0;
  out.target_reference =
      Dataset(draw_population(s, s.attribute_cells, s.base_rates, no_shift, Split::target, 't', tgt_rng));
  out.trusted_table = rate_table(s.base_rates, s.positive, s.negative);
  out.target_marginal = s.attribute_cells;
  out.recommended_config = base_config(s.attribute, s.seed);
  out.recommended_config.ideal[s.attribute] = explicit_ideal(out.trusted_table);
  out.calibration = {{"source_marginal", source_marginal},
                     {"source_label_rates", source_rates},
                     {"score_shift", shift}};
  return out;
}

// ---------------------------------------------------------------------------
// Presets

Scenario kitchen(std::uint64_t seed) {
  const std::size_t per_arm = 5000;
  const double beta = 2.0;
  const std::map<std::string, double> rates = {{"kitchen", 0.58}, {"other", 0.5}};
  Engine rng(derive_seed(seed, "synth/kitchen"));
  std::normal_distribution<double> noise(0.0, 1.0);

  struct Row {
    std::string cell;
    bool woman;
    double eps;
  };
  std::vector<Row> rows;
  for (const auto& [cell, r] : rates) {
    // Exact label counts keep the training rate at its nominal value.
    const auto women = static_cast<std::size_t>(std::llround(r * per_arm));
    for (std::size_t i = 0; i < per_arm; ++i) rows.push_back({cell, i < women, 0.0});
  }
  std::shuffle(rows.begin(), rows.end(), rng);
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.cell < b.cell; });
  for (auto& row : rows) row.eps = noise(rng);

  auto predicted_rate = [&](const std::string& cell, double h) {
    std::size_t pos = 0, n = 0;
    for (const auto& row : rows) {
      if (row.cell != cell) continue;
      ++n;
      if (beta * (row.woman ? 0.5 : -0.5) + h + row.eps > 0.0) ++pos;
    }
    return static_cast<double>(pos) / static_cast<double>(n);
  };

  // The kitchen offset is found on the realized noise, so the predicted rate
  // itself (not its expectation) lands on the target.
  const double target = 0.63;
  const double h0 = rate_preserving_offset(rates.at("kitchen"), beta);
  double lo = h0 - 5.0, hi = h0 + 5.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (predicted_rate("kitchen", mid) < target ? lo : hi) = mid;
  }
  const double h_kitchen = hi;
  const double achieved = predicted_rate("kitchen", h_kitchen);
  if (std::abs(achieved - target) > 0.005)
    throw Error(ErrorCode::infeasible, fmt::format("kitchen calibration reached {:.4f}, not 0.63", achieved));
  const std::map<std::string, double> h = {{"kitchen", h_kitchen},
                                           {"other", rate_preserving_offset(rates.at("other"), beta)}};

  std::vector<PredictionRecord> records;
  for (const auto& row : rows) {
    PredictionRecord r;
    r.id = record_id('s', records.size());
    r.y_true = row.woman ? "woman" : "man";
    r.y_pred = beta * (row.woman ? 0.5 : -0.5) + h.at(row.cell) + row.eps > 0.0 ? "woman" : "man";
    r.attrs["scene"] = row.cell;
    r.split = Split::source;
    records.push_back(std::move(r));
  }

  ScenarioSpec target_spec;
  target_spec.n = 2 * per_arm;
  target_spec.attribute = "scene";
  target_spec.attribute_cells = {{"kitchen", 0.5}, {"other", 0.5}};
  target_spec.base_rates = rates;
  target_spec.positive = "woman";
  target_spec.negative = "man";
  target_spec.score_separation = beta;
  Engine tgt_rng(derive_seed(seed, "synth/target"));
  const std::map<std::string, double> no_shift = {{"kitchen", 0.0}, {"other", 0.0}};

  Scenario out;
  out.source = Dataset(std::move(records));
  out.target_reference = Dataset(
      draw_population(target_spec, target_spec.attribute_cells, rates, no_shift, Split::target, 't', tgt_rng));
  out.trusted_table = rate_table(rates, "woman", "man");
  out.target_marginal = target_spec.attribute_cells;
  out.recommended_config = base_config("scene", seed);
  out.recommended_config.ideal["scene"] = explicit_ideal(out.trusted_table);
  // A 0.05 shift in one of two arms is a small effect in nats (about 0.0026);
  // the default floor would hide the case study, so the preset lowers it.
  out.recommended_config.effect_floor = 0.001;
  out.calibration = {{"target_predicted_rate", target},
                     {"achieved_predicted_rate", achieved},
                     {"kitchen_score_offset", h_kitchen},
                     {"kitchen_score_shift", h_kitchen - h0},
                     {"other_predicted_rate", predicted_rate("other", h.at("other"))}};
  return out;
}

Scenario hate_speech(std::uint64_t seed) {
  ScenarioSpec s;
  s.origin = Origin::label;
  s.n = 4000;
  s.attribute = "group";
  s.attribute_cells = {{"A", 0.5}, {"B", 0.5}};
  s.base_rates = {{"A", 0.25}, {"B", 0.25}};
  s.strength = 0.2;  // 0.25 + 0.75 * 0.2 = 0.40 in group A
  s.positive = "toxic";
  s.negative = "benign";
  s.seed = seed;
  auto out = generate_generic(s);
  out.calibration["annotated_rate_A"] = 0.40;
  return out;
}

double draw_age(Engine& rng, const std::vector<double>& bin_probs) {
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t bin = bin_probs.size() - 1;
  for (std::size_t b = 0; b < bin_probs.size(); ++b) {
    acc += bin_probs[b];
    if (u < acc) {
      bin = b;
      break;
    }
  }
  return kAgeEdges[bin] + uniform01(rng) * (kAgeEdges[bin + 1] - kAgeEdges[bin]);
}

std::map<std::string, Binning> age_binning() {
  Binning b;
  b.strategy = Binning::Strategy::fixed_edges;
  b.edges = kAgeEdges;
  return {{"age", b}};
}

stats::Table age_marginal(const std::vector<double>& probs) {
  stats::Table t;
  for (std::size_t b = 0; b < probs.size(); ++b) {
    const bool last = b + 1 == probs.size();
    t[fmt::format("{:02d}:[{},{}{}", b, kAgeEdges[b], kAgeEdges[b + 1], last ? "]" : ")")] = probs[b];
  }
  return t;
}

Scenario wsj_effect(std::uint64_t seed) {
  const std::size_t n = 5000;
  const std::vector<double> source_bins = {0.075, 0.075, 0.7, 0.075, 0.075};
  const std::vector<double> target_bins = {0.2, 0.2, 0.2, 0.2, 0.2};
  Engine rng(derive_seed(seed, "synth/wsj_effect"));
  std::normal_distribution<double> outcome(50.0, 10.0), unit(0.0, 1.0);

  std::vector<double> ages(n);
  for (auto& a : ages) a = draw_age(rng, source_bins);
  const double mean_age = std::accumulate(ages.begin(), ages.end(), 0.0) / static_cast<double>(n);

  // The model was fit to the source population; its error grows linearly
  // with distance from the source's mean age.
  auto make = [&](const std::vector<double>& a, Split split, char prefix, Engine& g) {
    std::vector<PredictionRecord> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
      PredictionRecord r;
      r.id = record_id(prefix, i);
      const double y = outcome(g);
      r.y_true = y;
      r.y_pred = y + (2.0 + 0.25 * std::abs(a[i] - mean_age)) * unit(g);
      r.attrs["age"] = a[i];
      r.split = split;
      out.push_back(std::move(r));
    }
    return Dataset(std::move(out), {{"age", AttributeKind::continuous, age_binning().at("age")}});
  };

  Engine tgt_rng(derive_seed(seed, "synth/target"));
  std::vector<double> target_ages(n);
  for (auto& a : target_ages) a = draw_age(tgt_rng, target_bins);

  Scenario out;
  out.source = make(ages, Split::source, 's', rng);
  out.target_reference = make(target_ages, Split::target, 't', tgt_rng);
  out.target_marginal = age_marginal(target_bins);
  out.recommended_config = base_config("age", seed);
  out.recommended_config.binning = age_binning();
  out.calibration = {{"source_mean_age", mean_age},
                     {"source_bin_probabilities", source_bins},
                     {"error_sd", "2 + 0.25 |age - source_mean_age|"}};
  return out;
}

Scenario mental_health(std::uint64_t seed) {
  const std::size_t n_cases = 1000, n_controls = 4000;
  const std::vector<double> case_bins = {0.1, 0.15, 0.2, 0.25, 0.3};
  const std::vector<double> control_bins = {0.2, 0.2, 0.2, 0.2, 0.2};
  const double threshold_age = 54.0;

  auto make = [&](Split split, char prefix, const std::vector<double>& cases_bins, Engine& g) {
    std::vector<PredictionRecord> out;
    auto add = [&](const std::string& label, const std::vector<double>& bins, double female_rate,
                   std::size_t count) {
      for (std::size_t i = 0; i < count; ++i) {
        PredictionRecord r;
        r.id = record_id(prefix, out.size());
        const double age = draw_age(g, bins);
        r.y_true = label;
        // The classifier learned age rather than the condition.
        r.y_pred = age >= threshold_age ? "ptsd" : "depression";
        r.attrs["age"] = age;
        r.attrs["gender"] = uniform01(g) < female_rate ? "f" : "m";
        r.split = split;
        out.push_back(std::move(r));
      }
    };
    add("ptsd", cases_bins, 0.6, n_cases);
    add("depression", control_bins, 0.5, n_controls);
    return Dataset(std::move(out), {{"age", AttributeKind::continuous, age_binning().at("age")}});
  };

  Engine rng(derive_seed(seed, "synth/mental_health"));
  Engine tgt_rng(derive_seed(seed, "synth/target"));
  Scenario out;
  out.source = make(Split::source, 's', case_bins, rng);
  out.target_reference = make(Split::target, 't', control_bins, tgt_rng);
  out.target_marginal = age_marginal(control_bins);
  out.recommended_config = base_config("age", seed);
  out.recommended_config.attributes.push_back("gender");
  out.recommended_config.binning = age_binning();
  out.calibration = {{"case_bin_probabilities", case_bins},
                     {"control_bin_probabilities", control_bins},
                     {"classifier_age_threshold", threshold_age}};
  return out;
}

}  // namespace

Scenario generate(const ScenarioSpec& spec) {
  if (!spec.preset) return generate_generic(spec);
  switch (*spec.preset) {
    case Preset::kitchen: return kitchen(spec.seed);
    case Preset::hate_speech: return hate_speech(spec.seed);
    case Preset::wsj_effect: return wsj_effect(spec.seed);
    case Preset::mental_health: return mental_health(spec.seed);
  }
  throw Error(ErrorCode::validation, "unknown preset");
}

double calibrated_strength(Origin origin) {
  switch (origin) {
    case Origin::none: return 0.0;
    case Origin::label: return 0.2;
    case Origin::selection: return 0.2;
    case Origin::overamp: return 0.4;
    case Origin::compound: return 0.2;
  }
  return 0.0;
}

ScenarioSpec calibrated_spec(Origin origin, std::size_t n, std::uint64_t seed) {
  ScenarioSpec s;
  s.origin = origin;
  s.n = n;
  s.strength = calibrated_strength(origin);
  s.seed = seed;
  return s;
}

TrialFlags run_checks(const Scenario& scenario, const AuditConfig& config) {
  const std::string& name =
      config.attributes.empty() ? scenario.recommended_config.attributes.front() : config.attributes.front();
  const auto attribute = stats::resolve_attribute(scenario.source, config, name);
  TrialFlags f;
  origins::TargetReference target;
  target.dataset = &scenario.target_reference;
  f.selection = origins::selection_bias_check(scenario.source, target, attribute, config).flagged;
  if (scenario.has_trusted()) {
    const auto trusted = scenario.trusted_reference();
    f.label = origins::label_bias_check(scenario.source, &trusted, attribute, config).flagged;
  }
  if (scenario.source.outcome_kind() == OutcomeKind::categorical)
    f.overamp = origins::overamplification_check(scenario.source, attribute, config).flagged;
  return f;
}

namespace {

TrialFlags one_trial(Origin origin, double strength, std::size_t n, std::uint64_t stream, std::size_t t,
                     const AuditConfig& base) {
  auto spec = calibrated_spec(origin, n, replicate_seed(stream, t));
  spec.strength = strength;
  auto config = base;
  config.attributes = {spec.attribute};
  config.seed = spec.seed;
  return run_checks(generate(spec), config);
}

bool matching_flag(Origin origin, const TrialFlags& f) {
  switch (origin) {
    case Origin::none: return f.selection || f.label || f.overamp;
    case Origin::label: return f.label;
    case Origin::selection: return f.selection;
    case Origin::overamp: return f.overamp;
    case Origin::compound: return f.selection && f.label;
  }
  return false;
}

PowerCell summarize(Origin origin, double strength, std::size_t n, const std::vector<TrialFlags>& flags) {
  PowerCell cell;
  cell.strength = strength;
  cell.n = n;
  cell.trials = flags.size();
  double hit = 0, sel = 0, lab = 0, amp = 0;
  for (const auto& f : flags) {
    hit += matching_flag(origin, f);
    sel += f.selection;
    lab += f.label;
    amp += f.overamp;
  }
  const double t = static_cast<double>(flags.size());
  cell.power = hit / t;
  cell.flag_rates = {{"selection", sel / t}, {"label", lab / t}, {"overamp", amp / t}};
  return cell;
}

void check_grid(std::size_t trials) {
  if (trials < 50) throw Error(ErrorCode::validation, "power_grid needs at least 50 trials");
}

std::uint64_t grid_stream(std::uint64_t seed, Origin origin, double strength, std::size_t n) {
  return derive_seed(seed, fmt::format("power_grid/{}/{}/{}", to_string(origin), strength, n));
}

}  // namespace

std::vector<PowerCell> power_grid(Origin origin, const std::vector<double>& strengths,
                                  const std::vector<std::size_t>& n_values, std::size_t trials,
                                  std::uint64_t seed, const AuditConfig& config) {
  check_grid(trials);
  std::vector<PowerCell> out;
  for (double s : strengths)
    for (std::size_t n : n_values) {
      const auto stream = grid_stream(seed, origin, s, n);
      std::vector<TrialFlags> flags(trials);
      std::string failure;
#pragma omp parallel for schedule(dynamic)
      for (std::size_t t = 0; t < trials; ++t) {
        try {
          flags[t] = one_trial(origin, s, n, stream, t, config);
        } catch (const std::exception& e) {
#pragma omp critical
          failure = e.what();
        }
      }
      if (!failure.empty()) throw Error(ErrorCode::infeasible, failure);
      out.push_back(summarize(origin, s, n, flags));
    }
  return out;
}

std::vector<PowerCell> power_grid_serial(Origin origin, const std::vector<double>& strengths,
                                         const std::vector<std::size_t>& n_values, std::size_t trials,
                                         std::uint64_t seed, const AuditConfig& config) {
  check_grid(trials);
  std::vector<PowerCell> out;
  for (double s : strengths)
    for (std::size_t n : n_values) {
      const auto stream = grid_stream(seed, origin, s, n);
      std::vector<TrialFlags> flags;
      for (std::size_t t = 0; t < trials; ++t) flags.push_back(one_trial(origin, s, n, stream, t, config));
      out.push_back(summarize(origin, s, n, flags));
    }
  return out;
}

Dataset template_corpus(std::size_t n, std::size_t he_per_she, std::uint64_t seed) {
  static const char* const kTemplates[] = {
      "{P} is a {occ}.",
      "Yesterday {p} said the {occ} was late.",
      "The {man} who works as a {occ} thinks {p} is right.",
      "Everyone knows {p} wanted to be a {occ}.",
  };
  static const char* const kOccupations[] = {"doctor", "nurse", "engineer", "teacher", "pilot", "baker"};
  Engine rng(derive_seed(seed, "synth/template_corpus"));
  std::vector<PredictionRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    const bool male = i % (he_per_she + 1) != he_per_she;
    const std::string p = male ? "he" : "she";
    const std::string P = male ? "He" : "She";
    const std::string man = male ? "man" : "woman";
    const std::string occ = kOccupations[rng() % std::size(kOccupations)];
    std::string text = kTemplates[rng() % std::size(kTemplates)];
    for (const auto& [slot, value] : {std::pair<std::string, std::string>{"{P}", P},
                                      {"{p}", p}, {"{man}", man}, {"{occ}", occ}}) {
      for (auto pos = text.find(slot); pos != std::string::npos; pos = text.find(slot, pos + value.size()))
        text.replace(pos, slot.size(), value);
    }
    const bool technical = occ == "doctor" || occ == "engineer" || occ == "pilot";
    PredictionRecord r;
    r.id = record_id('c', i);
    r.y_true = technical ? "technical" : "other";
    // A stereotyped model: men are always read as technical.
    r.y_pred = male || technical ? "technical" : "other";
    r.attrs["gender"] = male ? "m" : "f";
    r.text = std::move(text);
    records.push_back(std::move(r));
  }
  return Dataset(std::move(records));
}

}  // namespace biaslens::synth
