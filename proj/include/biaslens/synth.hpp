#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biaslens/model.hpp"
#include "biaslens/stats.hpp"

namespace biaslens::synth {

enum class Origin { none, label, selection, overamp, compound };
enum class Preset { wsj_effect, kitchen, mental_health, hate_speech };

std::string_view to_string(Origin origin);
Origin parse_origin(std::string_view text);
std::string_view to_string(Preset preset);
Preset parse_preset(std::string_view text);

struct ScenarioSpec {
  Origin origin = Origin::none;
  std::size_t n = 10000;
  std::string attribute = "g";
  stats::Table attribute_cells = {{"a", 0.5}, {"b", 0.5}};  // target marginal
  std::map<std::string, double> base_rates = {{"a", 0.25}, {"b", 0.45}};
  /// label: flip probability for negatives in the first cell; selection:
  /// mass moved onto the first cell; overamp: score shift (in noise sd units)
  /// applied to the cell with the most extreme base rate.
  double strength = 0.0;
  /// compound only; default to `strength`.
  std::optional<double> label_strength;
  std::optional<double> selection_strength;
  std::optional<Preset> preset;
  std::uint64_t seed = 0;
  std::string positive = "1";
  std::string negative = "0";
  double score_separation = 2.0;  // beta in z = beta (y - 1/2) + h_c + noise
};

ScenarioSpec scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScenarioSpec& spec);

struct Scenario {
  Dataset source;
  Dataset target_reference;
  /// Uninjected P(Y | A); empty for continuous-outcome presets.
  std::map<std::string, stats::Table> trusted_table;
  stats::Table target_marginal;
  /// Config an audit of this scenario should start from.
  AuditConfig recommended_config;
  nlohmann::json calibration = nlohmann::json::object();

  stats::IdealDistribution trusted_reference() const;
  bool has_trusted() const { return !trusted_table.empty(); }
};

/// Deterministic given spec.seed. Throws infeasible when a strength pushes a
/// probability outside [0, 1], and validation for an empty scenario.
Scenario generate(const ScenarioSpec& spec);

/// Strength at which each single origin is expected to be detected at
/// n = 10,000 with the default audit settings.
double calibrated_strength(Origin origin);
ScenarioSpec calibrated_spec(Origin origin, std::size_t n, std::uint64_t seed);

/// Standard normal CDF.
double normal_cdf(double x);

/// Score offset h with r Phi(beta/2 + h) + (1 - r) Phi(h - beta/2) = r, so a
/// zero threshold reproduces the base rate r in expectation.
double rate_preserving_offset(double rate, double beta);

struct TrialFlags {
  bool selection = false;
  bool label = false;
  bool overamp = false;
};

/// Runs the three origin checks on one generated scenario.
TrialFlags run_checks(const Scenario& scenario, const AuditConfig& config);

struct PowerCell {
  double strength = 0.0;
  std::size_t n = 0;
  std::size_t trials = 0;
  /// Fraction of trials where the check matching the origin flags (for
  /// origin none: where any check flags).
  double power = 0.0;
  std::map<std::string, double> flag_rates;  // per check
};

std::vector<PowerCell> power_grid(Origin origin, const std::vector<double>& strengths,
                                  const std::vector<std::size_t>& n_values, std::size_t trials,
                                  std::uint64_t seed, const AuditConfig& config = {});
std::vector<PowerCell> power_grid_serial(Origin origin, const std::vector<double>& strengths,
                                         const std::vector<std::size_t>& n_values,
                                         std::size_t trials, std::uint64_t seed,
                                         const AuditConfig& config = {});

/// Template sentences with gendered pronouns, "he" outnumbering "she"
/// `he_per_she` to one. Attribute "gender" holds the pronoun's gender.
Dataset template_corpus(std::size_t n, std::size_t he_per_she, std::uint64_t seed);

}  // namespace biaslens::synth
