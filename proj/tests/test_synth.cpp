#include <doctest.h>

#include "biaslens/error.hpp"
#include "biaslens/origins.hpp"
#include "biaslens/synth.hpp"
#include "support.hpp"

using namespace biaslens;
using synth::Origin;

namespace {

std::map<std::string, std::array<double, 3>> tally(const Dataset& d, const std::string& attr) {
  std::map<std::string, std::array<double, 3>> t;  // n, gold positives, predicted positives
  for (const auto& r : d.records()) {
    auto& c = t[std::get<std::string>(r.attrs.at(attr))];
    c[0] += 1;
    c[1] += std::get<std::string>(r.y_true) == "1";
    c[2] += std::get<std::string>(r.y_pred) == "1";
  }
  return t;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::usage;
}

}  // namespace

TEST_CASE("generation is seed-deterministic") {
  for (auto o : {Origin::none, Origin::label, Origin::selection, Origin::overamp, Origin::compound}) {
    const auto a = synth::generate(synth::calibrated_spec(o, 3000, 17));
    const auto b = synth::generate(synth::calibrated_spec(o, 3000, 17));
    const auto c = synth::generate(synth::calibrated_spec(o, 3000, 18));
    CHECK(a.source == b.source);
    CHECK(a.target_reference == b.target_reference);
    CHECK_FALSE(a.source == c.source);
  }
  for (auto p : {synth::Preset::wsj_effect, synth::Preset::kitchen, synth::Preset::mental_health,
                 synth::Preset::hate_speech}) {
    synth::ScenarioSpec s;
    s.preset = p;
    s.seed = 5;
    CHECK(synth::generate(s).source == synth::generate(s).source);
  }
}

TEST_CASE("selection skews the sampled marginal exactly") {
  auto spec = synth::calibrated_spec(Origin::selection, 10000, 2);
  spec.strength = 0.3;
  const auto s = synth::generate(spec);
  const auto t = tally(s.source, "g");
  CHECK(std::abs(t.at("a")[0] / 10000 - 0.8) <= 1e-4);
  CHECK(std::abs(t.at("b")[0] / 10000 - 0.2) <= 1e-4);
  // The target is uninjected.
  const auto tt = tally(s.target_reference, "g");
  CHECK(tt.at("a")[0] == tt.at("b")[0]);
  origins::TargetReference ref;
  ref.dataset = &s.target_reference;
  const AttributeSpec g{"g", AttributeKind::categorical, std::nullopt};
  CHECK(origins::selection_bias_check(s.source, ref, g, s.recommended_config).divergence.statistic ==
        doctest::Approx(0.1927).epsilon(1e-3));
}

TEST_CASE("label injection flips negatives in the first cell") {
  auto spec = synth::calibrated_spec(Origin::label, 20000, 3);
  spec.strength = 0.2;
  const auto t = tally(synth::generate(spec).source, "g");
  const double expected = 0.25 + 0.75 * 0.2;
  const double sd = std::sqrt(expected * (1 - expected) / t.at("a")[0]);
  CHECK(std::abs(t.at("a")[1] / t.at("a")[0] - expected) < 4 * sd);
  CHECK(std::abs(t.at("b")[1] / t.at("b")[0] - 0.45) < 4 * std::sqrt(0.45 * 0.55 / t.at("b")[0]));
}

TEST_CASE("trusted reference equals the base rates regardless of injection") {
  for (auto o : {Origin::none, Origin::label, Origin::selection, Origin::overamp, Origin::compound}) {
    const auto s = synth::generate(synth::calibrated_spec(o, 1000, 1));
    REQUIRE(s.has_trusted());
    CHECK(s.trusted_table.at("a").at("1") == 0.25);
    CHECK(s.trusted_table.at("b").at("1") == 0.45);
    CHECK(s.trusted_table.at("b").at("0") == 0.55);
    CHECK(s.trusted_reference().row("a", {"0", "1"}).at("1") == 0.25);
  }
}

TEST_CASE("rate-preserving offset") {
  for (double r : {0.05, 0.25, 0.5, 0.8}) {
    const double h = synth::rate_preserving_offset(r, 2.0);
    const double achieved = r * synth::normal_cdf(1.0 + h) + (1 - r) * synth::normal_cdf(h - 1.0);
    CHECK(achieved == doctest::Approx(r).epsilon(1e-9));
  }
  CHECK(synth::normal_cdf(0.0) == doctest::Approx(0.5));
  CHECK(synth::normal_cdf(1.959963985) == doctest::Approx(0.975).epsilon(1e-9));
}

TEST_CASE("no injection keeps predicted rates near base rates") {
  const auto t = tally(synth::generate(synth::calibrated_spec(Origin::none, 20000, 9)).source, "g");
  for (const auto& [cell, rate] : std::map<std::string, double>{{"a", 0.25}, {"b", 0.45}}) {
    const double sd = std::sqrt(rate * (1 - rate) / t.at(cell)[0]);
    CHECK(std::abs(t.at(cell)[2] / t.at(cell)[0] - rate) < 5 * sd);
  }
}

TEST_CASE("infeasible and empty scenarios") {
  auto sel = synth::calibrated_spec(Origin::selection, 100, 1);
  sel.strength = 0.6;
  CHECK(code_of([&] { synth::generate(sel); }) == ErrorCode::infeasible);
  auto lab = synth::calibrated_spec(Origin::label, 100, 1);
  lab.strength = 1.5;
  CHECK(code_of([&] { synth::generate(lab); }) == ErrorCode::infeasible);
  auto rates = synth::calibrated_spec(Origin::none, 100, 1);
  rates.base_rates["a"] = 1.2;
  CHECK_THROWS_AS(synth::generate(rates), Error);
  auto empty = synth::calibrated_spec(Origin::none, 0, 1);
  CHECK(code_of([&] { synth::generate(empty); }) == ErrorCode::validation);
}

TEST_CASE("scenario documents") {
  const auto spec = synth::scenario_from_json(
      nlohmann::json::parse(R"({"origin":"label","n":500,"strength":0.1,"seed":4,"base_rates":{"a":0.3,"b":0.3}})"));
  CHECK(spec.origin == Origin::label);
  CHECK(spec.n == 500);
  CHECK(synth::scenario_from_json(synth::to_json(spec)).strength == 0.1);
  CHECK_THROWS_AS(synth::scenario_from_json(nlohmann::json::parse(R"({"orign":"label"})")), Error);
  CHECK_THROWS_AS(synth::parse_origin("sideways"), Error);
  CHECK(synth::parse_preset("kitchen") == synth::Preset::kitchen);
}

TEST_CASE("kitchen preset calibration") {
  synth::ScenarioSpec spec;
  spec.preset = synth::Preset::kitchen;
  const auto s = synth::generate(spec);
  std::map<std::string, std::array<double, 3>> t;
  for (const auto& r : s.source.records()) {
    auto& c = t[std::get<std::string>(r.attrs.at("scene"))];
    c[0] += 1;
    c[1] += std::get<std::string>(r.y_true) == "woman";
    c[2] += std::get<std::string>(r.y_pred) == "woman";
  }
  CHECK(t.at("kitchen")[0] == 5000);
  CHECK(t.at("other")[0] == 5000);
  CHECK(t.at("kitchen")[1] / 5000 == doctest::Approx(0.58));
  CHECK(std::abs(t.at("kitchen")[2] / 5000 - 0.63) <= 0.005);
  CHECK(s.calibration.at("achieved_predicted_rate").get<double>() == doctest::Approx(t.at("kitchen")[2] / 5000));
  CHECK(s.calibration.contains("kitchen_score_shift"));
  CHECK(s.trusted_table.at("kitchen").at("woman") == 0.58);
}

TEST_CASE("template corpus") {
  const auto d = synth::template_corpus(40, 3, 1);
  CHECK(d.size() == 40);
  std::size_t male = 0;
  for (const auto& r : d.records()) {
    CHECK(r.text.has_value());
    male += std::get<std::string>(r.attrs.at("gender")) == "m";
  }
  CHECK(male == 30);
}

TEST_CASE("power grid") {
  AuditConfig c;
  c.n_permutations = 200;
  SUBCASE("parallel and serial agree") {
    const auto p = synth::power_grid(Origin::label, {0.1}, {1000}, 50, 7, c);
    const auto q = synth::power_grid_serial(Origin::label, {0.1}, {1000}, 50, 7, c);
    REQUIRE(p.size() == 1);
    CHECK(p[0].power == q[0].power);
    CHECK(p[0].flag_rates == q[0].flag_rates);
  }
  SUBCASE("null calibration, saturation and monotonicity") {
    const std::size_t trials = 200;
    const auto grid = synth::power_grid(Origin::selection, {0.0, 0.03, 0.06, 0.3}, {1000}, trials, 11, c);
    REQUIRE(grid.size() == 4);
    CHECK(grid[0].power <= c.alpha + 0.02);
    CHECK(grid[3].power >= 0.99);
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
      const double p1 = grid[i].power, p2 = grid[i + 1].power;
      const double noise = 2 * std::sqrt((p1 * (1 - p1) + p2 * (1 - p2)) / static_cast<double>(trials));
      CHECK(p1 <= p2 + noise);
    }
  }
  SUBCASE("too few trials") {
    CHECK_THROWS_AS(synth::power_grid(Origin::label, {0.1}, {1000}, 49, 1, c), Error);
  }
}
