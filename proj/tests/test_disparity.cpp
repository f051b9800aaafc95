#include <doctest.h>

#include "biaslens/disparity.hpp"
#include "biaslens/error.hpp"
#include "biaslens/rng.hpp"
#include "biaslens/synth.hpp"
#include "support.hpp"

using namespace biaslens;
using support::blocks;

namespace {

const AttributeSpec kG{"g", AttributeKind::categorical, std::nullopt};

stats::IdealDistribution rates_ideal(double a, double b) {
  return stats::IdealDistribution::explicit_table(
      {{"a", {{"1", a}, {"0", 1 - a}}}, {"b", {{"1", b}, {"0", 1 - b}}}});
}

}  // namespace

TEST_CASE("predictions equal to the ideal give zero divergence") {
  const auto d = blocks("g", {{"a", "1", "1", 30}, {"a", "0", "0", 70}, {"b", "1", "1", 60}, {"b", "0", "0", 40}});
  const auto r = disparity::outcome_disparity(d, kG, rates_ideal(0.3, 0.6), AuditConfig{});
  CHECK(r.divergence.statistic == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_FALSE(r.flagged);
  CHECK(r.p_value == 1.0);
  CHECK(r.split_used == "source");
  CHECK_FALSE(r.warnings.empty());  // fell back to the source split
}

TEST_CASE("outcome divergence is the summed per-cell G") {
  const auto d = blocks("g", {{"a", "1", "1", 90}, {"a", "1", "0", 10}, {"b", "1", "1", 50}, {"b", "0", "0", 50}});
  const auto r = disparity::outcome_disparity(d, kG, rates_ideal(0.5, 0.5), AuditConfig{});
  CHECK(r.divergence.per_cell.at("a") == doctest::Approx(support::oracle_g({10, 90}, {0.5, 0.5})));
  CHECK(r.divergence.per_cell.at("b") == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.divergence.statistic == doctest::Approx(73.6129).epsilon(1e-6));
  CHECK(r.effect_size_nats == doctest::Approx(73.6129 / 400.0).epsilon(1e-6));
  CHECK(r.flagged);
  CHECK(r.per_cell_detail.at("a").observed.at("1") == doctest::Approx(0.9));
}

TEST_CASE("target split is preferred when present") {
  auto src = blocks("g", {{"a", "1", "1", 50}, {"b", "0", "0", 50}}, Split::source).records();
  const auto tgt = blocks("g", {{"a", "1", "1", 10}, {"a", "1", "0", 10}, {"b", "0", "0", 10}, {"b", "0", "1", 10}},
                          Split::target)
                       .records();
  for (auto r : tgt) {
    r.id = "t" + r.id;
    src.push_back(r);
  }
  const Dataset d(src);
  const auto r = disparity::outcome_disparity(d, kG, rates_ideal(0.5, 0.5), AuditConfig{});
  CHECK(r.split_used == "target");
  CHECK(r.per_cell_detail.at("a").n == 20.0);
  CHECK(r.divergence.statistic == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("single-cell attributes are rejected") {
  const auto d = blocks("g", {{"a", "1", "1", 10}});
  try {
    disparity::outcome_disparity(d, kG, rates_ideal(0.5, 0.5), AuditConfig{});
    FAIL("expected single_cell");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::single_cell);
  }
  CHECK_THROWS_AS(disparity::error_disparity(d, kG, AuditConfig{}), Error);
}

TEST_CASE("injected outcome skew is detected at n = 10,000") {
  auto spec = synth::calibrated_spec(synth::Origin::label, 10000, 5);
  spec.strength = 0.2;
  const auto s = synth::generate(spec);
  AuditConfig c;
  c.seed = 5;
  const auto r = disparity::outcome_disparity(s.source, kG, s.trusted_reference(), c);
  CHECK(r.flagged);
  CHECK(r.p_value <= 0.001);
}

TEST_CASE("error disparity on categorical outcomes") {
  SUBCASE("equal error rates") {
    const auto d = blocks("g", {{"a", "1", "1", 800}, {"a", "1", "0", 200}, {"b", "0", "0", 800}, {"b", "0", "1", 200}});
    const auto r = disparity::error_disparity(d, kG, AuditConfig{});
    CHECK(r.divergence.statistic == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_FALSE(r.flagged);
  }
  SUBCASE("0.10 against 0.30 at n = 2,000 per group") {
    const auto d =
        blocks("g", {{"a", "1", "1", 1800}, {"a", "1", "0", 200}, {"b", "0", "0", 1400}, {"b", "0", "1", 600}});
    const auto r = disparity::error_disparity(d, kG, AuditConfig{});
    // Oracle: independence G of the 2x2 cell-by-error table.
    const double n = 4000, e = 800;
    double g = 0.0;
    for (auto [o, row, col] : {std::tuple{1800.0, 2000.0, n - e}, std::tuple{200.0, 2000.0, e},
                               std::tuple{1400.0, 2000.0, n - e}, std::tuple{600.0, 2000.0, e}})
      g += o * std::log(o * n / (row * col));
    CHECK(r.divergence.statistic == doctest::Approx(2 * g));
    CHECK(r.flagged);
    CHECK(r.p_value < 0.01);
    CHECK(r.per_cell_detail.at("b").observed.at("1") == doctest::Approx(0.3));
  }
}

TEST_CASE("continuous errors grow with distance from the source mean age") {
  const auto s = synth::generate([] {
    synth::ScenarioSpec spec;
    spec.preset = synth::Preset::wsj_effect;
    spec.seed = 2;
    return spec;
  }());
  const double center = s.calibration.at("source_mean_age").get<double>();

  for (const bool quantile : {true, false}) {
    CAPTURE(quantile);
    AttributeSpec age{"age", AttributeKind::continuous, std::nullopt};
    if (quantile) {
      Binning b;
      b.n_bins = 5;
      age.binning = b;
    } else {
      age.binning = s.source.find_attribute("age")->binning;
    }
    const auto r = disparity::error_disparity(s.source, age, AuditConfig{});
    CHECK(r.flagged);

    // Binned-mean oracle: per-cell mean |error| and mean distance.
    const auto mapper = stats::CellMapper::build(s.source, age);
    std::map<std::string, std::array<double, 3>> acc;  // sum error, sum distance, n
    for (const auto& rec : s.source.records()) {
      auto& a = acc[*mapper.cell_of(rec)];
      a[0] += std::abs(std::get<double>(rec.y_true) - std::get<double>(rec.y_pred));
      a[1] += std::abs(std::get<double>(rec.attrs.at("age")) - center);
      a[2] += 1;
    }
    for (const auto& [cell, a] : acc)
      CHECK(r.divergence.per_cell.at(cell) == doctest::Approx(a[0] / a[2]));
    // Monotone: a cell clearly farther from the center has the larger mean
    // error. Cells within 5 years of each other are too close to order at
    // this sample size (the sd of a bin mean is about 0.3).
    for (const auto& [c1, a1] : acc)
      for (const auto& [c2, a2] : acc) {
        const double d1 = a1[1] / a1[2], d2 = a2[1] / a2[2];
        if (d1 > d2 + 5.0) CHECK(r.divergence.per_cell.at(c1) > r.divergence.per_cell.at(c2));
      }
  }
}

TEST_CASE("the same predictions can be biased under one ideal and not another") {
  const auto d = blocks("g", {{"a", "1", "1", 700}, {"a", "0", "0", 300}, {"b", "1", "1", 300}, {"b", "0", "0", 700}});
  const auto matching = disparity::outcome_disparity(d, kG, rates_ideal(0.7, 0.3), AuditConfig{});
  const auto parity = disparity::outcome_disparity(d, kG, stats::IdealDistribution::uniform(), AuditConfig{});
  CHECK_FALSE(matching.flagged);
  CHECK(parity.flagged);

  // Empirical ideal from the data itself reproduces the observed rates.
  const auto self = stats::IdealDistribution::empirical_from(d, stats::CellMapper::build(d, kG), stats::Field::y_pred);
  CHECK(disparity::outcome_disparity(d, kG, self, AuditConfig{}).divergence.statistic < 1e-9);
}

TEST_CASE("renaming cells changes keys only") {
  const auto d1 = blocks("g", {{"a", "1", "1", 60}, {"a", "0", "0", 40}, {"b", "1", "0", 30}, {"b", "0", "0", 70}});
  const auto d2 = blocks("g", {{"z", "1", "1", 60}, {"z", "0", "0", 40}, {"y", "1", "0", 30}, {"y", "0", "0", 70}});
  const auto ideal1 = rates_ideal(0.5, 0.4);
  const auto ideal2 = stats::IdealDistribution::explicit_table(
      {{"z", {{"1", 0.5}, {"0", 0.5}}}, {"y", {{"1", 0.4}, {"0", 0.6}}}});
  const auto r1 = disparity::outcome_disparity(d1, kG, ideal1, AuditConfig{});
  const auto r2 = disparity::outcome_disparity(d2, kG, ideal2, AuditConfig{});
  CHECK(r1.divergence.statistic == doctest::Approx(r2.divergence.statistic));
  CHECK(r1.divergence.per_cell.at("a") == doctest::Approx(r2.divergence.per_cell.at("z")));
  CHECK(r1.divergence.per_cell.at("b") == doctest::Approx(r2.divergence.per_cell.at("y")));
  CHECK(r1.effect_size_nats == doctest::Approx(r2.effect_size_nats));

  const auto e1 = disparity::error_disparity(d1, kG, AuditConfig{});
  const auto e2 = disparity::error_disparity(d2, kG, AuditConfig{});
  CHECK(e1.divergence.statistic == doctest::Approx(e2.divergence.statistic));
}

TEST_CASE("aggregate G never decreases as injected skew grows") {
  double previous = -1.0;
  for (double s : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5}) {
    auto spec = synth::calibrated_spec(synth::Origin::label, 4000, 77);
    spec.strength = s;
    const auto sc = synth::generate(spec);
    const auto r = disparity::outcome_disparity(sc.source, kG, sc.trusted_reference(), AuditConfig{});
    CAPTURE(s);
    CHECK(r.divergence.statistic >= previous);
    previous = r.divergence.statistic;
  }
}

TEST_CASE("unbiased synthetic data rarely flags") {
  int flagged = 0;
  const int trials = 200;
  AuditConfig c;
  c.n_permutations = 200;
  for (int t = 0; t < trials; ++t) {
    const auto sc = synth::generate(synth::calibrated_spec(synth::Origin::none, 2000, replicate_seed(900, t)));
    c.seed = static_cast<std::uint64_t>(t);
    const auto r = disparity::outcome_disparity(sc.source, kG, sc.trusted_reference(), c);
    flagged += r.flagged;
  }
  CHECK(static_cast<double>(flagged) / trials <= c.alpha + 0.02);
}

TEST_CASE("flag rule needs significance and effect") {
  AuditConfig c;
  CHECK(disparity::flag_rule(0.01, 0.02, c));
  CHECK_FALSE(disparity::flag_rule(0.05, 0.02, c));
  CHECK_FALSE(disparity::flag_rule(0.01, 0.005, c));
}
