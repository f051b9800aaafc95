#include <doctest.h>

#include "biaslens/disparity.hpp"
#include "biaslens/error.hpp"
#include "biaslens/origins.hpp"
#include "biaslens/synth.hpp"
#include "support.hpp"

using namespace biaslens;
using origins::Origin;
using support::blocks;

namespace {

const AttributeSpec kG{"g", AttributeKind::categorical, std::nullopt};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::usage;
}

origins::TargetReference marginal(stats::Table t) {
  origins::TargetReference r;
  r.marginal = std::move(t);
  return r;
}

synth::Scenario preset(synth::Preset p, std::uint64_t seed) {
  synth::ScenarioSpec spec;
  spec.preset = p;
  spec.seed = seed;
  return synth::generate(spec);
}

}  // namespace

TEST_CASE("selection: 0.8/0.2 against 0.5/0.5 at n = 1,000") {
  const auto d = blocks("g", {{"a", "1", "1", 800}, {"b", "1", "1", 200}});
  const auto f = origins::selection_bias_check(d, marginal({{"a", 0.5}, {"b", 0.5}}), kG, AuditConfig{});
  CHECK(f.divergence.statistic == doctest::Approx(support::oracle_kl({0.8, 0.2}, {0.5, 0.5})));
  CHECK(f.divergence.statistic == doctest::Approx(0.1927).epsilon(1e-3));
  CHECK(f.effect_size_nats == doctest::Approx(f.divergence.statistic));
  CHECK(f.flagged);
  CHECK(f.p_value == doctest::Approx(1.0 / 1001.0));
  CHECK(f.caveat == origins::kCaveat);
}

TEST_CASE("selection: identical marginals") {
  const auto d = blocks("g", {{"a", "1", "1", 500}, {"b", "1", "1", 500}});
  const auto f = origins::selection_bias_check(d, marginal({{"a", 1.0}, {"b", 1.0}}), kG, AuditConfig{});
  CHECK(f.divergence.statistic == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_FALSE(f.flagged);
}

TEST_CASE("selection: reference dataset null agrees with the marginal null") {
  const auto d = blocks("g", {{"a", "1", "1", 300}, {"b", "1", "1", 200}});
  const auto ref = blocks("g", {{"a", "1", "1", 250}, {"b", "1", "1", 250}}, Split::target);
  origins::TargetReference t;
  t.dataset = &ref;
  const auto f = origins::selection_bias_check(d, t, kG, AuditConfig{});
  CHECK(f.divergence.statistic == doctest::Approx(support::oracle_kl({0.6, 0.4}, {0.5, 0.5})));
  CHECK(f.flagged);
}

TEST_CASE("selection errors") {
  const auto d = blocks("g", {{"a", "1", "1", 5}, {"b", "1", "1", 5}});
  CHECK(code_of([&] { origins::selection_bias_check(d, {}, kG, AuditConfig{}); }) == ErrorCode::missing_reference);
  CHECK(code_of([&] {
          origins::selection_bias_check(d, marginal({{"c", 0.5}, {"d", 0.5}}), kG, AuditConfig{});
        }) == ErrorCode::support_mismatch);
}

TEST_CASE("selection: the WSJ preset is unrepresentative in age") {
  const auto s = preset(synth::Preset::wsj_effect, 4);
  const AttributeSpec age = *s.source.find_attribute("age");
  origins::TargetReference t;
  t.dataset = &s.target_reference;
  const auto f = origins::selection_bias_check(s.source, t, age, s.recommended_config);
  CHECK(f.flagged);
  const auto m = origins::selection_bias_check(s.source, marginal(s.target_marginal), age, s.recommended_config);
  CHECK(m.flagged);
}

TEST_CASE("label: annotators over-label group A") {
  const auto s = preset(synth::Preset::hate_speech, 8);
  const AttributeSpec group{"group", AttributeKind::categorical, std::nullopt};
  const auto trusted = s.trusted_reference();
  const auto f = origins::label_bias_check(s.source, &trusted, group, s.recommended_config);
  CHECK(f.flagged);
  CHECK(f.detail.at("A").at("toxic").at("observed").get<double>() == doctest::Approx(0.40).epsilon(0.1));
  CHECK(f.detail.at("A").at("toxic").at("reference").get<double>() == doctest::Approx(0.25));
}

TEST_CASE("label: matching labels and self reference") {
  const auto d = blocks("g", {{"a", "1", "1", 25}, {"a", "0", "0", 75}, {"b", "1", "1", 50}, {"b", "0", "0", 50}});
  const auto exact = stats::IdealDistribution::explicit_table(
      {{"a", {{"1", 0.25}, {"0", 0.75}}}, {"b", {{"1", 0.5}, {"0", 0.5}}}});
  const auto f = origins::label_bias_check(d, &exact, kG, AuditConfig{});
  CHECK_FALSE(f.flagged);

  const auto self = stats::IdealDistribution::empirical_from(d, stats::CellMapper::build(d, kG), stats::Field::y_true);
  const auto g = origins::label_bias_check(d, &self, kG, AuditConfig{});
  CHECK(g.divergence.statistic < 1e-9);
  CHECK_FALSE(g.flagged);
}

TEST_CASE("label: a trusted reference is required") {
  const auto d = blocks("g", {{"a", "1", "1", 5}, {"b", "0", "0", 5}});
  try {
    origins::label_bias_check(d, nullptr, kG, AuditConfig{});
    FAIL("expected missing_reference");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::missing_reference);
    CHECK(std::string(e.what()).find("trusted") != std::string::npos);
  }
}

TEST_CASE("overamplification: kitchen captions") {
  const auto s = preset(synth::Preset::kitchen, 0);
  const AttributeSpec scene{"scene", AttributeKind::categorical, std::nullopt};
  const auto f = origins::overamplification_check(s.source, scene, s.recommended_config);
  CHECK(f.flagged);
  CHECK(f.p_value < 0.01);
  REQUIRE(f.direction);
  CHECK(*f.direction == "amplified");
  CHECK(f.detail.at("kitchen").at("direction") == "amplified");
  CHECK(f.detail.at("kitchen").at("signed_gap").at("woman").get<double>() == doctest::Approx(0.05).epsilon(0.1));
}

TEST_CASE("overamplification: predictions equal to labels") {
  const auto d = blocks("g", {{"a", "1", "1", 300}, {"a", "0", "0", 700}, {"b", "1", "1", 500}, {"b", "0", "0", 500}});
  const auto f = origins::overamplification_check(d, kG, AuditConfig{});
  CHECK(f.divergence.statistic < 1e-9);
  CHECK_FALSE(f.flagged);
  CHECK(*f.direction == "unchanged");
}

TEST_CASE("overamplification: threshold model widens a 0.08 base-rate gap") {
  auto spec = synth::calibrated_spec(synth::Origin::overamp, 10000, 12);
  spec.base_rates = {{"a", 0.46}, {"b", 0.54}};
  const auto s = synth::generate(spec);
  std::map<std::string, std::array<double, 2>> pos;  // predicted positives, n
  for (const auto& r : s.source.records()) {
    auto& p = pos[std::get<std::string>(r.attrs.at("g"))];
    p[0] += std::get<std::string>(r.y_pred) == "1";
    p[1] += 1;
  }
  const double gap = pos["b"][0] / pos["b"][1] - pos["a"][0] / pos["a"][1];
  CHECK(gap >= 0.08);
  const auto f = origins::overamplification_check(s.source, kG, s.recommended_config);
  CHECK(f.flagged);
  CHECK(*f.direction == "amplified");
}

TEST_CASE("overamplification: errors") {
  const auto tgt = blocks("g", {{"a", "1", "1", 5}, {"b", "0", "0", 5}}, Split::target);
  CHECK(code_of([&] { origins::overamplification_check(tgt, kG, AuditConfig{}); }) == ErrorCode::empty_distribution);
}

TEST_CASE("table cells") {
  CHECK(origins::table_cell(true, true) == std::vector<Origin>{Origin::selection_bias, Origin::label_bias});
  CHECK(origins::table_cell(true, false) == std::vector<Origin>{Origin::selection_bias});
  CHECK(origins::table_cell(false, true) == std::vector<Origin>{Origin::label_bias});
  CHECK(origins::table_cell(false, false).empty());
  CHECK(origins::cell_label({}) == "no bias");
}

TEST_CASE("diagnose maps the synthetic quadrants") {
  struct Case {
    synth::Origin injected;
    std::vector<Origin> expected;
  };
  for (const auto& c : {Case{synth::Origin::compound, {Origin::selection_bias, Origin::label_bias}},
                        Case{synth::Origin::selection, {Origin::selection_bias}},
                        Case{synth::Origin::label, {Origin::label_bias}}, Case{synth::Origin::none, {}}}) {
    CAPTURE(synth::to_string(c.injected));
    const auto s = synth::generate(synth::calibrated_spec(c.injected, 10000, 31));
    origins::TargetReference t;
    t.dataset = &s.target_reference;
    const auto trusted = s.trusted_reference();
    const auto m = origins::diagnose(s.source, t, &trusted, kG, s.recommended_config);
    CHECK(m.table_cell == c.expected);
    REQUIRE(m.representative);
    CHECK(*m.representative == !m.selection->flagged);
    REQUIRE(m.correct_annotation);
    CHECK(m.caveat == origins::kCaveat);
  }
}

TEST_CASE("diagnose without references leaves those axes unset") {
  const auto s = synth::generate(synth::calibrated_spec(synth::Origin::none, 2000, 3));
  const auto m = origins::diagnose(s.source, {}, nullptr, kG, s.recommended_config);
  CHECK_FALSE(m.representative);
  CHECK_FALSE(m.correct_annotation);
  CHECK_FALSE(m.selection);
  CHECK_FALSE(m.label);
  CHECK(m.overamplification);
  CHECK(m.cell_label == "no bias");
}

TEST_CASE("overamplification ignores the target reference") {
  const auto s = synth::generate(synth::calibrated_spec(synth::Origin::overamp, 4000, 6));
  const auto uniform = marginal({{"a", 0.5}, {"b", 0.5}});
  const auto skewed = marginal({{"a", 0.9}, {"b", 0.1}});
  const auto m1 = origins::diagnose(s.source, uniform, nullptr, kG, s.recommended_config);
  const auto m2 = origins::diagnose(s.source, skewed, nullptr, kG, s.recommended_config);
  const auto m3 = origins::overamplification_check(s.source, kG, s.recommended_config);
  CHECK(m1.overamplification->divergence.statistic == m2.overamplification->divergence.statistic);
  CHECK(m1.overamplification->p_value == m2.overamplification->p_value);
  CHECK(m1.overamplification->p_value == m3.p_value);
  CHECK(m1.selection->divergence.statistic != m2.selection->divergence.statistic);
}

TEST_CASE("compound injection flags both origins") {
  const auto s = synth::generate(synth::calibrated_spec(synth::Origin::compound, 10000, 44));
  origins::TargetReference t;
  t.dataset = &s.target_reference;
  const auto trusted = s.trusted_reference();
  const auto m = origins::diagnose(s.source, t, &trusted, kG, s.recommended_config);
  const auto flagged = m.flagged_origins();
  CHECK(std::count(flagged.begin(), flagged.end(), Origin::selection_bias) == 1);
  CHECK(std::count(flagged.begin(), flagged.end(), Origin::label_bias) == 1);
}
