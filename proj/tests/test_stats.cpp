#include <doctest.h>

#include <random>

#include "biaslens/error.hpp"
#include "biaslens/rng.hpp"
#include "biaslens/stats.hpp"
#include "support.hpp"

using namespace biaslens;
using stats::Table;

TEST_CASE("kl divergence matches direct summation") {
  CHECK(stats::kl_divergence({{"a", 0.9}, {"b", 0.1}}, {{"a", 0.5}, {"b", 0.5}}) ==
        doctest::Approx(0.368064).epsilon(1e-6));
  CHECK(stats::kl_divergence({{"a", 0.8}, {"b", 0.2}}, {{"a", 0.5}, {"b", 0.5}}) ==
        doctest::Approx(support::oracle_kl({0.8, 0.2}, {0.5, 0.5})));
  CHECK(stats::kl_divergence({{"a", 0.3}, {"b", 0.7}}, {{"a", 0.3}, {"b", 0.7}}) == 0.0);
  // Zero-probability outcomes of q contribute nothing.
  CHECK(stats::kl_divergence({{"a", 1.0}, {"b", 0.0}}, {{"a", 0.5}, {"b", 0.5}}) ==
        doctest::Approx(std::log(2.0)));
}

TEST_CASE("kl divergence failure modes") {
  try {
    stats::kl_divergence({{"a", 0.5}, {"c", 0.5}}, {{"a", 0.5}, {"b", 0.5}});
    FAIL("expected support mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::support_mismatch);
  }
  try {
    stats::kl_divergence({{"a", 0.5}, {"b", 0.5}}, {{"a", 1.0}, {"b", 0.0}});
    FAIL("expected infinite divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::infinite_divergence);
  }
}

TEST_CASE("G statistic of a fixed table") {
  const auto g = stats::llr_statistic({{"a", 90}, {"b", 10}}, {{"a", 0.5}, {"b", 0.5}});
  CHECK(g.statistic == doctest::Approx(73.6129).epsilon(1e-6));
  CHECK(g.statistic == doctest::Approx(support::oracle_g({90, 10}, {0.5, 0.5})));
}

TEST_CASE("G equals 2n KL on random tables") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> k_dist(2, 6), count(0, 500);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int t = 0; t < 1000; ++t) {
    const int k = k_dist(rng);
    Table counts, p;
    double n = 0, z = 0;
    for (int i = 0; i < k; ++i) {
      const auto key = std::string(1, static_cast<char>('a' + i));
      counts[key] = count(rng);
      n += counts[key];
      p[key] = u(rng);
      z += p[key];
    }
    if (n == 0) continue;
    for (auto& [key, v] : p) v /= z;
    Table q;
    for (const auto& [key, c] : counts) q[key] = c / n;
    const double g = stats::llr_statistic(counts, p).statistic;
    CHECK(std::abs(g - 2.0 * n * stats::kl_divergence(q, p)) < 1e-9 * std::max(1.0, g));
  }
}

TEST_CASE("conditional estimate applies additive smoothing") {
  const auto d = support::blocks("g", {{"a", "1", "1", 3}, {"a", "0", "0", 1}, {"b", "0", "1", 2}});
  AttributeSpec g{"g", AttributeKind::categorical, std::nullopt};
  const auto q = stats::estimate_conditional(d, g, stats::Field::y_true, stats::SplitFilter::both, 0.5);
  // (count + alpha) / (n + alpha K)
  CHECK(q.cells.at("a").probs.at("1") == doctest::Approx(3.5 / 5.0));
  CHECK(q.cells.at("b").probs.at("1") == doctest::Approx(0.5 / 3.0));
  CHECK(q.cells.at("b").n == 2.0);

  const auto raw = stats::estimate_conditional(d, g, stats::Field::y_pred, stats::SplitFilter::both, 0.0);
  CHECK(raw.cells.at("b").probs.at("1") == 1.0);
  CHECK(raw.cells.at("a").probs.at("0") == doctest::Approx(0.25));
}

TEST_CASE("record weights scale counts") {
  std::vector<PredictionRecord> rs = {support::rec("a", "1", "1", {{"g", "x"}}, Split::source, 3.0),
                                      support::rec("b", "0", "0", {{"g", "x"}}, Split::source, 1.0)};
  const Dataset d(rs);
  AttributeSpec g{"g", AttributeKind::categorical, std::nullopt};
  const auto q = stats::estimate_conditional(d, g, stats::Field::y_true, stats::SplitFilter::both, 0.0);
  CHECK(q.cells.at("x").probs.at("1") == doctest::Approx(0.75));
  CHECK(q.cells.at("x").records == 2);
}

TEST_CASE("empty selection throws") {
  const auto d = support::blocks("g", {{"a", "1", "1", 3}}, Split::source);
  AttributeSpec g{"g", AttributeKind::categorical, std::nullopt};
  try {
    stats::estimate_conditional(d, g, stats::Field::y_true, stats::SplitFilter::target, 0.5);
    FAIL("expected empty distribution");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_distribution);
  }
}

TEST_CASE("fixed-edge binning labels and assignment") {
  std::vector<PredictionRecord> rs;
  const std::vector<double> ages = {18, 29.9, 30, 41, 80, 54};
  for (std::size_t i = 0; i < ages.size(); ++i)
    rs.push_back(support::rec("r" + std::to_string(i), "1", "1", {{"age", ages[i]}}));
  const Dataset d(rs);
  Binning b;
  b.strategy = Binning::Strategy::fixed_edges;
  b.edges = {18, 30, 42, 54, 66, 80};
  const auto m = stats::CellMapper::build(d, {"age", AttributeKind::continuous, b});
  REQUIRE(m.cells().size() == 5);
  CHECK(m.cells().front() == "00:[18,30)");
  CHECK(m.cells().back() == "04:[66,80]");
  CHECK(*m.cell_of(rs[0]) == "00:[18,30)");
  CHECK(*m.cell_of(rs[1]) == "00:[18,30)");
  CHECK(*m.cell_of(rs[2]) == "01:[30,42)");
  CHECK(*m.cell_of(rs[4]) == "04:[66,80]");
  CHECK(*m.cell_of(rs[5]) == "03:[54,66)");
}

TEST_CASE("quantile binning gives near-equal bins") {
  std::vector<PredictionRecord> rs;
  for (int i = 0; i < 1000; ++i) rs.push_back(support::rec("r" + std::to_string(i), "1", "1", {{"x", i * 0.1}}));
  const Dataset d(rs);
  Binning b;
  b.n_bins = 4;
  const auto m = stats::CellMapper::build(d, {"x", AttributeKind::continuous, b});
  REQUIRE(m.cells().size() == 4);
  std::map<std::string, int> n;
  for (const auto& r : rs) ++n[*m.cell_of(r)];
  for (const auto& [cell, c] : n) CHECK(c == 250);
  // Lexical order is bin order.
  CHECK(std::is_sorted(m.cells().begin(), m.cells().end()));
}

TEST_CASE("ideal distributions") {
  const auto d = support::blocks("g", {{"a", "1", "1", 3}, {"a", "0", "0", 1}, {"b", "0", "1", 4}});
  AttributeSpec g{"g", AttributeKind::categorical, std::nullopt};
  const auto mapper = stats::CellMapper::build(d, g);
  const std::vector<std::string> support = {"0", "1"};

  SUBCASE("uniform") {
    const auto u = stats::IdealDistribution::uniform();
    CHECK(u.row("a", support).at("0") == doctest::Approx(0.5));
  }
  SUBCASE("explicit with wildcard") {
    const auto e = stats::IdealDistribution::explicit_table({{"*", {{"0", 0.2}, {"1", 0.8}}},
                                                             {"b", {{"0", 0.6}, {"1", 0.4}}}});
    CHECK(e.row("a", support).at("1") == doctest::Approx(0.8));
    CHECK(e.row("b", support).at("1") == doctest::Approx(0.4));
  }
  SUBCASE("explicit rows must sum to one") {
    CHECK_THROWS_AS(stats::IdealDistribution::explicit_table({{"a", {{"0", 0.2}, {"1", 0.7}}}}), Error);
  }
  SUBCASE("empirical reproduces the reference") {
    const auto e = stats::IdealDistribution::empirical_from(d, mapper, stats::Field::y_true);
    CHECK(e.row("a", support).at("1") == doctest::Approx(0.75));
    CHECK(e.row("b", support).at("0") == doctest::Approx(1.0));
  }
  SUBCASE("toward uniform endpoints are exact") {
    const auto base = stats::IdealDistribution::explicit_table({{"*", {{"0", 0.1}, {"1", 0.9}}}});
    CHECK(stats::IdealDistribution::toward_uniform(base, 0.0).row("a", support).at("1") == 0.9);
    CHECK(stats::IdealDistribution::toward_uniform(base, 1.0).row("a", support).at("1") == 0.5);
    CHECK(stats::IdealDistribution::toward_uniform(base, 0.5).row("a", support).at("1") ==
          doctest::Approx(0.7));
  }
  SUBCASE("empirical from a missing reference") {
    IdealSpec spec;
    spec.type = IdealSpec::Type::empirical;
    spec.from = "trusted_ref";
    try {
      stats::resolve_ideal(spec, mapper, d, nullptr, nullptr);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK((e.code() == ErrorCode::unresolvable_ideal || e.code() == ErrorCode::missing_reference));
    }
  }
}

TEST_CASE("permutation test p-value formula") {
  const auto d = support::blocks("g", {{"a", "1", "1", 20}, {"b", "0", "0", 20}});
  AttributeSpec g{"g", AttributeKind::categorical, std::nullopt};
  const auto mapper = stats::CellMapper::build(d, g);

  // A constant statistic ties with every replicate: p = 1.
  const auto flat = stats::permutation_test(
      d, mapper, stats::SplitFilter::both, [](const auto&, const auto&) { return 1.0; }, 200, 1);
  CHECK(flat.p_value == 1.0);

  // Perfect separation: the share of "1" labels in cell 0.
  auto share = [](const std::vector<const PredictionRecord*>& rs, const std::vector<int>& cells) {
    double hit = 0, n = 0;
    for (std::size_t i = 0; i < rs.size(); ++i)
      if (cells[i] == 0) {
        n += 1;
        hit += std::get<std::string>(rs[i]->y_true) == "1";
      }
    return hit / n;
  };
  const auto r = stats::permutation_test(d, mapper, stats::SplitFilter::both, share, 999, 1);
  CHECK(r.observed == 1.0);
  CHECK(r.p_value == doctest::Approx(1.0 / 1000.0));

  const auto again = stats::permutation_test(d, mapper, stats::SplitFilter::both, share, 999, 1);
  CHECK(again.p_value == r.p_value);
}

TEST_CASE("derived seeds separate streams") {
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(replicate_seed(5, 0) != replicate_seed(5, 1));
}
