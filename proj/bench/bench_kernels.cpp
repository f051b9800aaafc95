// Serial reference kernels against their OpenMP twins. Both produce identical
// replicate vectors; only wall time differs.

#include <benchmark/benchmark.h>

#include <numeric>

#include "biaslens/kernels.hpp"
#include "biaslens/synth.hpp"

using namespace biaslens;

namespace {

constexpr std::size_t kReplicates = 2000;

kernels::FitProblem fit_problem() {
  kernels::FitProblem p;
  for (int c = 0; c < 8; ++c) {
    p.records.push_back(1000 + 100 * c);
    p.weight_totals.push_back(1000.0 + 100.0 * c);
    p.ideal.push_back({0.3, 0.5, 0.2});
  }
  return p;
}

kernels::MembershipProblem membership_problem() {
  kernels::MembershipProblem p;
  for (int c = 0; c < 8; ++c) {
    p.group_a.push_back(500 + 40 * c);
    p.group_b.push_back(900 - 30 * c);
    p.scale_a.push_back(1.0);
    p.scale_b.push_back(1.0);
  }
  return p;
}

kernels::PairedProblem paired_problem() {
  kernels::PairedProblem p;
  p.support = 2;
  for (int c = 0; c < 6; ++c) {
    p.pairs.push_back({400, 60 + 10 * c, 40, 500});
    p.scale.push_back(1.0);
  }
  return p;
}

std::vector<int> cells(std::size_t n, int k) {
  std::vector<int> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i % static_cast<std::size_t>(k));
  return v;
}

template <bool Parallel>
void BM_multinomial(benchmark::State& state) {
  const auto p = fit_problem();
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? kernels::multinomial_null(p, kReplicates, 1)
                                      : kernels::multinomial_null_serial(p, kReplicates, 1));
}

template <bool Parallel>
void BM_membership(benchmark::State& state) {
  const auto p = membership_problem();
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? kernels::membership_null(p, kReplicates, 1)
                                      : kernels::membership_null_serial(p, kReplicates, 1));
}

template <bool Parallel>
void BM_paired_swap(benchmark::State& state) {
  const auto p = paired_problem();
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? kernels::paired_swap_null(p, kReplicates, 1)
                                      : kernels::paired_swap_null_serial(p, kReplicates, 1));
}

template <bool Parallel>
void BM_shuffle(benchmark::State& state) {
  const auto c = cells(5000, 4);
  std::vector<double> values(c.size());
  std::iota(values.begin(), values.end(), 0.0);
  auto stat = [&](const std::vector<int>& perm) { return kernels::max_mean_gap(values, perm, 4); };
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? kernels::shuffle_null(c, 500, 1, stat)
                                      : kernels::shuffle_null_serial(c, 500, 1, stat));
}

template <bool Parallel>
void BM_partition(benchmark::State& state) {
  std::vector<double> s(100);
  std::iota(s.begin(), s.end(), -50.0);
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? kernels::partition_null(s, 50, kReplicates * 5, 1)
                                      : kernels::partition_null_serial(s, 50, kReplicates * 5, 1));
}

template <bool Parallel>
void BM_power_grid(benchmark::State& state) {
  AuditConfig c;
  c.n_permutations = 200;
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? synth::power_grid(synth::Origin::label, {0.1}, {2000}, 50, 3, c)
                                      : synth::power_grid_serial(synth::Origin::label, {0.1}, {2000}, 50, 3, c));
}

}  // namespace

BENCHMARK(BM_multinomial<false>)->Name("multinomial_null/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_multinomial<true>)->Name("multinomial_null/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_membership<false>)->Name("membership_null/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_membership<true>)->Name("membership_null/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_paired_swap<false>)->Name("paired_swap_null/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_paired_swap<true>)->Name("paired_swap_null/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_shuffle<false>)->Name("shuffle_null/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_shuffle<true>)->Name("shuffle_null/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_partition<false>)->Name("partition_null/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_partition<true>)->Name("partition_null/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_power_grid<false>)->Name("power_grid/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_power_grid<true>)->Name("power_grid/omp")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
