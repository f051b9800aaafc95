#include "biaslens/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace biaslens::kernels {

double add_one_p_value(double observed, const std::vector<double>& null) {
  const double slack = 1e-12 * std::max(1.0, std::abs(observed));
  std::size_t at_least = 0;
  for (double v : null)
    if (v >= observed - slack) ++at_least;
  return static_cast<double>(1 + at_least) / static_cast<double>(1 + null.size());
}

namespace {

template <class T>
void fisher_yates(Engine& rng, std::vector<T>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

}  // namespace

void shuffle(Engine& rng, std::vector<int>& values) { fisher_yates(rng, values); }

std::int64_t hypergeometric(Engine& rng, std::int64_t population, std::int64_t successes,
                            std::int64_t draws) {
  const std::int64_t failures = population - successes;
  const std::int64_t lo = std::max<std::int64_t>(0, draws - failures);
  const std::int64_t hi = std::min(draws, successes);
  if (lo >= hi) return lo;

  auto mode = static_cast<std::int64_t>(
      std::floor(static_cast<double>(draws + 1) * static_cast<double>(successes + 1) /
                 static_cast<double>(population + 2)));
  mode = std::clamp(mode, lo, hi);

  // Unnormalized pmf relative to the mode, truncated where terms become
  // negligible next to the peak.
  constexpr double negligible = 1e-18;
  std::vector<double> below;
  double w = 1.0;
  for (std::int64_t k = mode; k > lo; --k) {
    const double kk = static_cast<double>(k);
    w *= kk * static_cast<double>(failures - draws + k) /
         (static_cast<double>(successes - k + 1) * static_cast<double>(draws - k + 1));
    if (w < negligible) break;
    below.push_back(w);
  }
  std::vector<double> above;
  w = 1.0;
  for (std::int64_t k = mode; k < hi; ++k) {
    const double kk = static_cast<double>(k);
    w *= static_cast<double>(successes - k) * static_cast<double>(draws - k) /
         ((kk + 1.0) * static_cast<double>(failures - draws + k + 1));
    if (w < negligible) break;
    above.push_back(w);
  }
  double total = 1.0;
  for (double x : below) total += x;
  for (double x : above) total += x;

  double u = uniform01(rng) * total;
  for (std::size_t i = below.size(); i-- > 0;) {
    u -= below[i];
    if (u < 0) return mode - static_cast<std::int64_t>(i) - 1;
  }
  u -= 1.0;
  if (u < 0) return mode;
  for (std::size_t i = 0; i < above.size(); ++i) {
    u -= above[i];
    if (u < 0) return mode + static_cast<std::int64_t>(i) + 1;
  }
  return mode + static_cast<std::int64_t>(above.size());
}

std::vector<std::int64_t> multinomial(Engine& rng, std::int64_t n, const std::vector<double>& p) {
  std::vector<std::int64_t> out(p.size(), 0);
  double mass = std::accumulate(p.begin(), p.end(), 0.0);
  std::int64_t left = n;
  for (std::size_t i = 0; i + 1 < p.size() && left > 0; ++i) {
    if (p[i] <= 0.0) continue;
    const double prob = mass > 0.0 ? std::clamp(p[i] / mass, 0.0, 1.0) : 0.0;
    std::binomial_distribution<std::int64_t> bin(left, prob);
    out[i] = prob >= 1.0 ? left : bin(rng);
    left -= out[i];
    mass -= p[i];
  }
  if (!p.empty()) out.back() += left;
  return out;
}

double g_fit(const std::vector<double>& observed, const std::vector<double>& p) {
  const double n = std::accumulate(observed.begin(), observed.end(), 0.0);
  if (n <= 0.0) return 0.0;
  double g = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (observed[i] <= 0.0) continue;
    if (p[i] <= 0.0) return std::numeric_limits<double>::infinity();
    g += observed[i] * std::log(observed[i] / (n * p[i]));
  }
  return 2.0 * g;
}

double g_independence(const std::vector<double>& table, std::size_t rows, std::size_t cols) {
  std::vector<double> r(rows, 0.0), c(cols, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double o = table[i * cols + j];
      r[i] += o;
      c[j] += o;
      total += o;
    }
  if (total <= 0.0) return 0.0;
  double g = 0.0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double o = table[i * cols + j];
      if (o > 0.0) g += o * std::log(o * total / (r[i] * c[j]));
    }
  return std::max(0.0, 2.0 * g);
}

// ---------------------------------------------------------------------------

namespace {

double fit_replicate(const FitProblem& problem, Engine& rng) {
  double g = 0.0;
  for (std::size_t c = 0; c < problem.records.size(); ++c) {
    const auto m = problem.records[c];
    if (m <= 0) continue;
    const auto draw = multinomial(rng, m, problem.ideal[c]);
    const double scale = problem.weight_totals[c] / static_cast<double>(m);
    std::vector<double> counts(draw.size());
    for (std::size_t k = 0; k < draw.size(); ++k) counts[k] = static_cast<double>(draw[k]) * scale;
    g += g_fit(counts, problem.ideal[c]);
  }
  return g;
}

std::vector<std::int64_t> membership_draw(const MembershipProblem& problem, Engine& rng) {
  std::int64_t population = 0, draws = 0;
  for (std::size_t c = 0; c < problem.group_a.size(); ++c) {
    population += problem.group_a[c] + problem.group_b[c];
    draws += problem.group_a[c];
  }
  std::vector<std::int64_t> a(problem.group_a.size(), 0);
  for (std::size_t c = 0; c < a.size(); ++c) {
    const std::int64_t column = problem.group_a[c] + problem.group_b[c];
    a[c] = hypergeometric(rng, population, column, draws);
    population -= column;
    draws -= a[c];
  }
  return a;
}

std::vector<std::vector<std::int64_t>> paired_draw(const PairedProblem& problem, Engine& rng) {
  const std::size_t k = problem.support;
  auto out = problem.pairs;
  for (auto& cell : out)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b) {
        const std::int64_t m = cell[a * k + b] + cell[b * k + a];
        if (m == 0) continue;
        std::binomial_distribution<std::int64_t> half(m, 0.5);
        const std::int64_t x = half(rng);
        cell[a * k + b] = x;
        cell[b * k + a] = m - x;
      }
  return out;
}

}  // namespace

std::vector<double> multinomial_null(const FitProblem& problem, std::size_t n, std::uint64_t stream) {
  return replicates(n, stream, [&](Engine& rng) { return fit_replicate(problem, rng); });
}

std::vector<double> multinomial_null_serial(const FitProblem& problem, std::size_t n,
                                            std::uint64_t stream) {
  return replicates_serial(n, stream, [&](Engine& rng) { return fit_replicate(problem, rng); });
}

double membership_statistic(const MembershipProblem& problem, const std::vector<std::int64_t>& a) {
  const std::size_t k = a.size();
  std::vector<double> table(2 * k);
  for (std::size_t c = 0; c < k; ++c) {
    const std::int64_t b = problem.group_a[c] + problem.group_b[c] - a[c];
    table[c] = static_cast<double>(a[c]) * problem.scale_a[c];
    table[k + c] = static_cast<double>(b) * problem.scale_b[c];
  }
  return g_independence(table, 2, k);
}

std::vector<double> membership_null(const MembershipProblem& problem, std::size_t n,
                                    std::uint64_t stream) {
  return replicates(n, stream, [&](Engine& rng) {
    return membership_statistic(problem, membership_draw(problem, rng));
  });
}

std::vector<double> membership_null_serial(const MembershipProblem& problem, std::size_t n,
                                           std::uint64_t stream) {
  return replicates_serial(n, stream, [&](Engine& rng) {
    return membership_statistic(problem, membership_draw(problem, rng));
  });
}

double paired_statistic(const PairedProblem& problem,
                        const std::vector<std::vector<std::int64_t>>& pairs) {
  const std::size_t k = problem.support;
  double g = 0.0;
  std::vector<double> table(2 * k);
  for (std::size_t c = 0; c < pairs.size(); ++c) {
    std::fill(table.begin(), table.end(), 0.0);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        const double x = static_cast<double>(pairs[c][a * k + b]) * problem.scale[c];
        table[a] += x;      // y_true row
        table[k + b] += x;  // y_pred row
      }
    g += g_independence(table, 2, k);
  }
  return g;
}

std::vector<double> paired_swap_null(const PairedProblem& problem, std::size_t n,
                                     std::uint64_t stream) {
  return replicates(n, stream, [&](Engine& rng) {
    return paired_statistic(problem, paired_draw(problem, rng));
  });
}

std::vector<double> paired_swap_null_serial(const PairedProblem& problem, std::size_t n,
                                            std::uint64_t stream) {
  return replicates_serial(n, stream, [&](Engine& rng) {
    return paired_statistic(problem, paired_draw(problem, rng));
  });
}

double max_mean_gap(const std::vector<double>& values, const std::vector<int>& groups,
                    std::size_t n_groups) {
  std::vector<double> sum(n_groups, 0.0);
  std::vector<std::size_t> count(n_groups, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum[static_cast<std::size_t>(groups[i])] += values[i];
    ++count[static_cast<std::size_t>(groups[i])];
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t g = 0; g < n_groups; ++g) {
    if (count[g] == 0) continue;
    const double mean = sum[g] / static_cast<double>(count[g]);
    lo = std::min(lo, mean);
    hi = std::max(hi, mean);
  }
  return hi >= lo ? hi - lo : 0.0;
}

double g_groups(const std::vector<int>& values, std::size_t n_values, const std::vector<int>& groups,
                std::size_t n_groups, const std::vector<double>& weights) {
  std::vector<double> table(n_groups * n_values, 0.0);
  for (std::size_t i = 0; i < values.size(); ++i)
    table[static_cast<std::size_t>(groups[i]) * n_values + static_cast<std::size_t>(values[i])] +=
        weights.empty() ? 1.0 : weights[i];
  return g_independence(table, n_groups, n_values);
}

namespace {

double partition_replicate(const std::vector<double>& s, std::size_t size_x, Engine& rng) {
  std::vector<double> perm = s;
  fisher_yates(rng, perm);
  double sum = 0.0;
  for (std::size_t i = 0; i < size_x; ++i) sum += perm[i];
  return sum;
}

}  // namespace

std::vector<double> partition_null(const std::vector<double>& s, std::size_t size_x, std::size_t n,
                                   std::uint64_t stream) {
  return replicates(n, stream, [&](Engine& rng) { return partition_replicate(s, size_x, rng); });
}

std::vector<double> partition_null_serial(const std::vector<double>& s, std::size_t size_x,
                                          std::size_t n, std::uint64_t stream) {
  return replicates_serial(n, stream,
                           [&](Engine& rng) { return partition_replicate(s, size_x, rng); });
}

}  // namespace biaslens::kernels
