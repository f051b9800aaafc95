#pragma once

// Resampling kernels. Every replicate draws from its own generator seeded by
// replicate_seed(stream, index), so the OpenMP versions return exactly the
// same null distribution as the `_serial` versions whatever the schedule.

#include <cstdint>
#include <vector>

#include "biaslens/rng.hpp"

namespace biaslens::kernels {

/// (1 + #{null >= observed}) / (1 + B). A tiny relative tolerance keeps
/// replicates that equal the observed value up to rounding in the count.
double add_one_p_value(double observed, const std::vector<double>& null);

template <class F>
std::vector<double> replicates_serial(std::size_t n, std::uint64_t stream, F&& f) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Engine rng(replicate_seed(stream, i));
    out[i] = f(rng);
  }
  return out;
}

template <class F>
std::vector<double> replicates(std::size_t n, std::uint64_t stream, F&& f) {
  std::vector<double> out(n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    Engine rng(replicate_seed(stream, static_cast<std::uint64_t>(i)));
    out[static_cast<std::size_t>(i)] = f(rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Samplers

/// Successes in `draws` draws without replacement from `population` items of
/// which `successes` are marked. Exact inversion over the normalized pmf.
std::int64_t hypergeometric(Engine& rng, std::int64_t population, std::int64_t successes,
                            std::int64_t draws);

/// Multinomial counts for `n` trials via sequential binomials.
std::vector<std::int64_t> multinomial(Engine& rng, std::int64_t n, const std::vector<double>& p);

void shuffle(Engine& rng, std::vector<int>& values);

// ---------------------------------------------------------------------------
// Statistics shared by kernels and checks

/// Goodness-of-fit G for one cell: 2 sum O ln(O / (n p)).
double g_fit(const std::vector<double>& observed, const std::vector<double>& p);

/// Independence G for an R x C table of counts (row-major).
double g_independence(const std::vector<double>& table, std::size_t rows, std::size_t cols);

// ---------------------------------------------------------------------------
// Null distributions

/// Goodness of fit of per-cell counts to per-cell ideal rows. Each replicate
/// draws record counts from Multinomial(records_c, ideal_c), scales them by
/// weight_c / records_c, and returns the summed G.
struct FitProblem {
  std::vector<std::int64_t> records;       // per cell
  std::vector<double> weight_totals;       // per cell
  std::vector<std::vector<double>> ideal;  // per cell, over the support
};

std::vector<double> multinomial_null(const FitProblem& problem, std::size_t n, std::uint64_t stream);
std::vector<double> multinomial_null_serial(const FitProblem& problem, std::size_t n,
                                            std::uint64_t stream);

/// Independence of group membership (row) and cell (column): each replicate
/// redistributes the first group's records over cells by multivariate
/// hypergeometric sampling from the pooled column totals.
struct MembershipProblem {
  std::vector<std::int64_t> group_a;  // per cell record counts
  std::vector<std::int64_t> group_b;
  std::vector<double> scale_a;        // per cell weight per record (1 if unweighted)
  std::vector<double> scale_b;
};

double membership_statistic(const MembershipProblem& problem, const std::vector<std::int64_t>& a);
std::vector<double> membership_null(const MembershipProblem& problem, std::size_t n,
                                    std::uint64_t stream);
std::vector<double> membership_null_serial(const MembershipProblem& problem, std::size_t n,
                                           std::uint64_t stream);

/// Paired (y_true, y_pred) outcomes per cell. Under the null the two labels of
/// each record are exchangeable, so every discordant pair (a, b) is flipped to
/// (b, a) with probability 1/2. The statistic is the summed per-cell
/// homogeneity G between the y_true and y_pred label counts.
struct PairedProblem {
  std::size_t support = 0;
  /// Per cell, K x K matrix (row = y_true, col = y_pred) of record counts.
  std::vector<std::vector<std::int64_t>> pairs;
  std::vector<double> scale;  // per cell weight per record
};

double paired_statistic(const PairedProblem& problem,
                        const std::vector<std::vector<std::int64_t>>& pairs);
std::vector<double> paired_swap_null(const PairedProblem& problem, std::size_t n,
                                     std::uint64_t stream);
std::vector<double> paired_swap_null_serial(const PairedProblem& problem, std::size_t n,
                                            std::uint64_t stream);

/// Record-level label shuffle. `statistic` receives the permuted cell vector.
template <class Stat>
std::vector<double> shuffle_null(const std::vector<int>& cells, std::size_t n, std::uint64_t stream,
                                 Stat&& statistic) {
  return replicates(n, stream, [&](Engine& rng) {
    std::vector<int> perm = cells;
    shuffle(rng, perm);
    return statistic(perm);
  });
}

template <class Stat>
std::vector<double> shuffle_null_serial(const std::vector<int>& cells, std::size_t n,
                                        std::uint64_t stream, Stat&& statistic) {
  return replicates_serial(n, stream, [&](Engine& rng) {
    std::vector<int> perm = cells;
    shuffle(rng, perm);
    return statistic(perm);
  });
}

/// Group statistic over a fixed value vector: max minus min of per-group
/// means (groups with no members ignored).
double max_mean_gap(const std::vector<double>& values, const std::vector<int>& groups,
                    std::size_t n_groups);

/// Independence G between group labels and a categorical value vector.
double g_groups(const std::vector<int>& values, std::size_t n_values,
                const std::vector<int>& groups, std::size_t n_groups,
                const std::vector<double>& weights);

/// WEAT partition null: replicate statistic is the sum of the first `size_x`
/// entries of a random permutation of `s`.
std::vector<double> partition_null(const std::vector<double>& s, std::size_t size_x, std::size_t n,
                                   std::uint64_t stream);
std::vector<double> partition_null_serial(const std::vector<double>& s, std::size_t size_x,
                                          std::size_t n, std::uint64_t stream);

}  // namespace biaslens::kernels
