#pragma once

// Shared fixtures and independent oracles. The oracles recompute quantities
// from their textbook definitions and never call library code.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "biaslens/model.hpp"

namespace support {

using biaslens::PredictionRecord;

inline PredictionRecord rec(std::string id, std::string y_true, std::string y_pred,
                            std::map<std::string, biaslens::AttributeValue> attrs,
                            biaslens::Split split = biaslens::Split::source, double weight = 1.0) {
  PredictionRecord r;
  r.id = std::move(id);
  r.y_true = std::move(y_true);
  r.y_pred = std::move(y_pred);
  r.attrs = std::move(attrs);
  r.split = split;
  r.weight = weight;
  return r;
}

/// Records with the given number of (cell, y_true, y_pred) rows.
struct Block {
  std::string cell;
  std::string y_true;
  std::string y_pred;
  int count;
};

inline biaslens::Dataset blocks(const std::string& attribute, const std::vector<Block>& rows,
                                biaslens::Split split = biaslens::Split::source) {
  std::vector<PredictionRecord> out;
  for (const auto& b : rows)
    for (int i = 0; i < b.count; ++i)
      out.push_back(rec("r" + std::to_string(out.size()), b.y_true, b.y_pred, {{attribute, b.cell}}, split));
  return biaslens::Dataset(std::move(out));
}

// ---------------------------------------------------------------------------
// Oracles

inline double oracle_kl(const std::vector<double>& q, const std::vector<double>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i)
    if (q[i] > 0) s += q[i] * (std::log(q[i]) - std::log(p[i]));
  return s;
}

inline double oracle_g(const std::vector<double>& counts, const std::vector<double>& p) {
  double n = 0.0;
  for (double c : counts) n += c;
  double g = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] > 0) g += counts[i] * std::log(counts[i] / (n * p[i]));
  return 2.0 * g;
}

inline double log_choose(double n, double k) {
  return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1);
}

inline double hypergeometric_pmf(long population, long successes, long draws, long k) {
  if (k < 0 || k > successes || k > draws || draws - k > population - successes) return 0.0;
  return std::exp(log_choose(successes, k) + log_choose(population - successes, draws - k) -
                  log_choose(population, draws));
}

/// Upper tail of the chi-square distribution by numerical integration of the
/// density (adequate for the moderate degrees of freedom used in tests).
inline double chi_square_sf(double x, int dof) {
  const double k = dof / 2.0;
  const double log_norm = -k * std::log(2.0) - std::lgamma(k);
  auto pdf = [&](double t) { return t <= 0 ? 0.0 : std::exp(log_norm + (k - 1) * std::log(t) - t / 2); };
  const int steps = 200000;
  const double upper = x + 400.0;
  const double h = (upper - x) / steps;
  double s = pdf(x) + pdf(upper);
  for (int i = 1; i < steps; ++i) s += (i % 2 ? 4 : 2) * pdf(x + i * h);
  return s * h / 3.0;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("biaslens_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace support
