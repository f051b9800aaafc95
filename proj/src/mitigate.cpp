#include "biaslens/mitigate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "biaslens/error.hpp"
#include "biaslens/rng.hpp"

namespace biaslens::mitigate {

stats::WeightAssignment poststratify_weights(const stats::Table& source_marginal,
                                             const stats::Table& target_marginal,
                                             const std::string& attribute) {
  const auto src = stats::normalize(source_marginal);
  const auto tgt = stats::normalize(target_marginal);
  std::vector<std::string> unrecoverable;
  for (const auto& [cell, t] : tgt) {
    auto it = src.find(cell);
    if (t > 0.0 && (it == src.end() || it->second <= 0.0)) unrecoverable.push_back(cell);
  }
  if (!unrecoverable.empty())
    throw Error(ErrorCode::support_mismatch,
                fmt::format("target mass on cell(s) with no source records cannot be recovered by "
                            "reweighting: {}",
                            fmt::join(unrecoverable, ", ")));
  stats::WeightAssignment w;
  w.attribute = attribute;
  for (const auto& [cell, s] : src) {
    auto it = tgt.find(cell);
    const double t = it == tgt.end() ? 0.0 : it->second;
    w.weights[cell] = s > 0.0 ? t / s : 0.0;
  }
  return w;
}

Dataset apply_weights(const Dataset& dataset, const stats::CellMapper& mapper,
                      const stats::WeightAssignment& weights) {
  std::vector<PredictionRecord> out = dataset.records();
  for (auto& r : out) {
    const auto cell = mapper.cell_of(r);
    if (!cell) continue;
    auto it = weights.weights.find(*cell);
    if (it != weights.weights.end()) r.weight *= it->second;
  }
  return Dataset(std::move(out), dataset.attribute_specs(), dataset.outcome_kind());
}

ResampleMode parse_resample_mode(std::string_view text) {
  if (text == "down") return ResampleMode::down;
  if (text == "up" || text == "up_with_replacement") return ResampleMode::up_with_replacement;
  throw Error(ErrorCode::usage, fmt::format("unknown resample mode '{}' (down, up)", text));
}

std::map<std::string, std::size_t> apportion(const stats::Table& target, std::size_t n) {
  const auto t = stats::normalize(target);
  std::map<std::string, std::size_t> out;
  std::vector<std::pair<double, std::string>> remainders;
  std::size_t assigned = 0;
  for (const auto& [cell, p] : t) {
    const double exact = p * static_cast<double>(n);
    auto base = static_cast<std::size_t>(std::floor(exact + 1e-9));
    if (static_cast<double>(base) > exact + 1e-9) base = static_cast<std::size_t>(std::floor(exact));
    out[cell] = base;
    assigned += base;
    remainders.emplace_back(exact - static_cast<double>(base), cell);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n && i < remainders.size(); ++i, ++assigned)
    ++out[remainders[i].second];
  return out;
}

Dataset stratified_resample(const Dataset& dataset, const AttributeSpec& attribute,
                            const stats::Table& target_marginal, ResampleMode mode,
                            std::uint64_t seed, std::optional<std::size_t> n_out) {
  const auto mapper = stats::CellMapper::build(dataset, attribute);
  const auto target = stats::normalize(target_marginal);
  const auto& records = dataset.records();

  std::map<std::string, std::vector<std::size_t>> members;
  for (const auto& cell : mapper.cells()) members[cell];
  for (std::size_t i = 0; i < records.size(); ++i)
    if (auto cell = mapper.cell_of(records[i])) members[*cell].push_back(i);

  stats::Table t;
  for (const auto& [cell, list] : members) t[cell] = 0.0;
  for (const auto& [cell, p] : target) {
    if (p > 0.0 && (!members.count(cell) || members[cell].empty()))
      throw Error(ErrorCode::infeasible,
                  fmt::format("cell '{}' has target mass but no records to sample from", cell));
    t[cell] = p;
  }

  auto counts_for = [&](std::size_t n) { return apportion(t, n); };
  std::map<std::string, std::size_t> counts;
  if (mode == ResampleMode::down) {
    if (n_out) {
      counts = counts_for(*n_out);
      for (const auto& [cell, k] : counts)
        if (k > members[cell].size())
          throw Error(ErrorCode::infeasible,
                      fmt::format("downsampling infeasible: cell '{}' needs {} records but has {}",
                                  cell, k, members[cell].size()));
    } else {
      double limit = std::numeric_limits<double>::infinity();
      for (const auto& [cell, p] : t)
        if (p > 0.0) limit = std::min(limit, static_cast<double>(members[cell].size()) / p);
      auto n = static_cast<std::size_t>(std::floor(limit + 1e-9));
      while (true) {
        counts = counts_for(n);
        bool ok = true;
        for (const auto& [cell, k] : counts) ok = ok && k <= members[cell].size();
        if (ok || n == 0) break;
        --n;
      }
    }
  } else {
    auto fits = [&](const std::map<std::string, std::size_t>& c) {
      for (const auto& [cell, k] : c)
        if (t.at(cell) > 0.0 && k < members[cell].size()) return false;
      return true;
    };
    if (n_out) {
      counts = counts_for(*n_out);
      if (!fits(counts))
        for (const auto& [cell, k] : counts)
          if (t.at(cell) > 0.0 && k < members[cell].size())
            throw Error(ErrorCode::infeasible,
                        fmt::format("upsampling infeasible: cell '{}' would keep {} of its {} records",
                                    cell, k, members[cell].size()));
    } else {
      double need = 0.0;
      for (const auto& [cell, p] : t)
        if (p > 0.0) need = std::max(need, static_cast<double>(members[cell].size()) / p);
      auto n = static_cast<std::size_t>(std::ceil(need - 1e-9));
      counts = counts_for(n);
      while (!fits(counts)) counts = counts_for(++n);
    }
  }

  std::vector<bool> keep(records.size(), false);
  std::vector<PredictionRecord> extras;
  for (const auto& [cell, list] : members) {
    const std::size_t k = counts.count(cell) ? counts.at(cell) : 0;
    if (k == 0) continue;
    Engine rng(derive_seed(seed, "stratified_resample/" + cell));
    if (mode == ResampleMode::down) {
      std::vector<std::size_t> pool = list;
      for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
        keep[pool[i]] = true;
      }
    } else {
      for (auto i : list) keep[i] = true;
      std::map<std::size_t, std::size_t> copies;
      std::uniform_int_distribution<std::size_t> pick(0, list.size() - 1);
      for (std::size_t i = list.size(); i < k; ++i) {
        const auto src = list[pick(rng)];
        PredictionRecord copy = records[src];
        copy.id = fmt::format("{}#r{}", copy.id, ++copies[src]);
        extras.push_back(std::move(copy));
      }
    }
  }
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (keep[i]) out.push_back(records[i]);
  for (auto& e : extras) out.push_back(std::move(e));
  return Dataset(std::move(out), dataset.attribute_specs(), dataset.outcome_kind());
}

// ---------------------------------------------------------------------------
// Matched controls

MatchResult matched_controls(const std::vector<PredictionRecord>& cases,
                             const std::vector<PredictionRecord>& controls,
                             const std::vector<AttributeSpec>& attributes, std::uint64_t seed) {
  if (attributes.empty()) throw Error(ErrorCode::usage, "matched controls: no matching attributes configured");
  if (controls.empty()) throw Error(ErrorCode::empty_distribution, "matched controls: control pool is empty");

  auto value = [](const PredictionRecord& r, const AttributeSpec& a) -> const AttributeValue& {
    auto it = r.attrs.find(a.name);
    if (it == r.attrs.end())
      throw Error(ErrorCode::missing_attribute,
                  fmt::format("record '{}' lacks matching attribute '{}'", r.id, a.name));
    return it->second;
  };

  // Standardization constants over cases and controls together.
  std::vector<double> mean(attributes.size(), 0.0), sd(attributes.size(), 1.0);
  for (std::size_t j = 0; j < attributes.size(); ++j) {
    if (attributes[j].kind != AttributeKind::continuous) continue;
    double s = 0.0, ss = 0.0;
    std::size_t n = 0;
    for (const auto* pool : {&cases, &controls})
      for (const auto& r : *pool) {
        const double x = std::get<double>(value(r, attributes[j]));
        s += x;
        ss += x * x;
        ++n;
      }
    mean[j] = s / static_cast<double>(n);
    const double var = std::max(0.0, ss / static_cast<double>(n) - mean[j] * mean[j]);
    sd[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  auto distance = [&](const PredictionRecord& a, const PredictionRecord& b) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < attributes.size(); ++j) {
      const auto& va = value(a, attributes[j]);
      const auto& vb = value(b, attributes[j]);
      if (attributes[j].kind == AttributeKind::continuous) {
        const double z = (std::get<double>(va) - std::get<double>(vb)) / sd[j];
        d2 += z * z;
      } else if (va != vb) {
        d2 += 1.0;
      }
    }
    return std::sqrt(d2);
  };

  const auto stream = derive_seed(seed, "matched_controls");
  std::vector<std::uint64_t> key(controls.size());
  for (std::size_t i = 0; i < controls.size(); ++i) key[i] = mix64(stream ^ fnv1a64(controls[i].id));

  std::vector<std::size_t> order(cases.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return cases[a].id < cases[b].id; });

  MatchResult result;
  std::vector<bool> used(controls.size(), false);
  for (auto ci : order) {
    std::optional<std::size_t> best;
    double best_d = 0.0;
    for (std::size_t j = 0; j < controls.size(); ++j) {
      if (used[j]) continue;
      const double d = distance(cases[ci], controls[j]);
      if (!best || d < best_d || (d == best_d && key[j] < key[*best])) {
        best = j;
        best_d = d;
      }
    }
    if (!best) {
      ++result.shortfall;
      continue;
    }
    used[*best] = true;
    result.controls.push_back(controls[*best]);
    result.pairs.emplace_back(cases[ci].id, controls[*best].id);
  }
  if (result.shortfall > 0)
    result.warnings.push_back(fmt::format("control pool exhausted: {} case(s) left unmatched",
                                          result.shortfall));
  return result;
}

// ---------------------------------------------------------------------------
// Counterfactual augmentation

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool token_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string match_case(const std::string& original, std::string replacement) {
  const bool all_upper =
      original.size() > 1 && std::none_of(original.begin(), original.end(), [](char c) {
        return std::islower(static_cast<unsigned char>(c));
      });
  if (all_upper) {
    for (auto& c : replacement) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  } else if (!original.empty() && std::isupper(static_cast<unsigned char>(original[0])) &&
             !replacement.empty()) {
    replacement[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(replacement[0])));
  }
  return replacement;
}

}  // namespace

SwapLexicon::SwapLexicon(const std::vector<std::pair<std::string, std::string>>& pairs) {
  for (const auto& [a_raw, b_raw] : pairs) {
    const auto a = lower(a_raw), b = lower(b_raw);
    if (a.empty() || b.empty() || a == b)
      throw Error(ErrorCode::validation, fmt::format("invalid swap pair '{}' / '{}'", a_raw, b_raw));
    for (const auto& w : {a, b})
      if (partner_.count(w))
        throw Error(ErrorCode::validation, fmt::format("word '{}' appears in two swap pairs", w));
    partner_[a] = b;
    partner_[b] = a;
    pairs_.emplace_back(a, b);
  }
}

SwapLexicon SwapLexicon::load(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::vector<std::string> words;
    for (std::string w; fields >> w;) words.push_back(w);
    if (words.empty()) continue;
    if (words.size() != 2)
      throw Error(ErrorCode::parse, fmt::format("expected two words, found {}", words.size()), number);
    pairs.emplace_back(words[0], words[1]);
  }
  return SwapLexicon(pairs);
}

std::optional<std::string> SwapLexicon::partner(const std::string& lowercase_word) const {
  auto it = partner_.find(lowercase_word);
  if (it == partner_.end()) return std::nullopt;
  return it->second;
}

std::string swap_text(const std::string& text, const SwapLexicon& lexicon, std::size_t* hits) {
  std::string out;
  out.reserve(text.size());
  std::size_t swapped = 0;
  for (std::size_t i = 0; i < text.size();) {
    if (!token_char(text[i])) {
      out.push_back(text[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && token_char(text[j])) ++j;
    const std::string token = text.substr(i, j - i);
    if (auto p = lexicon.partner(lower(token))) {
      out += match_case(token, *p);
      ++swapped;
    } else {
      out += token;
    }
    i = j;
  }
  if (hits) *hits = swapped;
  return out;
}

std::size_t count_token(const std::string& text, const std::string& word) {
  const auto target = lower(word);
  std::size_t n = 0;
  for (std::size_t i = 0; i < text.size();) {
    if (!token_char(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && token_char(text[j])) ++j;
    if (lower(text.substr(i, j - i)) == target) ++n;
    i = j;
  }
  return n;
}

Dataset counterfactual_augment(const Dataset& dataset, const SwapLexicon& lexicon,
                               const std::optional<AttributeFlip>& flip) {
  std::vector<PredictionRecord> out = dataset.records();
  for (const auto& r : dataset.records()) {
    if (!r.text) continue;
    std::size_t hits = 0;
    auto swapped = swap_text(*r.text, lexicon, &hits);
    if (hits == 0) continue;
    PredictionRecord copy = r;
    copy.id = r.id + "#cf";
    copy.text = std::move(swapped);
    if (flip) {
      auto it = copy.attrs.find(flip->attribute);
      if (it != copy.attrs.end())
        if (const auto* s = std::get_if<std::string>(&it->second))
          if (auto m = flip->mapping.find(*s); m != flip->mapping.end()) it->second = m->second;
    }
    out.push_back(std::move(copy));
  }
  return Dataset(std::move(out), dataset.attribute_specs(), dataset.outcome_kind());
}

// ---------------------------------------------------------------------------
// Threshold matching

ThresholdResult threshold_match(const std::vector<ScoredRecord>& scores,
                                const std::map<std::string, double>& ideal_positive_rates) {
  std::map<std::string, std::vector<double>> by_cell;
  for (const auto& s : scores) by_cell[s.cell].push_back(s.score);
  ThresholdResult result;
  for (const auto& [cell, rate] : ideal_positive_rates) {
    if (!(rate >= 0.0 && rate <= 1.0))
      throw Error(ErrorCode::validation, fmt::format("rate for cell '{}' outside [0, 1]", cell));
    auto it = by_cell.find(cell);
    if (it == by_cell.end() || it->second.empty())
      throw Error(ErrorCode::empty_distribution, fmt::format("cell '{}' has no scores", cell));
    auto v = it->second;
    std::sort(v.begin(), v.end(), std::greater<>());
    const double n = static_cast<double>(v.size());
    const auto k = static_cast<std::size_t>(std::max(0.0, std::ceil(rate * n - 1e-9)));
    const double threshold =
        k == 0 ? std::nextafter(v.front(), std::numeric_limits<double>::infinity()) : v[k - 1];
    const auto admitted = static_cast<double>(
        std::count_if(v.begin(), v.end(), [&](double x) { return x >= threshold; }));
    result.thresholds[cell] = threshold;
    result.achieved[cell] = admitted / n;
    result.n[cell] = v.size();
  }
  return result;
}

std::optional<std::string> label_shift_warning(const Dataset& before, const Dataset& after,
                                               double tolerance) {
  if (before.outcome_kind() != OutcomeKind::categorical || before.empty() || after.empty())
    return std::nullopt;
  auto marginal = [](const Dataset& d) {
    stats::Table m;
    double total = 0.0;
    for (const auto& r : d.records()) {
      m[std::get<std::string>(r.y_true)] += r.weight;
      total += r.weight;
    }
    if (total > 0.0)
      for (auto& [y, v] : m) v /= total;
    return m;
  };
  auto a = marginal(before), b = marginal(after);
  double worst = 0.0;
  std::string label;
  std::set<std::string> keys;
  for (const auto& [y, v] : a) keys.insert(y);
  for (const auto& [y, v] : b) keys.insert(y);
  for (const auto& y : keys) {
    const double d = std::abs((a.count(y) ? a[y] : 0.0) - (b.count(y) ? b[y] : 0.0));
    if (d > worst) {
      worst = d;
      label = y;
    }
  }
  if (worst <= tolerance) return std::nullopt;
  return fmt::format("label marginal shifted by {:.4f} for '{}' (more than {}); rebalancing may "
                     "have introduced a new confound",
                     worst, label, tolerance);
}

}  // namespace biaslens::mitigate
