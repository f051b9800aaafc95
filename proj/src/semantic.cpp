#include "biaslens/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "biaslens/disparity.hpp"
#include "biaslens/error.hpp"
#include "biaslens/kernels.hpp"
#include "biaslens/rng.hpp"

namespace biaslens::semantic {

EmbeddingSet::EmbeddingSet(std::vector<std::string> words, Eigen::MatrixXd vectors)
    : words_(std::move(words)), vectors_(std::move(vectors)) {
  if (static_cast<Eigen::Index>(words_.size()) != vectors_.rows())
    throw Error(ErrorCode::validation, "embedding word count and vector count differ");
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], i).second)
      throw Error(ErrorCode::validation, fmt::format("duplicate word '{}'", words_[i]));
    const auto row = vectors_.row(static_cast<Eigen::Index>(i));
    if (!row.allFinite())
      throw Error(ErrorCode::validation, fmt::format("vector for '{}' is not finite", words_[i]));
    if (row.norm() == 0.0)
      throw Error(ErrorCode::validation, fmt::format("vector for '{}' has zero norm", words_[i]));
  }
}

std::size_t EmbeddingSet::index(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end())
    throw Error(ErrorCode::out_of_vocabulary, fmt::format("word '{}' is not in the vocabulary", word));
  return it->second;
}

Eigen::VectorXd EmbeddingSet::vector(const std::string& word) const {
  return vectors_.row(static_cast<Eigen::Index>(index(word))).transpose();
}

EmbeddingSet load_embeddings(std::istream& in) {
  std::vector<std::string> words;
  std::vector<std::vector<double>> rows;
  std::set<std::string> seen;
  std::optional<std::size_t> dim;
  std::string line;
  std::size_t number = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++number;
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string t; fields >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;
    if (first) {
      first = false;
      auto is_count = [](const std::string& s) {
        return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
      };
      if (tokens.size() == 2 && is_count(tokens[0]) && is_count(tokens[1])) {
        dim = std::stoul(tokens[1]);
        continue;
      }
    }
    if (tokens.size() < 2) throw Error(ErrorCode::parse, "line has a word but no vector", number);
    const std::size_t d = tokens.size() - 1;
    if (!dim) dim = d;
    if (d != *dim)
      throw Error(ErrorCode::parse, fmt::format("vector has dimension {}, expected {}", d, *dim), number);
    if (!seen.insert(tokens[0]).second)
      throw Error(ErrorCode::parse, fmt::format("duplicate word '{}'", tokens[0]), number);
    std::vector<double> v(d);
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      std::size_t used = 0;
      try {
        v[i] = std::stod(tokens[i + 1], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tokens[i + 1].size() || !std::isfinite(v[i]))
        throw Error(ErrorCode::parse, fmt::format("bad component '{}'", tokens[i + 1]), number);
      norm += v[i] * v[i];
    }
    if (norm == 0.0)
      throw Error(ErrorCode::parse, fmt::format("word '{}' has a zero vector", tokens[0]), number);
    words.push_back(tokens[0]);
    rows.push_back(std::move(v));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim.value_or(0)));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return EmbeddingSet(std::move(words), std::move(m));
}

void write_embeddings(std::ostream& out, const EmbeddingSet& emb) {
  for (std::size_t i = 0; i < emb.size(); ++i) {
    out << emb.words()[i];
    for (Eigen::Index j = 0; j < emb.dim(); ++j)
      out << ' ' << fmt::format("{:.9g}", emb.vectors()(static_cast<Eigen::Index>(i), j));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// WEAT

WeatSpec weat_spec_from_json(const nlohmann::json& j) {
  WeatSpec s;
  try {
    s.X = j.at("X").get<std::vector<std::string>>();
    s.Y = j.at("Y").get<std::vector<std::string>>();
    s.A = j.at("A").get<std::vector<std::string>>();
    s.B = j.at("B").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, fmt::format("WEAT spec needs word lists X, Y, A, B ({})", e.what()));
  }
  return s;
}

nlohmann::json to_json(const WeatSpec& s) {
  return {{"X", s.X}, {"Y", s.Y}, {"A", s.A}, {"B", s.B}};
}

void validate(const WeatSpec& spec, const EmbeddingSet& emb) {
  if (spec.X.empty() || spec.Y.empty() || spec.A.empty() || spec.B.empty())
    throw Error(ErrorCode::validation, "WEAT word lists X, Y, A, B must be non-empty");
  auto disjoint = [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::set<std::string> sa(a.begin(), a.end());
    return std::none_of(b.begin(), b.end(), [&](const std::string& w) { return sa.count(w) > 0; });
  };
  if (!disjoint(spec.X, spec.Y)) throw Error(ErrorCode::validation, "WEAT targets X and Y overlap");
  if (!disjoint(spec.A, spec.B)) throw Error(ErrorCode::validation, "WEAT attributes A and B overlap");
  std::set<std::string> missing;
  for (const auto* list : {&spec.X, &spec.Y, &spec.A, &spec.B})
    for (const auto& w : *list)
      if (!emb.contains(w)) missing.insert(w);
  if (!missing.empty())
    throw Error(ErrorCode::out_of_vocabulary,
                fmt::format("words not in the embedding vocabulary: {}", fmt::join(missing, ", ")));
}

namespace {

Eigen::VectorXd unit(const Eigen::VectorXd& v) { return v / v.norm(); }

double association(const Eigen::VectorXd& w, const std::vector<Eigen::VectorXd>& A,
                   const std::vector<Eigen::VectorXd>& B) {
  double a = 0.0, b = 0.0;
  for (const auto& x : A) a += w.dot(x);
  for (const auto& x : B) b += w.dot(x);
  return a / static_cast<double>(A.size()) - b / static_cast<double>(B.size());
}

std::vector<Eigen::VectorXd> units(const EmbeddingSet& emb, const std::vector<std::string>& words) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& w : words) out.push_back(unit(emb.vector(w)));
  return out;
}

}  // namespace

WeatResult weat(const EmbeddingSet& emb, const WeatSpec& spec, std::size_t n_permutations,
                std::uint64_t seed) {
  validate(spec, emb);
  if (spec.X.size() != spec.Y.size())
    throw Error(ErrorCode::validation, "WEAT permutation test needs |X| = |Y|");
  const auto A = units(emb, spec.A), B = units(emb, spec.B);
  std::vector<double> s;
  for (const auto& w : spec.X) s.push_back(association(unit(emb.vector(w)), A, B));
  for (const auto& w : spec.Y) s.push_back(association(unit(emb.vector(w)), A, B));

  const std::size_t nx = spec.X.size();
  double sum_x = 0.0, sum_y = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) (i < nx ? sum_x : sum_y) += s[i];
  mean = (sum_x + sum_y) / static_cast<double>(s.size());
  double var = 0.0;
  for (double v : s) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(s.size()));
  if (!(sd > 1e-12))
    throw Error(ErrorCode::degenerate,
                "WEAT association scores have zero spread over X and Y; effect size undefined");

  WeatResult r;
  r.effect_size = (sum_x / static_cast<double>(nx) - sum_y / static_cast<double>(spec.Y.size())) / sd;
  r.statistic = sum_x;
  const auto null = kernels::partition_null(s, nx, n_permutations, derive_seed(seed, "weat"));
  r.p_value = kernels::add_one_p_value(sum_x, null);
  return r;
}

// ---------------------------------------------------------------------------
// Masked scorers

TableScorer::TableScorer(std::map<std::string, std::map<std::string, double>> table)
    : table_(std::move(table)) {}

double TableScorer::score(const std::string& context, const std::string& candidate) const {
  auto it = table_.find(context);
  if (it == table_.end())
    throw Error(ErrorCode::out_of_vocabulary, fmt::format("scorer has no context '{}'", context));
  auto jt = it->second.find(candidate);
  return jt == it->second.end() ? 0.0 : jt->second;
}

namespace {

std::vector<std::string> tokenize(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string t; in >> t;) {
    if (t != "[MASK]")
      for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(t);
  }
  return out;
}

}  // namespace

CountScorer::CountScorer(std::vector<std::string> corpus, std::vector<std::string> vocabulary)
    : vocabulary_(std::move(vocabulary)) {
  for (const auto& s : corpus) sentences_.push_back(tokenize(s));
  for (auto& v : vocabulary_)
    for (auto& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

double CountScorer::score(const std::string& context, const std::string& candidate) const {
  const auto pattern = tokenize(context);
  const auto slot = std::find(pattern.begin(), pattern.end(), "[MASK]");
  if (slot == pattern.end()) throw Error(ErrorCode::validation, "context has no [MASK] slot");
  const auto slot_index = static_cast<std::size_t>(slot - pattern.begin());
  std::string cand = candidate;
  for (auto& c : cand) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (std::find(vocabulary_.begin(), vocabulary_.end(), cand) == vocabulary_.end())
    throw Error(ErrorCode::out_of_vocabulary, fmt::format("'{}' is not a scorer candidate", candidate));

  std::map<std::string, double> counts;
  for (const auto& v : vocabulary_) counts[v] = 0.0;
  for (const auto& s : sentences_) {
    if (s.size() != pattern.size()) continue;
    bool match = true;
    for (std::size_t i = 0; i < s.size() && match; ++i)
      if (i != slot_index && pattern[i] != "[MASK]" && pattern[i] != s[i]) match = false;
    if (match && counts.count(s[slot_index])) counts[s[slot_index]] += 1.0;
  }
  double total = 0.0;
  for (const auto& [w, c] : counts) total += c + 1.0;
  return (counts[cand] + 1.0) / total;
}

double masked_logprob_bias(const MaskedScorer& scorer, const std::string& noun,
                           const std::string& pronoun, const std::string& template_text) {
  const auto t = template_text.find("{target}");
  const auto a = template_text.find("{attribute}");
  if (t == std::string::npos || a == std::string::npos)
    throw Error(ErrorCode::validation, "template needs {target} and {attribute} slots");
  if (a < t) throw Error(ErrorCode::validation, "template must place {target} before {attribute}");
  auto fill = [&](const std::string& attribute_text) {
    std::string s = template_text;
    s.replace(s.find("{attribute}"), 11, attribute_text);
    s.replace(s.find("{target}"), 8, "[MASK]");
    return s;
  };
  const double p_noun = scorer.score(fill(noun), pronoun);
  const double p_prior = scorer.score(fill("[MASK]"), pronoun);
  if (!(p_noun > 0.0) || !(p_prior > 0.0) || p_noun > 1.0 || p_prior > 1.0)
    throw Error(ErrorCode::validation,
                fmt::format("scorer returned a probability outside (0, 1] for '{}'", pronoun));
  return std::log(p_noun) - std::log(p_prior);
}

// ---------------------------------------------------------------------------
// Hard de-biasing

Eigen::VectorXd bias_direction(const EmbeddingSet& emb,
                               const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw Error(ErrorCode::validation, "hard de-biasing needs a definitional pair");
  const Eigen::Index d = emb.dim();
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
  for (const auto& [a, b] : pairs) {
    const Eigen::VectorXd ua = unit(emb.vector(a)), ub = unit(emb.vector(b));
    const Eigen::VectorXd mu = (ua + ub) / 2.0;
    for (const Eigen::VectorXd& c : {Eigen::VectorXd(ua - mu), Eigen::VectorXd(ub - mu)})
      scatter += c * c.transpose();
  }
  if (scatter.norm() < 1e-24)
    throw Error(ErrorCode::degenerate, "definitional pairs give no bias direction (all differences zero)");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(scatter);
  Eigen::VectorXd g = solver.eigenvectors().col(d - 1);
  g.normalize();
  Eigen::Index arg = 0;
  g.cwiseAbs().maxCoeff(&arg);
  if (g(arg) < 0) g = -g;
  return g;
}

EmbeddingSet hard_debias(const EmbeddingSet& emb,
                         const std::vector<std::pair<std::string, std::string>>& definitional_pairs,
                         const std::vector<std::string>& neutral_words,
                         const std::vector<std::pair<std::string, std::string>>& equalize_pairs) {
  std::set<std::string> missing;
  for (const auto& [a, b] : definitional_pairs)
    for (const auto& w : {a, b})
      if (!emb.contains(w)) missing.insert(w);
  for (const auto& w : neutral_words)
    if (!emb.contains(w)) missing.insert(w);
  for (const auto& [a, b] : equalize_pairs)
    for (const auto& w : {a, b})
      if (!emb.contains(w)) missing.insert(w);
  if (!missing.empty())
    throw Error(ErrorCode::out_of_vocabulary,
                fmt::format("words not in the embedding vocabulary: {}", fmt::join(missing, ", ")));

  const Eigen::VectorXd g = bias_direction(emb, definitional_pairs);
  Eigen::MatrixXd out = emb.vectors();

  for (const auto& w : neutral_words) {
    const auto i = static_cast<Eigen::Index>(emb.index(w));
    Eigen::VectorXd v = out.row(i).transpose();
    v -= v.dot(g) * g;
    const double norm = v.norm();
    if (norm < 1e-12)
      throw Error(ErrorCode::degenerate,
                  fmt::format("neutral word '{}' lies on the bias direction", w));
    out.row(i) = (v / norm).transpose();
  }

  for (const auto& [a, b] : equalize_pairs) {
    const auto ia = static_cast<Eigen::Index>(emb.index(a));
    const auto ib = static_cast<Eigen::Index>(emb.index(b));
    const Eigen::VectorXd ua = unit(out.row(ia).transpose());
    const Eigen::VectorXd ub = unit(out.row(ib).transpose());
    const Eigen::VectorXd mu = (ua + ub) / 2.0;
    const Eigen::VectorXd nu = mu - mu.dot(g) * g;
    const double scale = std::sqrt(std::max(0.0, 1.0 - nu.squaredNorm()));
    const double side = (ua - mu).dot(g) >= 0.0 ? 1.0 : -1.0;
    out.row(ia) = (nu + side * scale * g).transpose();
    out.row(ib) = (nu - side * scale * g).transpose();
  }
  return EmbeddingSet(emb.words(), std::move(out));
}

// ---------------------------------------------------------------------------

origins::OriginFinding semantic_bias_finding(const EmbeddingSet& emb, const std::vector<WeatSpec>& specs,
                                             const AuditConfig& config) {
  origins::OriginFinding f;
  f.origin = origins::Origin::semantic_bias;
  f.divergence.kind = stats::DivergenceResult::Kind::weat_d;
  f.test = fmt::format("WEAT partition test, {} re-partitions per probe", config.n_permutations);
  if (specs.empty()) {
    f.evidence = "no probes configured";
    f.detail["probes"] = nlohmann::json::array();
    return f;
  }
  std::vector<std::string> parts;
  nlohmann::json probes = nlohmann::json::array();
  double best = -1.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto r = weat(emb, specs[i], config.n_permutations,
                        derive_seed(config.seed, fmt::format("semantic/{}", i)));
    const auto key = fmt::format("probe_{}", i);
    f.divergence.per_cell[key] = r.effect_size;
    const bool hit = r.p_value < config.alpha && std::abs(r.effect_size) >= kWeatEffectFloor;
    f.flagged = f.flagged || hit;
    if (std::abs(r.effect_size) > best) {
      best = std::abs(r.effect_size);
      f.divergence.statistic = r.effect_size;
      f.p_value = r.p_value;
      f.effect_size_nats = std::abs(r.effect_size);
    }
    probes.push_back({{"probe", key}, {"effect_size", r.effect_size}, {"p_value", r.p_value}, {"flagged", hit}});
    parts.push_back(fmt::format("{} d = {:.4f}, p = {:.4g}", key, r.effect_size, r.p_value));
  }
  f.detail["probes"] = probes;
  f.evidence = fmt::format("WEAT probes: {}", fmt::join(parts, "; "));
  return f;
}

}  // namespace biaslens::semantic
