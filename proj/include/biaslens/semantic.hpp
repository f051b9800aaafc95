#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "biaslens/model.hpp"
#include "biaslens/origins.hpp"

namespace biaslens::semantic {

class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  /// Rejects duplicate words, ragged dimensions, non-finite components and
  /// zero vectors.
  EmbeddingSet(std::vector<std::string> words, Eigen::MatrixXd vectors);

  std::size_t size() const noexcept { return words_.size(); }
  Eigen::Index dim() const noexcept { return vectors_.cols(); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  const Eigen::MatrixXd& vectors() const noexcept { return vectors_; }
  bool contains(const std::string& word) const { return index_.count(word) > 0; }
  Eigen::VectorXd vector(const std::string& word) const;
  std::size_t index(const std::string& word) const;

 private:
  std::vector<std::string> words_;
  Eigen::MatrixXd vectors_;  // one row per word
  std::map<std::string, std::size_t> index_;
};

/// word2vec text: "word v1 ... vd" per line; a leading "count dim" header
/// line is accepted.
EmbeddingSet load_embeddings(std::istream& in);
void write_embeddings(std::ostream& out, const EmbeddingSet& emb);

struct WeatSpec {
  std::vector<std::string> X, Y, A, B;
};

WeatSpec weat_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const WeatSpec& spec);

/// Structural checks plus vocabulary coverage (out_of_vocabulary error lists
/// every missing word).
void validate(const WeatSpec& spec, const EmbeddingSet& emb);

struct WeatResult {
  double effect_size = 0.0;
  double p_value = 1.0;
  double statistic = 0.0;  // sum over X of s(w, A, B)
};

/// Effect size uses the population standard deviation of s over X u Y. The
/// one-sided p-value re-partitions X u Y into equal halves.
WeatResult weat(const EmbeddingSet& emb, const WeatSpec& spec, std::size_t n_permutations,
                std::uint64_t seed);

/// Conditional probability of a candidate filling "[MASK]" in a context.
class MaskedScorer {
 public:
  virtual ~MaskedScorer() = default;
  /// Probability that the first "[MASK]" in `context` is `candidate`.
  virtual double score(const std::string& context, const std::string& candidate) const = 0;
};

/// Fixed lookup table: context -> candidate -> probability.
class TableScorer : public MaskedScorer {
 public:
  explicit TableScorer(std::map<std::string, std::map<std::string, double>> table);
  double score(const std::string& context, const std::string& candidate) const override;

 private:
  std::map<std::string, std::map<std::string, double>> table_;
};

/// Toy n-gram scorer over a sentence corpus: counts sentences that match the
/// context with the first mask filled by each vocabulary candidate (any other
/// "[MASK]" matches one token), with add-one smoothing over the vocabulary.
class CountScorer : public MaskedScorer {
 public:
  CountScorer(std::vector<std::string> corpus, std::vector<std::string> vocabulary);
  double score(const std::string& context, const std::string& candidate) const override;

 private:
  std::vector<std::vector<std::string>> sentences_;
  std::vector<std::string> vocabulary_;
};

/// ln P(target = pronoun | attribute = noun) - ln P(target = pronoun |
/// attribute masked). The template marks the two slots "{target}" and
/// "{attribute}".
double masked_logprob_bias(const MaskedScorer& scorer, const std::string& noun,
                           const std::string& pronoun, const std::string& template_text);

/// Bias direction: first principal component of the centered definitional
/// pairs (unit-normalized words), sign fixed so the largest-magnitude
/// component is positive.
Eigen::VectorXd bias_direction(const EmbeddingSet& emb,
                               const std::vector<std::pair<std::string, std::string>>& pairs);

/// Neutralize (project out the direction, renormalize) and equalize (place
/// pairs symmetrically about the orthogonal complement). Words not referenced
/// are left untouched.
EmbeddingSet hard_debias(const EmbeddingSet& emb,
                         const std::vector<std::pair<std::string, std::string>>& definitional_pairs,
                         const std::vector<std::string>& neutral_words,
                         const std::vector<std::pair<std::string, std::string>>& equalize_pairs);

/// Flagged iff some probe has p < alpha and |effect| >= 0.5.
origins::OriginFinding semantic_bias_finding(const EmbeddingSet& emb, const std::vector<WeatSpec>& specs,
                                             const AuditConfig& config);

inline constexpr double kWeatEffectFloor = 0.5;

}  // namespace biaslens::semantic
