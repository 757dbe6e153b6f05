#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ntr/corpus.hpp"

namespace ntr {

/// Shannon entropy in nats of a probability vector; zero entries contribute 0.
template <typename Derived>
typename Derived::Scalar entropy_nats(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Scalar h(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const Scalar v = p(i);
    if (v > Scalar(0)) h -= v * std::log(v);
  }
  return h;
}

struct NextTokenDistribution {
  std::string doc_id;
  std::size_t t = 0;
  // Sorted by probability descending, ties by token id ascending.
  std::vector<std::pair<TokenId, double>> entries;
};

// Probabilities in (0, 1], total at most 1 + 1e-9, at least one entry.
void validate_distribution(const NextTokenDistribution& dist);

enum class EntropyMode { renormalized, truncated };

/// Entropy over the `top_k` most probable entries (all of them if fewer).
/// Renormalized mode rescales the kept mass to 1 first; truncated mode uses
/// the raw probabilities.
double top_k_entropy(const NextTokenDistribution& dist, std::size_t top_k,
                     EntropyMode mode = EntropyMode::renormalized);

inline const std::string kSplitEasy = "easy";
inline const std::string kSplitMedium = "medium";
inline const std::string kSplitHard = "hard";

struct DifficultyConfig {
  std::size_t top_k = 16;
  double easy = 0.5;
  double medium = 1.0;
  double hard = 1.5;

  // Empty when valid.
  std::vector<std::string> diagnostics() const;
};

// Tag s is included iff entropy > threshold(s).
std::vector<std::string> assign_difficulty(double entropy, const DifficultyConfig& config = {});

// Keeps instances whose entropy is strictly above `threshold`, in input order.
std::vector<NextTokenInstance> filter_positions(std::span<const NextTokenInstance> instances,
                                                std::span<const std::optional<double>> entropies,
                                                double threshold);
// Same, reading each instance's own entropy.
std::vector<NextTokenInstance> filter_positions(std::span<const NextTokenInstance> instances,
                                                double threshold);

// Sets entropy and difficulty tags on every instance from distributions keyed
// by (doc_id, t). An instance without a distribution is an incomplete-scoring
// error.
void attach_scores(std::vector<NextTokenInstance>& instances,
                   std::span<const NextTokenDistribution> scores, const DifficultyConfig& config,
                   EntropyMode mode = EntropyMode::renormalized);

/// Additive-smoothing n-gram model used as a cheap proxy for next-token
/// difficulty. `order` is the number of preceding tokens conditioned on;
/// histories shorter than that are padded with a start symbol.
class NgramProxy {
 public:
  NgramProxy(std::size_t order, double smoothing, std::size_t vocab_size);

  void fit(std::span<const std::vector<TokenId>> documents);

  // P(. | history) over the vocabulary; sums to 1.
  Eigen::VectorXd distribution(std::span<const TokenId> history) const;

  std::size_t order() const { return order_; }
  std::size_t vocab_size() const { return vocab_size_; }

 private:
  std::vector<TokenId> key(std::span<const TokenId> history) const;

  std::size_t order_;
  double smoothing_;
  std::size_t vocab_size_;
  std::map<std::vector<TokenId>, std::map<TokenId, double>> counts_;
  std::map<std::vector<TokenId>, double> totals_;
};

// Sorted top entries of a dense distribution (keep = 0 keeps all).
NextTokenDistribution to_distribution(std::string doc_id, std::size_t t, const Eigen::VectorXd& probs,
                                      std::size_t keep = 0);

// Scores every token position of every document with an n-gram proxy fitted
// on the same documents. Output is ordered by (doc_id, t).
std::vector<NextTokenDistribution> ngram_proxy_score(std::span<const TokenizedDocument> corpus,
                                                     std::size_t order, double smoothing,
                                                     std::size_t vocab_size, std::size_t keep = 0);

// Score file, JSON Lines {"doc_id","t","top":[[token_id,prob],...]}.
void write_scores(const std::string& path, std::span<const NextTokenDistribution> scores);
std::vector<NextTokenDistribution> read_scores(const std::string& path);

}  // namespace ntr
