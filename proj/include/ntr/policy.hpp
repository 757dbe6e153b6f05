#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ntr/corpus.hpp"
#include "ntr/jsonl.hpp"
#include "ntr/reward.hpp"

namespace ntr {

using Rng = std::mt19937_64;

// Stable 64-bit seed derived from a base seed and a label; used to give each
// instance or group its own random stream independent of processing order.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index = 0);

/// Softmax of `logits / temperature`, computed stably.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits, typename Derived::Scalar temperature) {
  using Vec = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>;
  const Vec scaled = logits / temperature;
  Vec p = (scaled.array() - scaled.maxCoeff()).exp().matrix();
  return p / p.sum();
}

struct SampledResponse {
  std::vector<TokenId> tokens;  // includes the end marker when emitted
  std::vector<double> logprobs; // one per token
  bool truncated = false;       // no end marker within the length budget
};

struct ParsedResponse {
  std::string raw_text;
  Bytes prediction;
  std::size_t answer_begin = 0;  // index of the first answer token
};

/// Sampling contract of a next-token-reasoning policy. Log-probabilities are
/// taken at the given sampling temperature.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual SampledResponse sample(std::span<const TokenId> context, double temperature,
                                 std::size_t max_tokens, Rng& rng) const = 0;
  virtual std::vector<double> logprob(std::span<const TokenId> context,
                                      std::span<const TokenId> response, double temperature) const = 0;
  // Most probable answer token (end marker and separator excluded).
  virtual TokenId greedy(std::span<const TokenId> context) const = 0;
  // Maps response tokens to the raw text and the extracted prediction.
  virtual ParsedResponse parse(std::span<const TokenId> response) const = 0;
};

struct ToyPolicyConfig {
  std::vector<Bytes> vocabulary;       // bytes of each token id
  std::size_t order = 2;               // tokens of context conditioned on
  double temperature = 0.8;
  std::optional<TokenId> separator;    // ends the reasoning chain when emitted
  bool emit_end = true;                // false: fixed-length responses
  std::size_t max_response_tokens = 16;
};

/// Tabular softmax policy: one logit vector of size V + 1 (tokens plus end
/// marker) per distinct last-`order` token history. Rows not yet touched have
/// zero logits.
class ToyPolicy final : public Policy {
 public:
  using Gradient = std::map<std::uint64_t, Eigen::VectorXd>;

  explicit ToyPolicy(ToyPolicyConfig config);

  SampledResponse sample(std::span<const TokenId> context, double temperature,
                         std::size_t max_tokens, Rng& rng) const override;
  std::vector<double> logprob(std::span<const TokenId> context, std::span<const TokenId> response,
                              double temperature) const override;
  TokenId greedy(std::span<const TokenId> context) const override;
  ParsedResponse parse(std::span<const TokenId> response) const override;

  const ToyPolicyConfig& config() const { return config_; }
  std::size_t vocab_size() const { return config_.vocabulary.size(); }
  TokenId end_token() const { return static_cast<TokenId>(vocab_size()); }

  // Context key of the last `order` tokens of context ++ response[0:prefix].
  std::uint64_t key(std::span<const TokenId> context, std::span<const TokenId> response = {},
                    std::size_t prefix = 0) const;
  std::vector<TokenId> key_tokens(std::uint64_t key) const;

  Eigen::VectorXd logits(std::uint64_t key) const;
  // Distribution over V + 1 outputs; end marker has probability 0 when disabled.
  Eigen::VectorXd probabilities(std::uint64_t key, double temperature) const;
  void set_logits(std::uint64_t key, const Eigen::VectorXd& logits);

  // grad[key] += weight * d log p(token | key) / d logits
  void add_logprob_gradient(std::uint64_t key, TokenId token, double temperature, double weight,
                            Gradient& grad) const;

  // logits += step * direction
  void apply(const Gradient& direction, double step);

  const std::map<std::uint64_t, Eigen::VectorXd>& rows() const { return rows_; }
  // Upper bound on trainable entries: (V + 1)^order rows of V + 1 logits.
  double parameter_count() const;

  OrderedJson to_json(std::size_t step = 0, const std::string& tokenizer_spec = {}) const;
  static ToyPolicy from_json(const nlohmann::json& document);

 private:
  double log_softmax_at(const Eigen::VectorXd& logits, TokenId token, double temperature) const;

  ToyPolicyConfig config_;
  std::uint64_t radix_;
  std::map<std::uint64_t, Eigen::VectorXd> rows_;
};

struct RolloutResponse {
  std::vector<TokenId> tokens;
  std::string raw_text;
  Bytes prediction_bytes;
  std::vector<double> token_logprobs;  // behaviour log-probabilities at sample time
  double sum_logprob = 0.0;
  std::optional<double> first_token_prob;
  double reward = 0.0;
  std::optional<std::size_t> matched_boundary;
  double advantage = 0.0;
  bool truncated = false;
};

struct RolloutGroup {
  std::string doc_id;
  std::size_t t = 0;
  std::vector<TokenId> context_tokens;
  std::vector<RolloutResponse> responses;
};

double reward_variance(const RolloutGroup& group);

/// The next-token reasoning environment: turns instances into policy contexts
/// and scores sampled responses with the configured reward.
class NextTokenEnv {
 public:
  NextTokenEnv(const Tokenizer& tokenizer, RewardSpec reward);

  std::vector<TokenId> context_tokens(const NextTokenInstance& instance) const;
  // Ground-truth next token id.
  TokenId target_token(const NextTokenInstance& instance) const;

  RolloutGroup sample_group(const Policy& policy, const NextTokenInstance& instance,
                            std::span<const TokenId> context, std::size_t group_size,
                            double temperature, std::size_t max_tokens, Rng& rng) const;
  RolloutGroup sample_group(const Policy& policy, const NextTokenInstance& instance,
                            std::size_t group_size, double temperature, std::size_t max_tokens,
                            Rng& rng) const;

  const RewardSpec& reward() const { return reward_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

 private:
  const Tokenizer& tokenizer_;
  RewardSpec reward_;
};

// Rollout file, JSON Lines {"doc_id","t","responses":[{"tokens","raw_text","prediction_b64",
// "sum_logprob","reward","advantage"}...]}.
OrderedJson rollout_to_json(const RolloutGroup& group);
void write_rollouts(const std::string& path, std::span<const RolloutGroup> groups);

}  // namespace ntr
