#include "ntr/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ntr/error.hpp"
#include "ntr/prompt.hpp"

namespace ntr {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::size_t draw(const Eigen::VectorXd& p, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) <= 0.0) continue;
    acc += p(i);
    last_positive = static_cast<std::size_t>(i);
    if (u < acc) return last_positive;
  }
  return last_positive;  // rounding left u above the accumulated mass
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return splitmix64(splitmix64(base ^ h) ^ splitmix64(index));
}

ToyPolicy::ToyPolicy(ToyPolicyConfig config) : config_(std::move(config)) {
  if (config_.vocabulary.empty()) {
    throw Error(ErrorCode::configuration, "toy policy needs a non-empty vocabulary");
  }
  if (config_.order == 0) {
    throw Error(ErrorCode::configuration, "toy policy order must be at least 1");
  }
  if (!(config_.temperature > 0.0)) {
    throw Error(ErrorCode::configuration, "temperature must be positive");
  }
  if (config_.separator && (*config_.separator < 0 ||
                            static_cast<std::size_t>(*config_.separator) >= vocab_size())) {
    throw Error(ErrorCode::configuration, "separator token outside the vocabulary");
  }
  radix_ = static_cast<std::uint64_t>(vocab_size()) + 1;
  double capacity = 1.0;
  for (std::size_t i = 0; i < config_.order; ++i) capacity *= static_cast<double>(radix_);
  if (capacity > static_cast<double>(std::numeric_limits<std::uint64_t>::max())) {
    throw Error(ErrorCode::configuration, "vocabulary and order too large for context keys");
  }
}

std::uint64_t ToyPolicy::key(std::span<const TokenId> context, std::span<const TokenId> response,
                             std::size_t prefix) const {
  const std::size_t total = context.size() + prefix;
  const auto pad = static_cast<std::uint64_t>(vocab_size());
  std::uint64_t k = 0;
  for (std::size_t i = 0; i < config_.order; ++i) {
    // position from the oldest of the last `order` tokens
    const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(total) -
                               static_cast<std::ptrdiff_t>(config_.order) + static_cast<std::ptrdiff_t>(i);
    std::uint64_t id = pad;
    if (pos >= 0) {
      const auto upos = static_cast<std::size_t>(pos);
      const TokenId tok = upos < context.size() ? context[upos] : response[upos - context.size()];
      if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_size()) {
        throw Error(ErrorCode::configuration, "token id " + std::to_string(tok) +
                                                  " outside the policy vocabulary");
      }
      id = static_cast<std::uint64_t>(tok);
    }
    k = k * radix_ + id;
  }
  return k;
}

std::vector<TokenId> ToyPolicy::key_tokens(std::uint64_t key) const {
  std::vector<TokenId> tokens(config_.order);
  for (std::size_t i = config_.order; i-- > 0;) {
    tokens[i] = static_cast<TokenId>(key % radix_);
    key /= radix_;
  }
  return tokens;
}

Eigen::VectorXd ToyPolicy::logits(std::uint64_t key) const {
  auto it = rows_.find(key);
  if (it == rows_.end()) {
    return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(radix_));
  }
  return it->second;
}

Eigen::VectorXd ToyPolicy::probabilities(std::uint64_t key, double temperature) const {
  const Eigen::VectorXd z = logits(key);
  if (config_.emit_end) {
    return softmax(z, temperature);
  }
  const auto v = static_cast<Eigen::Index>(vocab_size());
  Eigen::VectorXd p = Eigen::VectorXd::Zero(v + 1);
  p.head(v) = softmax(z.head(v), temperature);
  return p;
}

void ToyPolicy::set_logits(std::uint64_t key, const Eigen::VectorXd& logits) {
  if (logits.size() != static_cast<Eigen::Index>(radix_) || !logits.allFinite()) {
    throw Error(ErrorCode::configuration, "logit row must hold V + 1 finite values");
  }
  rows_[key] = logits;
}

double ToyPolicy::log_softmax_at(const Eigen::VectorXd& z, TokenId token, double temperature) const {
  const Eigen::Index n = config_.emit_end ? z.size() : z.size() - 1;
  if (token < 0 || token >= n) {
    return -std::numeric_limits<double>::infinity();
  }
  const Eigen::VectorXd scaled = z.head(n) / temperature;
  const double m = scaled.maxCoeff();
  return scaled(token) - m - std::log((scaled.array() - m).exp().sum());
}

SampledResponse ToyPolicy::sample(std::span<const TokenId> context, double temperature,
                                  std::size_t max_tokens, Rng& rng) const {
  if (!(temperature > 0.0)) {
    throw Error(ErrorCode::configuration, "temperature must be positive");
  }
  SampledResponse out;
  const TokenId end = end_token();
  for (std::size_t j = 0; j < max_tokens; ++j) {
    const std::uint64_t k = key(context, out.tokens, j);
    const Eigen::VectorXd p = probabilities(k, temperature);
    const auto tok = static_cast<TokenId>(draw(p, rng));
    out.logprobs.push_back(log_softmax_at(logits(k), tok, temperature));
    out.tokens.push_back(tok);
    if (tok == end) return out;
  }
  out.truncated = config_.emit_end;
  return out;
}

std::vector<double> ToyPolicy::logprob(std::span<const TokenId> context,
                                       std::span<const TokenId> response, double temperature) const {
  std::vector<double> out;
  out.reserve(response.size());
  for (std::size_t j = 0; j < response.size(); ++j) {
    out.push_back(log_softmax_at(logits(key(context, response, j)), response[j], temperature));
  }
  return out;
}

TokenId ToyPolicy::greedy(std::span<const TokenId> context) const {
  const Eigen::VectorXd z = logits(key(context));
  TokenId best = -1;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(vocab_size()); ++i) {
    if (config_.separator && i == *config_.separator) continue;
    if (best < 0 || z(i) > z(best)) best = static_cast<TokenId>(i);
  }
  return best;
}

ParsedResponse ToyPolicy::parse(std::span<const TokenId> response) const {
  ParsedResponse out;
  const TokenId end = end_token();
  std::size_t stop = response.size();
  for (std::size_t j = 0; j < response.size(); ++j) {
    if (response[j] == end) {
      stop = j;
      break;
    }
  }
  for (std::size_t j = 0; j < stop; ++j) {
    if (config_.separator && response[j] == *config_.separator) out.answer_begin = j + 1;
  }
  for (std::size_t j = 0; j < stop; ++j) {
    const auto& bytes = config_.vocabulary.at(static_cast<std::size_t>(response[j]));
    out.raw_text += bytes;
    if (j >= out.answer_begin) out.prediction += bytes;
  }
  return out;
}

void ToyPolicy::add_logprob_gradient(std::uint64_t key, TokenId token, double temperature,
                                     double weight, Gradient& grad) const {
  Eigen::VectorXd g = -probabilities(key, temperature);
  g(token) += 1.0;
  g *= weight / temperature;
  auto [it, inserted] = grad.try_emplace(key, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(radix_)));
  it->second += g;
}

void ToyPolicy::apply(const Gradient& direction, double step) {
  for (const auto& [k, g] : direction) {
    auto [it, inserted] = rows_.try_emplace(k, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(radix_)));
    it->second += step * g;
  }
}

double ToyPolicy::parameter_count() const {
  double rows = 1.0;
  for (std::size_t i = 0; i < config_.order; ++i) rows *= static_cast<double>(radix_);
  return rows * static_cast<double>(radix_);
}

OrderedJson ToyPolicy::to_json(std::size_t step, const std::string& tokenizer_spec) const {
  OrderedJson j;
  j["format"] = "ntr-toy-policy";
  j["version"] = 1;
  j["step"] = step;
  j["tokenizer"] = tokenizer_spec;
  j["order"] = config_.order;
  j["temperature"] = config_.temperature;
  j["separator"] = config_.separator ? OrderedJson(*config_.separator) : OrderedJson(nullptr);
  j["emit_end"] = config_.emit_end;
  j["max_response_tokens"] = config_.max_response_tokens;
  OrderedJson vocab = OrderedJson::array();
  for (const auto& b : config_.vocabulary) vocab.push_back(base64_encode(b));
  j["vocabulary_b64"] = std::move(vocab);
  OrderedJson rows = OrderedJson::array();
  for (const auto& [k, z] : rows_) {
    OrderedJson row;
    row["context"] = key_tokens(k);
    row["logits"] = std::vector<double>(z.data(), z.data() + z.size());
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  return j;
}

ToyPolicy ToyPolicy::from_json(const nlohmann::json& document) {
  try {
    if (document.at("format").get<std::string>() != "ntr-toy-policy" ||
        document.at("version").get<int>() != 1) {
      throw Error(ErrorCode::parse, "not a version-1 toy policy checkpoint");
    }
    ToyPolicyConfig config;
    config.order = document.at("order").get<std::size_t>();
    config.temperature = document.at("temperature").get<double>();
    if (!document.at("separator").is_null()) config.separator = document["separator"].get<TokenId>();
    config.emit_end = document.at("emit_end").get<bool>();
    config.max_response_tokens = document.at("max_response_tokens").get<std::size_t>();
    for (const auto& b : document.at("vocabulary_b64")) {
      config.vocabulary.push_back(base64_decode(b.get<std::string>()));
    }
    ToyPolicy policy(std::move(config));
    for (const auto& row : document.at("rows")) {
      const auto ctx = row.at("context").get<std::vector<TokenId>>();
      const auto z = row.at("logits").get<std::vector<double>>();
      if (ctx.size() != policy.config_.order) {
        throw Error(ErrorCode::parse, "checkpoint row context has the wrong length");
      }
      std::uint64_t k = 0;
      for (TokenId id : ctx) k = k * policy.radix_ + static_cast<std::uint64_t>(id);
      policy.set_logits(k, Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size())));
    }
    return policy;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("checkpoint: ") + e.what());
  }
}

double reward_variance(const RolloutGroup& group) {
  if (group.responses.empty()) return 0.0;
  double mean = 0.0;
  for (const auto& r : group.responses) mean += r.reward;
  mean /= static_cast<double>(group.responses.size());
  double var = 0.0;
  for (const auto& r : group.responses) var += (r.reward - mean) * (r.reward - mean);
  return var / static_cast<double>(group.responses.size());
}

NextTokenEnv::NextTokenEnv(const Tokenizer& tokenizer, RewardSpec reward)
    : tokenizer_(tokenizer), reward_(reward) {}

std::vector<TokenId> NextTokenEnv::context_tokens(const NextTokenInstance& instance) const {
  std::vector<TokenId> ids;
  if (instance.context_bytes.empty()) return ids;
  for (const auto& s : tokenizer_.encode(instance.doc_id, instance.context_bytes)) {
    ids.push_back(s.token_id);
  }
  return ids;
}

TokenId NextTokenEnv::target_token(const NextTokenInstance& instance) const {
  if (instance.boundaries.empty()) {
    throw Error(ErrorCode::structural, "instance has no ground-truth token");
  }
  const Bytes upto = instance.context_bytes + instance.completion_bytes.substr(0, instance.boundaries.front());
  const auto spans = tokenizer_.encode(instance.doc_id, upto);
  if (spans.empty() || spans.back().begin != instance.context_bytes.size()) {
    throw Error(ErrorCode::structural, "tokenizer does not reproduce the instance's first token");
  }
  return spans.back().token_id;
}

RolloutGroup NextTokenEnv::sample_group(const Policy& policy, const NextTokenInstance& instance,
                                        std::span<const TokenId> context, std::size_t group_size,
                                        double temperature, std::size_t max_tokens, Rng& rng) const {
  if (group_size == 0) {
    throw Error(ErrorCode::invalid_group, "group size must be at least 1");
  }
  RolloutGroup group;
  group.doc_id = instance.doc_id;
  group.t = instance.t;
  group.context_tokens.assign(context.begin(), context.end());
  std::vector<Prediction> predictions;
  predictions.reserve(group_size);
  for (std::size_t i = 0; i < group_size; ++i) {
    auto sampled = policy.sample(context, temperature, max_tokens, rng);
    auto parsed = policy.parse(sampled.tokens);
    RolloutResponse r;
    r.truncated = sampled.truncated;
    r.raw_text = std::move(parsed.raw_text);
    r.prediction_bytes = std::move(parsed.prediction);
    r.token_logprobs = std::move(sampled.logprobs);
    r.tokens = std::move(sampled.tokens);
    for (double lp : r.token_logprobs) r.sum_logprob += lp;
    r.first_token_prob = parsed.answer_begin < r.tokens.size() && !r.prediction_bytes.empty()
                             ? std::exp(r.token_logprobs[parsed.answer_begin])
                             : 0.0;
    predictions.push_back({r.raw_text, r.prediction_bytes, r.first_token_prob});
    group.responses.push_back(std::move(r));
  }
  const auto outcomes = score_group(reward_, predictions, instance.completion_bytes, instance.boundaries);
  for (std::size_t i = 0; i < group_size; ++i) {
    group.responses[i].reward = outcomes[i].reward;
    group.responses[i].matched_boundary = outcomes[i].matched_boundary;
  }
  return group;
}

RolloutGroup NextTokenEnv::sample_group(const Policy& policy, const NextTokenInstance& instance,
                                        std::size_t group_size, double temperature,
                                        std::size_t max_tokens, Rng& rng) const {
  const auto context = context_tokens(instance);
  return sample_group(policy, instance, context, group_size, temperature, max_tokens, rng);
}

OrderedJson rollout_to_json(const RolloutGroup& group) {
  OrderedJson j;
  j["doc_id"] = group.doc_id;
  j["t"] = group.t;
  OrderedJson responses = OrderedJson::array();
  for (const auto& r : group.responses) {
    OrderedJson o;
    o["tokens"] = r.tokens;
    o["raw_text"] = decode_utf8_lossy(r.raw_text).text;
    o["prediction_b64"] = base64_encode(r.prediction_bytes);
    o["sum_logprob"] = r.sum_logprob;
    o["reward"] = r.reward;
    o["advantage"] = r.advantage;
    responses.push_back(std::move(o));
  }
  j["responses"] = std::move(responses);
  return j;
}

void write_rollouts(const std::string& path, std::span<const RolloutGroup> groups) {
  std::vector<OrderedJson> records;
  records.reserve(groups.size());
  for (const auto& g : groups) records.push_back(rollout_to_json(g));
  write_jsonl(path, records);
}

}  // namespace ntr
