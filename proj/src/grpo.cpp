#include "ntr/grpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ntr/error.hpp"

namespace ntr {

std::vector<std::string> TrainConfig::diagnostics() const {
  std::vector<std::string> out;
  if (group_size < 2) {
    out.emplace_back("group size G must be at least 2: group-relative advantages need two rewards");
  }
  if (batch_size == 0) out.emplace_back("batch size must be at least 1");
  if (!(clip_epsilon > 0.0)) out.emplace_back("clip epsilon must be positive");
  if (!(temperature > 0.0)) out.emplace_back("temperature must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    out.emplace_back("learning rate must be positive and finite");
  }
  if (!(advantage_epsilon >= 0.0)) out.emplace_back("advantage epsilon must be non-negative");
  if (kl_coefficient != 0.0) out.emplace_back("KL penalty is not supported (coefficient must be 0)");
  if (entropy_coefficient != 0.0) {
    out.emplace_back("entropy bonus is not supported (coefficient must be 0)");
  }
  if (max_response_tokens == 0) out.emplace_back("max response tokens must be at least 1");
  if (!std::isfinite(reward.fallback_reward)) out.emplace_back("fallback reward must be finite");
  return out;
}

OrderedJson log_record_to_json(const TrainLogRecord& r) {
  OrderedJson j;
  j["step"] = r.step;
  j["mean_reward"] = r.mean_reward;
  j["fraction_groups_dropped"] = r.fraction_groups_dropped;
  j["accuracy_on_eval_probe"] = r.accuracy_on_eval_probe;
  j["tokens_processed"] = r.tokens_processed;
  j["wall_time"] = r.wall_time;
  j["probed"] = r.probed;
  j["batch_reward_variance"] = r.batch_reward_variance;
  j["skipped"] = r.skipped;
  return j;
}

TrainLogRecord log_record_from_json(const nlohmann::json& j) {
  TrainLogRecord r;
  r.step = j.at("step").get<std::size_t>();
  r.mean_reward = j.at("mean_reward").get<double>();
  r.fraction_groups_dropped = j.at("fraction_groups_dropped").get<double>();
  r.accuracy_on_eval_probe = j.at("accuracy_on_eval_probe").get<double>();
  r.tokens_processed = j.at("tokens_processed").get<std::uint64_t>();
  r.wall_time = j.value("wall_time", 0.0);
  r.probed = j.value("probed", true);
  r.batch_reward_variance = j.value("batch_reward_variance", 0.0);
  r.skipped = j.value("skipped", false);
  return r;
}

void write_train_log(const std::string& path, std::span<const TrainLogRecord> log) {
  std::vector<OrderedJson> records;
  records.reserve(log.size());
  for (const auto& r : log) records.push_back(log_record_to_json(r));
  write_jsonl(path, records);
}

std::vector<TrainLogRecord> read_train_log(const std::string& path) {
  std::vector<TrainLogRecord> out;
  read_jsonl(path, [&](const nlohmann::json& j, std::size_t) { out.push_back(log_record_from_json(j)); });
  return out;
}

std::vector<double> compute_advantages(std::span<const double> rewards, double advantage_epsilon) {
  if (rewards.size() < 2) {
    throw Error(ErrorCode::invalid_group, "advantages need at least two rewards, got " +
                                              std::to_string(rewards.size()));
  }
  const auto n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double denom = std::sqrt(ss / n) + advantage_epsilon;
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) {
    const double centered = r - mean;
    out.push_back(centered == 0.0 ? 0.0 : centered / denom);
  }
  return out;
}

void assign_advantages(RolloutGroup& group, double advantage_epsilon) {
  std::vector<double> rewards;
  rewards.reserve(group.responses.size());
  for (const auto& r : group.responses) rewards.push_back(r.reward);
  const auto adv = compute_advantages(rewards, advantage_epsilon);
  for (std::size_t i = 0; i < adv.size(); ++i) group.responses[i].advantage = adv[i];
}

std::vector<RolloutGroup> dynamic_sampling_filter(std::vector<RolloutGroup> groups, std::size_t step,
                                                  const TrainConfig& config) {
  if (step < config.dynamic_sampling_start_step) {
    return groups;
  }
  std::erase_if(groups, [](const RolloutGroup& g) { return reward_variance(g) == 0.0; });
  return groups;
}

namespace {

std::size_t group_tokens(const RolloutGroup& g) {
  std::size_t n = 0;
  for (const auto& r : g.responses) n += r.tokens.size();
  return n;
}

bool clipped_branch_active(double ratio, double advantage, double clip_epsilon) {
  return (advantage > 0.0 && ratio > 1.0 + clip_epsilon) ||
         (advantage < 0.0 && ratio < 1.0 - clip_epsilon);
}

bool all_finite(const ToyPolicy::Gradient& g) {
  return std::all_of(g.begin(), g.end(), [](const auto& kv) { return kv.second.allFinite(); });
}

}  // namespace

double clipped_surrogate(const ToyPolicy& policy, std::span<const RolloutGroup> groups,
                         double clip_epsilon, double temperature) {
  if (groups.empty()) return 0.0;
  double total = 0.0;
  for (const auto& g : groups) {
    const std::size_t tokens = group_tokens(g);
    if (tokens == 0) continue;
    double sum = 0.0;
    for (const auto& r : g.responses) {
      const auto lp = policy.logprob(g.context_tokens, r.tokens, temperature);
      for (std::size_t j = 0; j < r.tokens.size(); ++j) {
        const double ratio = std::exp(lp[j] - r.token_logprobs[j]);
        const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
        sum += std::min(ratio * r.advantage, clipped * r.advantage);
      }
    }
    total += sum / static_cast<double>(tokens);
  }
  return total / static_cast<double>(groups.size());
}

ToyPolicy::Gradient clipped_surrogate_gradient(const ToyPolicy& policy,
                                               std::span<const RolloutGroup> groups,
                                               double clip_epsilon, double temperature) {
  ToyPolicy::Gradient grad;
  if (groups.empty()) return grad;
  const double per_group = 1.0 / static_cast<double>(groups.size());
  for (const auto& g : groups) {
    const std::size_t tokens = group_tokens(g);
    if (tokens == 0) continue;
    const double norm = per_group / static_cast<double>(tokens);
    for (const auto& r : g.responses) {
      if (r.advantage == 0.0) continue;
      const auto lp = policy.logprob(g.context_tokens, r.tokens, temperature);
      for (std::size_t j = 0; j < r.tokens.size(); ++j) {
        const double ratio = std::exp(lp[j] - r.token_logprobs[j]);
        if (clipped_branch_active(ratio, r.advantage, clip_epsilon)) continue;
        policy.add_logprob_gradient(policy.key(g.context_tokens, r.tokens, j), r.tokens[j],
                                    temperature, r.advantage * ratio * norm, grad);
      }
    }
  }
  return grad;
}

void ascend(ToyPolicy& policy, const ToyPolicy::Gradient& gradient, const TrainConfig& config,
            OptimizerState& state) {
  if (!all_finite(gradient)) {
    throw Error(ErrorCode::non_finite, "gradient contains non-finite values; step aborted");
  }
  if (config.optimizer == OptimizerKind::sgd) {
    policy.apply(gradient, config.learning_rate);
    ++state.updates;
    return;
  }
  const auto& adam = config.adam;
  ++state.updates;
  const double t = static_cast<double>(state.updates);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  ToyPolicy::Gradient direction;
  for (const auto& [k, g] : gradient) {
    auto& m = state.first_moment.try_emplace(k, Eigen::VectorXd::Zero(g.size())).first->second;
    auto& v = state.second_moment.try_emplace(k, Eigen::VectorXd::Zero(g.size())).first->second;
    m = adam.beta1 * m + (1.0 - adam.beta1) * g;
    v = adam.beta2 * v + (1.0 - adam.beta2) * g.cwiseProduct(g);
    const Eigen::VectorXd step =
        ((m / c1).array() / ((v / c2).array().sqrt() + adam.epsilon)).matrix();
    // Decoupled weight decay pulls logits toward zero.
    direction[k] = step - adam.weight_decay * policy.logits(k);
  }
  policy.apply(direction, config.learning_rate);
}

StepOutcome policy_gradient_step(ToyPolicy& policy, std::span<const RolloutGroup> groups,
                                 const TrainConfig& config, OptimizerState& state) {
  StepOutcome out;
  const bool any_signal = std::any_of(groups.begin(), groups.end(), [](const RolloutGroup& g) {
    return std::any_of(g.responses.begin(), g.responses.end(),
                       [](const RolloutResponse& r) { return r.advantage != 0.0; });
  });
  if (groups.empty() || !any_signal) {
    return out;
  }
  out.surrogate = clipped_surrogate(policy, groups, config.clip_epsilon, config.temperature);
  const auto grad = clipped_surrogate_gradient(policy, groups, config.clip_epsilon, config.temperature);
  ascend(policy, grad, config, state);
  out.updated = true;
  return out;
}

double ntp_log_likelihood(const ToyPolicy& policy, std::span<const NtpExample> batch) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : batch) {
    const TokenId target[] = {ex.target};
    total += policy.logprob(ex.context, target, 1.0).front();
  }
  return total / static_cast<double>(batch.size());
}

ToyPolicy::Gradient ntp_gradient(const ToyPolicy& policy, std::span<const NtpExample> batch) {
  ToyPolicy::Gradient grad;
  const double w = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    policy.add_logprob_gradient(policy.key(ex.context), ex.target, 1.0, w, grad);
  }
  return grad;
}

void ntp_step(ToyPolicy& policy, std::span<const NtpExample> batch, double learning_rate) {
  if (batch.empty()) return;
  const auto grad = ntp_gradient(policy, batch);
  if (!all_finite(grad)) {
    throw Error(ErrorCode::non_finite, "NTP gradient contains non-finite values; step aborted");
  }
  policy.apply(grad, learning_rate);
}

namespace {

class BatchCursor {
 public:
  BatchCursor(std::size_t n, std::uint64_t seed) : order_(n), rng_(derive_seed(seed, "batch")) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

bool contains(const std::vector<std::size_t>& v, std::size_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

TrainLogRecord initial_record(const ToyPolicy& policy, const TrainHooks& hooks) {
  TrainLogRecord r;
  if (hooks.probe) {
    r.accuracy_on_eval_probe = hooks.probe(policy, 0);
    r.probed = true;
  }
  return r;
}

void finish_step(TrainLogRecord& rec, const ToyPolicy& policy, const TrainLogRecord& previous,
                 const TrainHooks& hooks, const TrainConfig& config) {
  rec.accuracy_on_eval_probe = previous.accuracy_on_eval_probe;
  if (hooks.probe && contains(hooks.probe_steps, rec.step)) {
    rec.accuracy_on_eval_probe = hooks.probe(policy, rec.step);
    rec.probed = true;
  }
  if (hooks.on_checkpoint && contains(config.checkpoint_steps, rec.step)) {
    hooks.on_checkpoint(policy, rec.step);
  }
}

}  // namespace

TrainResult train_grpo(ToyPolicy& policy, const NextTokenEnv& env,
                       std::span<const NextTokenInstance> instances, const TrainConfig& config,
                       const TrainHooks& hooks) {
  if (const auto diags = config.diagnostics(); !diags.empty()) {
    throw Error(ErrorCode::configuration, diags.front());
  }
  if (instances.empty()) {
    throw Error(ErrorCode::empty_corpus, "no training instances");
  }
  std::vector<std::vector<TokenId>> contexts;
  contexts.reserve(instances.size());
  for (const auto& inst : instances) contexts.push_back(env.context_tokens(inst));

  const auto start = Clock::now();
  TrainResult result;
  result.log.push_back(initial_record(policy, hooks));
  BatchCursor cursor(instances.size(), config.seed);
  OptimizerState state;
  std::uint64_t tokens = 0;

  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    const auto batch = cursor.next(config.batch_size);
    std::vector<RolloutGroup> groups;
    groups.reserve(batch.size());
    double reward_sum = 0.0;
    const std::string stream = "rollout/" + std::to_string(step);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Rng rng(derive_seed(config.seed, stream, i));
      const auto idx = batch[i];
      auto group = env.sample_group(policy, instances[idx], contexts[idx], config.group_size,
                                    config.temperature, config.max_response_tokens, rng);
      assign_advantages(group, config.advantage_epsilon);
      for (const auto& r : group.responses) {
        tokens += contexts[idx].size() + r.tokens.size();
        reward_sum += r.reward;
      }
      groups.push_back(std::move(group));
    }
    if (hooks.on_rollouts) hooks.on_rollouts(groups, step);

    TrainLogRecord rec;
    rec.step = step;
    rec.mean_reward = reward_sum / static_cast<double>(batch.size() * config.group_size);
    const auto retained = dynamic_sampling_filter(std::move(groups), step, config);
    rec.fraction_groups_dropped =
        1.0 - static_cast<double>(retained.size()) / static_cast<double>(batch.size());
    rec.skipped = retained.empty();
    if (!retained.empty()) {
      double var = 0.0;
      for (const auto& g : retained) var += reward_variance(g);
      rec.batch_reward_variance = var / static_cast<double>(retained.size());
      policy_gradient_step(policy, retained, config, state);
    }
    rec.tokens_processed = tokens;
    finish_step(rec, policy, result.log.back(), hooks, config);
    rec.wall_time = seconds_since(start);
    result.log.push_back(rec);
  }
  return result;
}

TrainResult train_ntp(ToyPolicy& policy, const NextTokenEnv& env,
                      std::span<const NextTokenInstance> instances, const TrainConfig& config,
                      const TrainHooks& hooks) {
  if (instances.empty()) {
    throw Error(ErrorCode::empty_corpus, "no training instances");
  }
  std::vector<NtpExample> examples;
  examples.reserve(instances.size());
  for (const auto& inst : instances) {
    examples.push_back({env.context_tokens(inst), env.target_token(inst)});
  }
  const auto start = Clock::now();
  TrainResult result;
  result.log.push_back(initial_record(policy, hooks));
  BatchCursor cursor(examples.size(), config.seed);
  std::uint64_t tokens = 0;
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    std::vector<NtpExample> batch;
    for (std::size_t idx : cursor.next(config.batch_size)) {
      batch.push_back(examples[idx]);
      tokens += examples[idx].context.size() + 1;
    }
    TrainLogRecord rec;
    rec.step = step;
    rec.mean_reward = std::exp(ntp_log_likelihood(policy, batch));
    ntp_step(policy, batch, config.learning_rate);
    rec.tokens_processed = tokens;
    finish_step(rec, policy, result.log.back(), hooks, config);
    rec.wall_time = seconds_since(start);
    result.log.push_back(rec);
  }
  return result;
}

}  // namespace ntr
