#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntr/policy.hpp"

namespace ntr {

enum class OptimizerKind { sgd, adamw };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t group_size = 8;
  double learning_rate = 0.1;  // toy default; large-model runs used 1e-6
  double clip_epsilon = 0.2;
  double kl_coefficient = 0.0;
  double entropy_coefficient = 0.0;
  double temperature = 0.8;
  std::size_t dynamic_sampling_start_step = 500;
  std::size_t total_steps = 1000;
  double advantage_epsilon = 1e-6;
  std::size_t max_response_tokens = 16;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::sgd;
  AdamConfig adam;
  RewardSpec reward;
  std::vector<std::size_t> checkpoint_steps{100, 200, 400, 800, 1000, 1200};

  std::vector<std::string> diagnostics() const;
};

struct TrainLogRecord {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double fraction_groups_dropped = 0.0;
  double accuracy_on_eval_probe = 0.0;  // latest probe value
  bool probed = false;                   // probe evaluated at this step
  std::uint64_t tokens_processed = 0;    // cumulative prompt + response tokens
  double wall_time = 0.0;                // seconds since training start
  double batch_reward_variance = 0.0;    // mean over groups kept for the gradient
  bool skipped = false;                  // every group dropped
};

OrderedJson log_record_to_json(const TrainLogRecord& record);
TrainLogRecord log_record_from_json(const nlohmann::json& record);
void write_train_log(const std::string& path, std::span<const TrainLogRecord> log);
std::vector<TrainLogRecord> read_train_log(const std::string& path);

/// Group-relative advantages (r - mean) / (population std + epsilon).
std::vector<double> compute_advantages(std::span<const double> rewards, double advantage_epsilon = 1e-6);

// Fills every response's advantage from the group's rewards.
void assign_advantages(RolloutGroup& group, double advantage_epsilon);

// Identity before `dynamic_sampling_start_step`; afterwards drops groups whose
// rewards have zero variance.
std::vector<RolloutGroup> dynamic_sampling_filter(std::vector<RolloutGroup> groups, std::size_t step,
                                                  const TrainConfig& config);

/// Clipped surrogate, averaged over groups, each group normalised by its
/// token count. Behaviour log-probabilities are the ones stored on the
/// responses; ratios use the policy's current parameters.
double clipped_surrogate(const ToyPolicy& policy, std::span<const RolloutGroup> groups,
                         double clip_epsilon, double temperature);
ToyPolicy::Gradient clipped_surrogate_gradient(const ToyPolicy& policy,
                                               std::span<const RolloutGroup> groups,
                                               double clip_epsilon, double temperature);

// Optimizer state shared across steps (AdamW moments keyed like the policy rows).
struct OptimizerState {
  std::size_t updates = 0;
  ToyPolicy::Gradient first_moment;
  ToyPolicy::Gradient second_moment;
};

// Gradient ascent along `gradient`. Non-finite gradients throw
// Error(non_finite) without touching the policy.
void ascend(ToyPolicy& policy, const ToyPolicy::Gradient& gradient, const TrainConfig& config,
            OptimizerState& state);

struct StepOutcome {
  bool updated = false;
  double surrogate = 0.0;
};

// One on-policy update from freshly sampled groups (advantages already set).
StepOutcome policy_gradient_step(ToyPolicy& policy, std::span<const RolloutGroup> groups,
                                 const TrainConfig& config, OptimizerState& state);

struct NtpExample {
  std::vector<TokenId> context;
  TokenId target = 0;
};

// Mean log-likelihood of the targets at temperature 1.
double ntp_log_likelihood(const ToyPolicy& policy, std::span<const NtpExample> batch);
ToyPolicy::Gradient ntp_gradient(const ToyPolicy& policy, std::span<const NtpExample> batch);
void ntp_step(ToyPolicy& policy, std::span<const NtpExample> batch, double learning_rate);

struct TrainHooks {
  // Accuracy probe; called at `probe_steps` (and step 0).
  std::function<double(const ToyPolicy&, std::size_t step)> probe;
  std::vector<std::size_t> probe_steps;
  std::function<void(const ToyPolicy&, std::size_t step)> on_checkpoint;
  std::function<void(std::span<const RolloutGroup>, std::size_t step)> on_rollouts;
};

struct TrainResult {
  std::vector<TrainLogRecord> log;  // log[0] is the step-0 probe
};

/// GRPO training against the environment's reward. Batches cycle through a
/// seeded shuffle of `instances`; each group draws from its own seeded stream.
TrainResult train_grpo(ToyPolicy& policy, const NextTokenEnv& env,
                       std::span<const NextTokenInstance> instances, const TrainConfig& config,
                       const TrainHooks& hooks = {});

/// Next-token-prediction baseline on the same instances (target = first
/// ground-truth token), same batching and logging.
TrainResult train_ntp(ToyPolicy& policy, const NextTokenEnv& env,
                      std::span<const NextTokenInstance> instances, const TrainConfig& config,
                      const TrainHooks& hooks = {});

}  // namespace ntr
