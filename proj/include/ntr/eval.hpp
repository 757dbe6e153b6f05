#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntr/policy.hpp"

namespace ntr {

enum class EvalMode { greedy, reasoning };

EvalMode parse_eval_mode(std::string_view name);
std::string to_string(EvalMode mode);

struct SplitAccuracy {
  std::size_t count = 0;
  std::size_t correct = 0;
  std::optional<double> accuracy;  // null for an empty split
};

inline const std::string kSplitAll = "all";

struct EvalReport {
  // Keys: easy, medium, hard, all.
  std::map<std::string, SplitAccuracy> splits;
  EvalMode mode = EvalMode::reasoning;
  RewardVariant reward = RewardVariant::prefix_match;
  std::size_t group_size = 1;
  double temperature = 0.8;

  const SplitAccuracy& at(const std::string& split) const { return splits.at(split); }
};

struct EvalOptions {
  EvalMode mode = EvalMode::reasoning;
  double temperature = 0.8;
  std::size_t max_response_tokens = 16;
  std::uint64_t seed = 0;
};

/// Next-token accuracy per difficulty split. Greedy mode scores the single
/// most probable token; reasoning mode samples one response and scores its
/// extracted prediction. Correct means the reward validated a boundary. Each
/// instance samples from a stream seeded by (seed, doc_id, t), so results do
/// not depend on instance order or subsetting.
EvalReport evaluate_accuracy(const Policy& policy, const NextTokenEnv& env,
                             std::span<const NextTokenInstance> instances,
                             const EvalOptions& options = {});

// Fraction of groups with a reward-1 response among the first k.
double pass_at_k(std::span<const RolloutGroup> groups, std::size_t k);

OrderedJson report_to_json(const EvalReport& report);

}  // namespace ntr
