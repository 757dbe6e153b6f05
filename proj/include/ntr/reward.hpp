#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ntr/codec.hpp"

namespace ntr {

enum class RewardVariant { prefix_match, first_token, dense, conditional_dense };

// Accepts the CLI names (prefix, first, dense, cond-dense) and the long forms.
RewardVariant parse_reward_variant(std::string_view name);
std::string to_string(RewardVariant variant);

struct RewardSpec {
  RewardVariant variant = RewardVariant::prefix_match;
  double fallback_reward = 0.0;  // conditional_dense, all-incorrect groups
};

struct Prediction {
  std::string raw_response;
  Bytes prediction_bytes;
  std::optional<double> first_token_prob;
};

struct RewardOutcome {
  double reward = 0.0;
  std::optional<std::size_t> matched_boundary;

  bool operator==(const RewardOutcome&) const = default;
};

inline constexpr std::string_view kThinkEnd = "</think>";
inline constexpr std::string_view kBoxedOpen = "\\boxed{";

/// Final answer of a reasoning response: the contents of the last top-level
/// `\boxed{...}` after the last `</think>`.
///
/// Braces are matched by depth; `\{` and `\}` are escapes that do not change
/// depth. Contents are returned verbatim, including leading spaces. Returns
/// nullopt when there is no `</think>`, no `\boxed{` after it, or the braces
/// never close.
std::optional<Bytes> extract_prediction(std::string_view raw_response);

// 1 iff prediction == completion[0:l] and l is one of the boundaries.
RewardOutcome prefix_match_reward(std::string_view prediction, std::string_view completion,
                                  std::span<const std::size_t> boundaries);

// 1 iff the prediction's leading b1 bytes equal the completion's, b1 being
// the first boundary; anything after the first token is ignored.
RewardOutcome first_token_reward(std::string_view prediction, std::string_view completion,
                                 std::span<const std::size_t> boundaries);

// 1 when the first token is correct, otherwise the supplied probability of
// the first predicted token. Missing probability is a configuration error.
RewardOutcome dense_reward(const Prediction& prediction, std::string_view completion,
                           std::span<const std::size_t> boundaries);

// Dense rewards when at least one member is first-token correct, otherwise
// `fallback_reward` for everyone.
std::vector<RewardOutcome> conditional_dense_group_reward(std::span<const Prediction> group,
                                                          std::string_view completion,
                                                          std::span<const std::size_t> boundaries,
                                                          double fallback_reward = 0.0);

// Scores every member of a group sharing one instance under `spec`.
std::vector<RewardOutcome> score_group(const RewardSpec& spec, std::span<const Prediction> group,
                                       std::string_view completion,
                                       std::span<const std::size_t> boundaries);

}  // namespace ntr
