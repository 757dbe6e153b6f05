#include "ntr/reward.hpp"

#include <algorithm>
#include <cmath>

#include "ntr/error.hpp"

namespace ntr {

RewardVariant parse_reward_variant(std::string_view name) {
  if (name == "prefix" || name == "prefix_match") return RewardVariant::prefix_match;
  if (name == "first" || name == "first_token") return RewardVariant::first_token;
  if (name == "dense") return RewardVariant::dense;
  if (name == "cond-dense" || name == "conditional_dense") return RewardVariant::conditional_dense;
  throw Error(ErrorCode::configuration, "unknown reward variant '" + std::string(name) + "'");
}

std::string to_string(RewardVariant variant) {
  switch (variant) {
    case RewardVariant::prefix_match: return "prefix_match";
    case RewardVariant::first_token: return "first_token";
    case RewardVariant::dense: return "dense";
    case RewardVariant::conditional_dense: return "conditional_dense";
  }
  return "unknown";
}

namespace {

// Index of the brace closing the one opened just before `open`, or npos.
std::size_t match_brace(std::string_view s, std::size_t open) {
  int depth = 1;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '\\' && i + 1 < s.size() && (s[i + 1] == '{' || s[i + 1] == '}')) {
      ++i;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}' && --depth == 0) {
      return i;
    }
  }
  return std::string_view::npos;
}

}  // namespace

std::optional<Bytes> extract_prediction(std::string_view raw_response) {
  const auto think = raw_response.rfind(kThinkEnd);
  if (think == std::string_view::npos) {
    return std::nullopt;
  }
  std::optional<Bytes> last;
  std::size_t pos = think + kThinkEnd.size();
  while (true) {
    const auto open = raw_response.find(kBoxedOpen, pos);
    if (open == std::string_view::npos) break;
    const std::size_t body = open + kBoxedOpen.size();
    const std::size_t close = match_brace(raw_response, body);
    if (close == std::string_view::npos) break;
    last = Bytes(raw_response.substr(body, close - body));
    pos = close + 1;
  }
  return last;
}

RewardOutcome prefix_match_reward(std::string_view prediction, std::string_view completion,
                                  std::span<const std::size_t> boundaries) {
  const std::size_t l = prediction.size();
  if (l > completion.size() || completion.substr(0, l) != prediction) {
    return {};
  }
  if (std::find(boundaries.begin(), boundaries.end(), l) == boundaries.end()) {
    return {};
  }
  return {1.0, l};
}

RewardOutcome first_token_reward(std::string_view prediction, std::string_view completion,
                                 std::span<const std::size_t> boundaries) {
  if (boundaries.empty()) {
    throw Error(ErrorCode::structural, "first-token reward needs at least one boundary");
  }
  const std::size_t first = *std::min_element(boundaries.begin(), boundaries.end());
  if (prediction.size() < first || prediction.substr(0, first) != completion.substr(0, first)) {
    return {};
  }
  return {1.0, first};
}

RewardOutcome dense_reward(const Prediction& prediction, std::string_view completion,
                           std::span<const std::size_t> boundaries) {
  if (!prediction.first_token_prob) {
    throw Error(ErrorCode::configuration, "dense reward needs the first-token probability");
  }
  const double p = *prediction.first_token_prob;
  if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
    throw Error(ErrorCode::configuration, "first-token probability must lie in [0, 1]");
  }
  auto correct = first_token_reward(prediction.prediction_bytes, completion, boundaries);
  if (correct.reward == 1.0) {
    return correct;
  }
  return {p, std::nullopt};
}

std::vector<RewardOutcome> conditional_dense_group_reward(std::span<const Prediction> group,
                                                          std::string_view completion,
                                                          std::span<const std::size_t> boundaries,
                                                          double fallback_reward) {
  if (group.empty()) {
    throw Error(ErrorCode::invalid_group, "conditional dense reward over an empty group");
  }
  if (!std::isfinite(fallback_reward)) {
    throw Error(ErrorCode::configuration, "fallback reward must be finite");
  }
  std::vector<RewardOutcome> out;
  out.reserve(group.size());
  bool any_correct = false;
  for (const auto& member : group) {
    out.push_back(dense_reward(member, completion, boundaries));
    any_correct = any_correct || out.back().matched_boundary.has_value();
  }
  if (!any_correct) {
    std::fill(out.begin(), out.end(), RewardOutcome{fallback_reward, std::nullopt});
  }
  return out;
}

std::vector<RewardOutcome> score_group(const RewardSpec& spec, std::span<const Prediction> group,
                                       std::string_view completion,
                                       std::span<const std::size_t> boundaries) {
  if (spec.variant == RewardVariant::conditional_dense) {
    return conditional_dense_group_reward(group, completion, boundaries, spec.fallback_reward);
  }
  std::vector<RewardOutcome> out;
  out.reserve(group.size());
  for (const auto& member : group) {
    switch (spec.variant) {
      case RewardVariant::prefix_match:
        out.push_back(prefix_match_reward(member.prediction_bytes, completion, boundaries));
        break;
      case RewardVariant::first_token:
        out.push_back(first_token_reward(member.prediction_bytes, completion, boundaries));
        break;
      default:
        out.push_back(dense_reward(member, completion, boundaries));
        break;
    }
  }
  return out;
}

}  // namespace ntr
