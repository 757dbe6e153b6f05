#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ntr/corpus.hpp"
#include "ntr/jsonl.hpp"
#include "ntr/reward.hpp"

namespace ntr {

// One verification request. `prediction_raw` goes through answer extraction;
// `prediction_b64` is taken as the final answer bytes.
struct VerifyRequest {
  Bytes context;
  Bytes completion;
  std::vector<std::size_t> boundaries;
  std::optional<std::string> prediction_raw;
  std::optional<Bytes> prediction;
  std::optional<double> first_token_prob;
  std::optional<std::string> error;  // set when the request itself is malformed
};

struct VerifyResponse {
  double reward = 0.0;
  std::optional<std::size_t> matched_boundary;
  std::optional<std::string> error;
};

// Parses {"context_b64","completion_b64","boundaries","prediction_raw"|"prediction_b64",
// "first_token_prob"}. Never throws: problems land in `error`.
VerifyRequest request_from_json(const nlohmann::json& record);

// Pairs an instance with a prediction record {"prediction_raw"|"prediction_b64","first_token_prob"}.
VerifyRequest request_from_instance(const NextTokenInstance& instance, const nlohmann::json& prediction);

/// Scores requests in order. Under conditional_dense, consecutive requests
/// sharing context, completion and boundaries form one group. Failures are
/// reported per request.
std::vector<VerifyResponse> verify_requests(const std::vector<VerifyRequest>& requests, const RewardSpec& spec);

OrderedJson response_to_json(const VerifyResponse& response);

}  // namespace ntr
