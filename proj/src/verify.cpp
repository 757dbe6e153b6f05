#include "ntr/verify.hpp"

#include "ntr/codec.hpp"
#include "ntr/error.hpp"
#include "ntr/instance_io.hpp"

namespace ntr {

namespace {

void read_prediction(VerifyRequest& r, const nlohmann::json& j) {
  if (j.contains("prediction_raw") && !j.at("prediction_raw").is_null()) {
    r.prediction_raw = j.at("prediction_raw").get<std::string>();
  } else if (j.contains("prediction_b64") && !j.at("prediction_b64").is_null()) {
    r.prediction = base64_decode(j.at("prediction_b64").get<std::string>());
  } else {
    throw Error(ErrorCode::parse, "request has neither prediction_raw nor prediction_b64");
  }
  if (j.contains("first_token_prob") && !j.at("first_token_prob").is_null()) {
    r.first_token_prob = j.at("first_token_prob").get<double>();
  }
}

bool same_instance(const VerifyRequest& a, const VerifyRequest& b) {
  return !a.error && !b.error && a.context == b.context && a.completion == b.completion &&
         a.boundaries == b.boundaries;
}

}  // namespace

VerifyRequest request_from_json(const nlohmann::json& j) {
  VerifyRequest r;
  try {
    r.context = base64_decode(j.at("context_b64").get<std::string>());
    r.completion = base64_decode(j.at("completion_b64").get<std::string>());
    r.boundaries = j.at("boundaries").get<std::vector<std::size_t>>();
    read_prediction(r, j);
    NextTokenInstance probe;
    probe.doc_id = "request";
    probe.t = 1;
    probe.completion_bytes = r.completion;
    probe.boundaries = r.boundaries;
    validate_instance(probe);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

VerifyRequest request_from_instance(const NextTokenInstance& instance, const nlohmann::json& prediction) {
  VerifyRequest r;
  r.context = instance.context_bytes;
  r.completion = instance.completion_bytes;
  r.boundaries = instance.boundaries;
  try {
    read_prediction(r, prediction);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

std::vector<VerifyResponse> verify_requests(const std::vector<VerifyRequest>& requests, const RewardSpec& spec) {
  std::vector<VerifyResponse> out(requests.size());
  std::size_t i = 0;
  while (i < requests.size()) {
    std::size_t end = i + 1;
    if (spec.variant == RewardVariant::conditional_dense) {
      while (end < requests.size() && same_instance(requests[i], requests[end])) ++end;
    }
    if (requests[i].error) {
      out[i].error = requests[i].error;
      i = end;
      continue;
    }
    std::vector<Prediction> group;
    for (std::size_t k = i; k < end; ++k) {
      const auto& r = requests[k];
      Prediction p;
      p.first_token_prob = r.first_token_prob;
      if (r.prediction_raw) {
        p.raw_response = *r.prediction_raw;
        p.prediction_bytes = extract_prediction(*r.prediction_raw).value_or(Bytes{});
      } else {
        p.prediction_bytes = *r.prediction;
      }
      group.push_back(std::move(p));
    }
    try {
      const auto outcomes = score_group(spec, group, requests[i].completion, requests[i].boundaries);
      for (std::size_t k = 0; k < outcomes.size(); ++k) {
        out[i + k].reward = outcomes[k].reward;
        out[i + k].matched_boundary = outcomes[k].matched_boundary;
      }
    } catch (const std::exception& e) {
      for (std::size_t k = i; k < end; ++k) out[k].error = e.what();
    }
    i = end;
  }
  return out;
}

OrderedJson response_to_json(const VerifyResponse& r) {
  OrderedJson j;
  j["reward"] = r.reward;
  j["matched_boundary"] = r.matched_boundary ? OrderedJson(*r.matched_boundary) : OrderedJson(nullptr);
  j["error"] = r.error ? OrderedJson(*r.error) : OrderedJson(nullptr);
  return j;
}

}  // namespace ntr
