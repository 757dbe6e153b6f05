#include "ntr/eval.hpp"

#include <algorithm>
#include <cmath>

#include "ntr/entropy.hpp"
#include "ntr/error.hpp"

namespace ntr {

EvalMode parse_eval_mode(std::string_view name) {
  if (name == "greedy") return EvalMode::greedy;
  if (name == "reasoning") return EvalMode::reasoning;
  throw Error(ErrorCode::configuration, "unknown evaluation mode '" + std::string(name) + "'");
}

std::string to_string(EvalMode mode) {
  return mode == EvalMode::greedy ? "greedy" : "reasoning";
}

EvalReport evaluate_accuracy(const Policy& policy, const NextTokenEnv& env,
                             std::span<const NextTokenInstance> instances, const EvalOptions& options) {
  EvalReport report;
  report.mode = options.mode;
  report.reward = env.reward().variant;
  report.temperature = options.temperature;
  for (const auto& name : {kSplitEasy, kSplitMedium, kSplitHard, kSplitAll}) {
    report.splits[name] = {};
  }

  for (const auto& inst : instances) {
    const auto context = env.context_tokens(inst);
    bool correct = false;
    if (options.mode == EvalMode::greedy) {
      const TokenId token = policy.greedy(context);
      const TokenId response[] = {token};
      const auto parsed = policy.parse(response);
      const double p = std::exp(policy.logprob(context, response, options.temperature).front());
      const Prediction prediction{parsed.raw_text, parsed.prediction, p};
      const auto outcome = score_group(env.reward(), std::span(&prediction, 1), inst.completion_bytes,
                                       inst.boundaries);
      correct = outcome.front().matched_boundary.has_value();
    } else {
      Rng rng(derive_seed(options.seed, inst.doc_id, inst.t));
      const auto group = env.sample_group(policy, inst, context, 1, options.temperature,
                                          options.max_response_tokens, rng);
      correct = group.responses.front().matched_boundary.has_value();
    }
    auto tally = [&](const std::string& split) {
      auto& s = report.splits[split];
      ++s.count;
      if (correct) ++s.correct;
    };
    tally(kSplitAll);
    for (const auto& split : inst.splits) {
      if (report.splits.contains(split)) tally(split);
    }
  }
  for (auto& [name, s] : report.splits) {
    if (s.count > 0) s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.count);
  }
  return report;
}

double pass_at_k(std::span<const RolloutGroup> groups, std::size_t k) {
  if (k == 0) {
    throw Error(ErrorCode::configuration, "k must be at least 1");
  }
  if (groups.empty()) {
    throw Error(ErrorCode::invalid_group, "pass@k over no groups");
  }
  std::size_t passed = 0;
  for (const auto& g : groups) {
    if (g.responses.size() < k) {
      throw Error(ErrorCode::invalid_group, "k=" + std::to_string(k) + " exceeds group size " +
                                                std::to_string(g.responses.size()));
    }
    const auto first_k = std::span(g.responses).first(k);
    if (std::any_of(first_k.begin(), first_k.end(),
                    [](const RolloutResponse& r) { return r.reward == 1.0; })) {
      ++passed;
    }
  }
  return static_cast<double>(passed) / static_cast<double>(groups.size());
}

OrderedJson report_to_json(const EvalReport& report) {
  OrderedJson accuracy;
  OrderedJson counts;
  OrderedJson correct;
  for (const auto& name : {kSplitEasy, kSplitMedium, kSplitHard, kSplitAll}) {
    const auto& s = report.splits.at(name);
    accuracy[name] = s.accuracy ? OrderedJson(*s.accuracy) : OrderedJson(nullptr);
    counts[name] = s.count;
    correct[name] = s.correct;
  }
  OrderedJson j;
  j["accuracy"] = std::move(accuracy);
  j["counts"] = std::move(counts);
  j["correct"] = std::move(correct);
  j["metadata"] = {{"mode", to_string(report.mode)},
                   {"reward", to_string(report.reward)},
                   {"G", report.group_size},
                   {"temperature", report.temperature}};
  return j;
}

}  // namespace ntr
