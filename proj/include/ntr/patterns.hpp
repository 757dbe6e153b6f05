#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ntr/jsonl.hpp"

namespace ntr {

inline constexpr std::array<const char*, 6> kPatternGroups = {
    "transition", "reflection", "breakdown", "hypothesis", "divergent_thinking", "deduction"};

struct KeywordTable {
  std::map<std::string, std::vector<std::string>> groups;

  static KeywordTable defaults();
  // JSON object {group: [keywords]}; listed groups replace the defaults,
  // unknown group names are a configuration error.
  static KeywordTable with_overrides(const nlohmann::json& overrides);
  static KeywordTable from_file(const std::string& path);
};

struct PatternProfile {
  std::size_t total = 0;
  std::map<std::string, std::size_t> matched;

  double proportion(const std::string& group) const;
};

// Lowercased substring match; one response counts at most once per group.
std::vector<std::string> matched_groups(const std::string& response, const KeywordTable& table);

PatternProfile count_patterns(std::span<const std::string> responses, const KeywordTable& table);

OrderedJson profile_to_json(const PatternProfile& profile);

// Response texts from a JSONL file. A record carries "response", "raw_text",
// or is a rollout group whose "responses" each carry "raw_text".
std::vector<std::string> read_responses(const std::string& path);

}  // namespace ntr
