#include "ntr/patterns.hpp"

#include <algorithm>
#include <cctype>

#include "ntr/error.hpp"

namespace ntr {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool known_group(const std::string& g) {
  return std::find(kPatternGroups.begin(), kPatternGroups.end(), g) != kPatternGroups.end();
}

}  // namespace

KeywordTable KeywordTable::defaults() {
  KeywordTable t;
  t.groups["transition"] = {"alternatively", "think differently"};
  t.groups["reflection"] = {"wait", "initial answer", "original answer", "looking back", "thought process"};
  t.groups["breakdown"] = {"break down", "break this down"};
  t.groups["hypothesis"] = {"probably", "something like"};
  t.groups["divergent_thinking"] = {"etc.",      "or something", "either", "sometimes it refers",
                                    "otherwise", "exploring",    "options"};
  t.groups["deduction"] = {"summarize", "conclusion", "conclude", "finally", "logically", "consequently"};
  return t;
}

KeywordTable KeywordTable::with_overrides(const nlohmann::json& overrides) {
  if (!overrides.is_object()) {
    throw Error(ErrorCode::configuration, "keyword table must be a JSON object");
  }
  auto t = defaults();
  for (const auto& [group, words] : overrides.items()) {
    if (!known_group(group)) {
      throw Error(ErrorCode::configuration, "unknown pattern group '" + group + "'");
    }
    if (!words.is_array()) {
      throw Error(ErrorCode::configuration, "keywords for '" + group + "' must be an array");
    }
    std::vector<std::string> list;
    for (const auto& w : words) {
      auto s = w.get<std::string>();
      if (s.empty()) throw Error(ErrorCode::configuration, "empty keyword in '" + group + "'");
      list.push_back(std::move(s));
    }
    t.groups[group] = std::move(list);
  }
  return t;
}

KeywordTable KeywordTable::from_file(const std::string& path) { return with_overrides(read_json(path)); }

double PatternProfile::proportion(const std::string& group) const {
  if (total == 0) return 0.0;
  auto it = matched.find(group);
  return it == matched.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(total);
}

std::vector<std::string> matched_groups(const std::string& response, const KeywordTable& table) {
  const auto text = lower(response);
  std::vector<std::string> out;
  for (const auto* group : kPatternGroups) {
    auto it = table.groups.find(group);
    if (it == table.groups.end()) continue;
    for (const auto& kw : it->second) {
      if (text.find(lower(kw)) != std::string::npos) {
        out.emplace_back(group);
        break;
      }
    }
  }
  return out;
}

PatternProfile count_patterns(std::span<const std::string> responses, const KeywordTable& table) {
  if (responses.empty()) {
    throw Error(ErrorCode::insufficient_data, "pattern profile over an empty response list");
  }
  PatternProfile p;
  p.total = responses.size();
  for (const auto* g : kPatternGroups) p.matched[g] = 0;
  for (const auto& r : responses) {
    for (const auto& g : matched_groups(r, table)) ++p.matched[g];
  }
  return p;
}

OrderedJson profile_to_json(const PatternProfile& profile) {
  OrderedJson j;
  j["total"] = profile.total;
  OrderedJson groups = OrderedJson::object();
  for (const auto* g : kPatternGroups) {
    OrderedJson e;
    auto it = profile.matched.find(g);
    e["matched"] = it == profile.matched.end() ? 0 : it->second;
    e["proportion"] = profile.proportion(g);
    groups[g] = std::move(e);
  }
  j["groups"] = std::move(groups);
  return j;
}

std::vector<std::string> read_responses(const std::string& path) {
  std::vector<std::string> out;
  read_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    if (j.contains("response")) {
      out.push_back(j.at("response").get<std::string>());
    } else if (j.contains("responses")) {
      for (const auto& r : j.at("responses")) out.push_back(r.at("raw_text").get<std::string>());
    } else if (j.contains("raw_text")) {
      out.push_back(j.at("raw_text").get<std::string>());
    } else {
      throw Error(ErrorCode::parse, path + ":" + std::to_string(line) + ": no response text");
    }
  });
  return out;
}

}  // namespace ntr
