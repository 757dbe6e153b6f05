#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ntr {

using OrderedJson = nlohmann::ordered_json;

// Calls `fn(record, line_number)` for every non-empty line; parse failures
// throw Error(parse) with the file and line.
void read_jsonl(const std::string& path,
                const std::function<void(const nlohmann::json&, std::size_t)>& fn);

void write_jsonl(const std::string& path, const std::vector<OrderedJson>& records);
void write_json(const std::string& path, const OrderedJson& document);
nlohmann::json read_json(const std::string& path);

}  // namespace ntr
