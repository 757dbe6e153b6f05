#pragma once

#include <string>
#include <vector>

#include "ntr/corpus.hpp"
#include "ntr/jsonl.hpp"

namespace ntr {

// {"doc_id","t","context_b64","completion_b64","boundaries","entropy","splits"}
OrderedJson instance_to_json(const NextTokenInstance& instance);
NextTokenInstance instance_from_json(const nlohmann::json& record);

void write_instances(const std::string& path, const std::vector<NextTokenInstance>& instances);
std::vector<NextTokenInstance> read_instances(const std::string& path);

// Structural checks on a deserialised instance (boundaries strictly
// increasing, positive, within the completion).
void validate_instance(const NextTokenInstance& instance);

}  // namespace ntr
