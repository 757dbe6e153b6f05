#include "ntr/instance_io.hpp"

#include <filesystem>
#include <fstream>

#include "ntr/error.hpp"

namespace ntr {

void read_jsonl(const std::string& path,
                const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::dependency, "cannot open " + path);
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      fn(record, line_no);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

namespace {

std::ofstream open_for_write(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::io, "cannot write " + path);
  }
  return out;
}

}  // namespace

void write_jsonl(const std::string& path, const std::vector<OrderedJson>& records) {
  auto out = open_for_write(path);
  for (const auto& r : records) {
    out << r.dump() << '\n';
  }
}

void write_json(const std::string& path, const OrderedJson& document) {
  auto out = open_for_write(path);
  out << document.dump(2) << '\n';
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::dependency, "cannot open " + path);
  }
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, path + ": " + e.what());
  }
}

OrderedJson instance_to_json(const NextTokenInstance& instance) {
  OrderedJson j;
  j["doc_id"] = instance.doc_id;
  j["t"] = instance.t;
  j["context_b64"] = base64_encode(instance.context_bytes);
  j["completion_b64"] = base64_encode(instance.completion_bytes);
  j["boundaries"] = instance.boundaries;
  j["entropy"] = instance.entropy ? OrderedJson(*instance.entropy) : OrderedJson(nullptr);
  j["splits"] = instance.splits;
  return j;
}

NextTokenInstance instance_from_json(const nlohmann::json& record) {
  NextTokenInstance inst;
  inst.doc_id = record.at("doc_id").get<std::string>();
  inst.t = record.at("t").get<std::size_t>();
  inst.context_bytes = base64_decode(record.at("context_b64").get<std::string>());
  inst.completion_bytes = base64_decode(record.at("completion_b64").get<std::string>());
  inst.boundaries = record.at("boundaries").get<std::vector<std::size_t>>();
  if (record.contains("entropy") && !record["entropy"].is_null()) {
    inst.entropy = record["entropy"].get<double>();
  }
  if (record.contains("splits")) {
    inst.splits = record["splits"].get<std::vector<std::string>>();
  }
  validate_instance(inst);
  return inst;
}

void validate_instance(const NextTokenInstance& instance) {
  if (instance.t == 0) {
    throw Error(ErrorCode::invalid_position, "instance position must be 1-based");
  }
  if (!instance.completion_bytes.empty() && instance.boundaries.empty()) {
    throw Error(ErrorCode::structural, "instance has a completion but no boundaries");
  }
  std::size_t previous = 0;
  for (std::size_t b : instance.boundaries) {
    if (b <= previous) {
      throw Error(ErrorCode::structural, "boundaries must be positive and strictly increasing");
    }
    previous = b;
  }
  if (previous > instance.completion_bytes.size()) {
    throw Error(ErrorCode::structural, "boundary exceeds completion length");
  }
}

void write_instances(const std::string& path, const std::vector<NextTokenInstance>& instances) {
  std::vector<OrderedJson> records;
  records.reserve(instances.size());
  for (const auto& inst : instances) {
    records.push_back(instance_to_json(inst));
  }
  write_jsonl(path, records);
}

std::vector<NextTokenInstance> read_instances(const std::string& path) {
  std::vector<NextTokenInstance> out;
  read_jsonl(path, [&](const nlohmann::json& rec, std::size_t) { out.push_back(instance_from_json(rec)); });
  return out;
}

}  // namespace ntr
