#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "ntr/error.hpp"

namespace test {

// Fresh directory under the build tree, emptied on creation.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::path(NTR_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string fixture(const std::string& name) {
  return (std::filesystem::path(NTR_FIXTURE_DIR) / name).string();
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

inline std::string random_bytes(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> byte(0, 255);
  std::string s(n, '\0');
  for (auto& c : s) c = static_cast<char>(byte(rng));
  return s;
}

// Runs `fn` and returns the error code it threw; fails the test if nothing was thrown.
template <typename Fn>
ntr::ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const ntr::Error& e) {
    return e.code();
  }
  throw std::logic_error("expected ntr::Error");
}

}  // namespace test
