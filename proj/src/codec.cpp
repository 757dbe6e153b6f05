#include "ntr/codec.hpp"

#include <sodium.h>

#include <array>
#include <fstream>
#include <iterator>
#include <mutex>

#include "ntr/error.hpp"

namespace ntr {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::structural: return "structural error";
    case ErrorCode::invalid_position: return "invalid position";
    case ErrorCode::invalid_distribution: return "invalid distribution";
    case ErrorCode::incomplete_scoring: return "incomplete scoring";
    case ErrorCode::invalid_group: return "invalid group";
    case ErrorCode::configuration: return "configuration error";
    case ErrorCode::empty_corpus: return "empty corpus";
    case ErrorCode::insufficient_data: return "insufficient data";
    case ErrorCode::collinearity: return "collinearity";
    case ErrorCode::log_corruption: return "log corruption";
    case ErrorCode::non_finite: return "non-finite value";
    case ErrorCode::decode: return "decode error";
    case ErrorCode::parse: return "parse error";
    case ErrorCode::io: return "io error";
    case ErrorCode::dependency: return "dependency error";
  }
  return "error";
}

namespace {

void ensure_sodium() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    if (sodium_init() < 0) {
      throw Error(ErrorCode::configuration, "libsodium initialisation failed");
    }
  });
}

constexpr int kVariant = sodium_base64_VARIANT_ORIGINAL;

}  // namespace

std::string base64_encode(std::string_view bytes) {
  ensure_sodium();
  std::string out(sodium_base64_encoded_len(bytes.size(), kVariant), '\0');
  sodium_bin2base64(out.data(), out.size(),
                    reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), kVariant);
  out.resize(out.size() - 1);  // trailing NUL
  return out;
}

Bytes base64_decode(std::string_view text) {
  ensure_sodium();
  Bytes out(text.size() / 4 * 3 + 3, '\0');
  size_t written = 0;
  const char* end = nullptr;
  const int rc = sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), out.size(),
                                   text.data(), text.size(), nullptr, &written, &end, kVariant);
  if (rc != 0 || end != text.data() + text.size()) {
    throw Error(ErrorCode::decode, "malformed base64 string");
  }
  out.resize(written);
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  ensure_sodium();
  std::array<unsigned char, crypto_hash_sha256_BYTES> digest{};
  crypto_hash_sha256(digest.data(), reinterpret_cast<const unsigned char*>(bytes.data()),
                     bytes.size());
  std::string hex(digest.size() * 2 + 1, '\0');
  sodium_bin2hex(hex.data(), hex.size(), digest.data(), digest.size());
  hex.pop_back();
  return hex;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::io, "cannot open " + path);
  }
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(content);
}

}  // namespace ntr
