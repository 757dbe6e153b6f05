#pragma once

#include <string>
#include <string_view>

namespace ntr {

// Raw byte strings. std::string is used as a byte container; no encoding is
// implied.
using Bytes = std::string;

std::string base64_encode(std::string_view bytes);

// Strict standard-alphabet decode with padding; throws Error(decode) on
// malformed input.
Bytes base64_decode(std::string_view text);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

}  // namespace ntr
