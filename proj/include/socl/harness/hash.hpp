#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>
#include <string_view>

#include <openssl/evp.h>

#include "socl/errors.hpp"
#include "socl/synth/io.hpp"
#include "socl/ten/checkpoint.hpp"

namespace socl::harness {

// Lowercase hex SHA-256.
inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    out += buf;
  }
  return out;
}

inline std::string file_sha256(const std::filesystem::path& p) { return sha256_hex(synth::read_file(p)); }

// Digest of the named arrays only, in name order; metadata is ignored.
inline std::string params_sha256(const ten::ArrayTable& table) {
  ten::ArrayTable only;
  for (const auto& [name, m] : table.arrays()) only.put(name, m);
  return sha256_hex(only.serialize());
}

}  // namespace socl::harness
