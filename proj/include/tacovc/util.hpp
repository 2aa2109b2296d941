#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "tacovc/error.hpp"

namespace tacovc {

// FNV-1a, used for feature-parameter hashes and checkpoint content ids.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

inline std::string readFileBytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open for read: " + p.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(!in.bad(), ErrorCode::IoError, "read failed: " + p.string());
  return bytes;
}

// All artifact writes go through a temp file plus rename so partial files
// never appear under the final name.
inline void writeFileAtomic(const std::filesystem::path& p, const std::string& bytes) {
  namespace fs = std::filesystem;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot open for write: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorCode::IoError, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  require(!ec, ErrorCode::IoError, "rename failed: " + p.string() + " (" + ec.message() + ")");
}

inline void copyFileBytes(const std::filesystem::path& from, const std::filesystem::path& to) {
  writeFileAtomic(to, readFileBytes(from));
}

}  // namespace tacovc
