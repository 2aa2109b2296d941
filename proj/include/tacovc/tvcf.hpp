#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tacovc/error.hpp"
#include "tacovc/util.hpp"

namespace tacovc::io {

// TVCF tensor container: magic "TVCF", format version u32, dtype tag u32
// (1 = float32 little-endian), n_dims u32, dims u32 each, payload row-major.
// Feature files carry a JSON sidecar (<file>.json) with extraction parameters.

inline constexpr uint32_t kTvcfVersion = 1;
inline constexpr uint32_t kTvcfFloat32 = 1;

inline std::string tvcfEncode(const Eigen::MatrixXf& m) {
  std::string b;
  b.reserve(20 + static_cast<size_t>(m.size()) * 4);
  b.append("TVCF");
  auto put32 = [&](uint32_t v) { b.append(reinterpret_cast<const char*>(&v), 4); };
  put32(kTvcfVersion);
  put32(kTvcfFloat32);
  put32(2);
  put32(static_cast<uint32_t>(m.rows()));
  put32(static_cast<uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float v = m(r, c);
      b.append(reinterpret_cast<const char*>(&v), 4);
    }
  return b;
}

inline Eigen::MatrixXf tvcfDecode(const std::string& b, const std::string& what = "tensor") {
  require(b.size() >= 20 && b.compare(0, 4, "TVCF") == 0, ErrorCode::IoError,
          "bad TVCF magic in " + what);
  auto get32 = [&](size_t off) {
    uint32_t v;
    std::memcpy(&v, b.data() + off, 4);
    return v;
  };
  require(get32(4) == kTvcfVersion, ErrorCode::IoError, "unsupported TVCF version in " + what);
  require(get32(8) == kTvcfFloat32, ErrorCode::IoError, "unsupported TVCF dtype in " + what);
  const uint32_t ndims = get32(12);
  require(ndims == 2, ErrorCode::IoError, "TVCF: only 2-D tensors are stored, got " +
                                              std::to_string(ndims) + " dims in " + what);
  const uint32_t rows = get32(16), cols = get32(20);
  const size_t need = 24 + static_cast<size_t>(rows) * cols * 4;
  require(b.size() >= need, ErrorCode::IoError, "truncated TVCF payload in " + what);
  Eigen::MatrixXf m(rows, cols);
  size_t off = 24;
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c) {
      float v;
      std::memcpy(&v, b.data() + off, 4);
      m(r, c) = v;
      off += 4;
    }
  return m;
}

inline void writeTvcf(const std::filesystem::path& path, const Eigen::MatrixXf& m,
                      const nlohmann::json& sidecar) {
  writeFileAtomic(path, tvcfEncode(m));
  std::filesystem::path side = path;
  side += ".json";
  writeFileAtomic(side, sidecar.dump(2) + "\n");
}

inline Eigen::MatrixXf readTvcf(const std::filesystem::path& path) {
  return tvcfDecode(readFileBytes(path), path.string());
}

inline nlohmann::json readSidecar(const std::filesystem::path& path) {
  std::filesystem::path side = path;
  side += ".json";
  require(std::filesystem::exists(side), ErrorCode::MissingFeature,
          "missing sidecar: " + side.string());
  return nlohmann::json::parse(readFileBytes(side));
}

}  // namespace tacovc::io
