#pragma once

#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tacovc/error.hpp"
#include "tacovc/nn/tape.hpp"
#include "tacovc/tvcf.hpp"
#include "tacovc/util.hpp"

namespace tacovc::io {

// Model checkpoint: versioned container holding a config JSON plus named
// weight tensors, each serialized in the TVCF tensor format.
//   magic "TVCK", version u32, config length u32 + bytes,
//   tensor count u32, then per tensor: name length u32, name,
//   blob length u32, TVCF blob.

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json config;
  std::vector<std::pair<std::string, Eigen::MatrixXf>> tensors;

  const Eigen::MatrixXf* find(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return &m;
    return nullptr;
  }
};

inline std::string encodeCheckpoint(const nlohmann::json& config, const nn::ParamSet& ps) {
  std::string b;
  b.append("TVCK");
  auto put32 = [&](uint32_t v) { b.append(reinterpret_cast<const char*>(&v), 4); };
  put32(kCheckpointVersion);
  const std::string cfg = config.dump();
  put32(static_cast<uint32_t>(cfg.size()));
  b.append(cfg);
  put32(static_cast<uint32_t>(ps.items().size()));
  for (const auto& p : ps.items()) {
    put32(static_cast<uint32_t>(p.name.size()));
    b.append(p.name);
    const std::string blob = tvcfEncode(p.value);
    put32(static_cast<uint32_t>(blob.size()));
    b.append(blob);
  }
  return b;
}

inline void saveCheckpoint(const std::filesystem::path& path, const nlohmann::json& config,
                           const nn::ParamSet& ps) {
  writeFileAtomic(path, encodeCheckpoint(config, ps));
}

inline Checkpoint decodeCheckpoint(const std::string& b, const std::string& what) {
  require(b.size() >= 16 && b.compare(0, 4, "TVCK") == 0, ErrorCode::IoError,
          "bad checkpoint magic in " + what);
  size_t pos = 4;
  auto get32 = [&]() {
    require(pos + 4 <= b.size(), ErrorCode::IoError, "truncated checkpoint: " + what);
    uint32_t v;
    std::memcpy(&v, b.data() + pos, 4);
    pos += 4;
    return v;
  };
  require(get32() == kCheckpointVersion, ErrorCode::IoError, "unsupported checkpoint version");
  const uint32_t cfg_len = get32();
  require(pos + cfg_len <= b.size(), ErrorCode::IoError, "truncated checkpoint config");
  Checkpoint ck;
  ck.config = nlohmann::json::parse(b.substr(pos, cfg_len));
  pos += cfg_len;
  const uint32_t n = get32();
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t name_len = get32();
    require(pos + name_len <= b.size(), ErrorCode::IoError, "truncated tensor name");
    std::string name = b.substr(pos, name_len);
    pos += name_len;
    const uint32_t blob_len = get32();
    require(pos + blob_len <= b.size(), ErrorCode::IoError, "truncated tensor blob");
    ck.tensors.emplace_back(std::move(name), tvcfDecode(b.substr(pos, blob_len), what));
    pos += blob_len;
  }
  return ck;
}

inline Checkpoint loadCheckpoint(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::MissingCheckpoint,
          "missing checkpoint: " + path.string());
  return decodeCheckpoint(readFileBytes(path), path.string());
}

// Fills an already-built parameter set; every parameter must be present with
// a matching shape.
inline void loadParamsInto(const Checkpoint& ck, nn::ParamSet& ps) {
  for (auto& p : ps.items()) {
    const Eigen::MatrixXf* m = ck.find(p.name);
    require(m != nullptr, ErrorCode::ConfigMismatch, "checkpoint lacks tensor " + p.name);
    require(m->rows() == p.value.rows() && m->cols() == p.value.cols(), ErrorCode::ShapeError,
            "checkpoint tensor shape mismatch for " + p.name);
    p.value = *m;
  }
}

// Content identity of a checkpoint file; used for provenance tracking.
inline std::string checkpointId(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::MissingCheckpoint,
          "missing checkpoint: " + path.string());
  return hex64(fnv1a64(readFileBytes(path)));
}

}  // namespace tacovc::io
