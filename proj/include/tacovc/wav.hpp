#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "tacovc/error.hpp"
#include "tacovc/util.hpp"

namespace tacovc::io {

struct WavData {
  std::vector<float> samples;  // mono, in [-1, 1)
  int sample_rate = 0;
};

// Reads 16-bit PCM mono WAV. Anything else is rejected rather than guessed at.
inline WavData readWav(const std::filesystem::path& path) {
  const std::string bytes = readFileBytes(path);
  require(bytes.size() >= 44, ErrorCode::IoError, "WAV too short: " + path.string());
  require(bytes.compare(0, 4, "RIFF") == 0 && bytes.compare(8, 4, "WAVE") == 0,
          ErrorCode::IoError, "not a RIFF/WAVE file: " + path.string());

  auto u16 = [&](size_t off) {
    uint16_t v;
    std::memcpy(&v, bytes.data() + off, 2);
    return v;
  };
  auto u32 = [&](size_t off) {
    uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
  };

  WavData out;
  bool have_fmt = false;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const uint32_t sz = u32(pos + 4);
    const size_t body = pos + 8;
    if (id == "fmt ") {
      require(sz >= 16 && body + 16 <= bytes.size(), ErrorCode::IoError, "bad fmt chunk");
      const uint16_t format = u16(body);
      const uint16_t channels = u16(body + 2);
      const uint32_t rate = u32(body + 4);
      const uint16_t bits = u16(body + 14);
      require(format == 1, ErrorCode::IoError, "only PCM WAV supported: " + path.string());
      require(channels == 1, ErrorCode::IoError, "only mono WAV supported: " + path.string());
      require(bits == 16, ErrorCode::IoError, "only 16-bit WAV supported: " + path.string());
      out.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (id == "data") {
      require(have_fmt, ErrorCode::IoError, "data chunk before fmt: " + path.string());
      const size_t n = std::min<size_t>(sz, bytes.size() - body) / 2;
      out.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        int16_t s;
        std::memcpy(&s, bytes.data() + body + 2 * i, 2);
        out.samples[i] = static_cast<float>(s) / 32768.0f;
      }
      return out;
    }
    pos = body + sz + (sz & 1);  // chunks are word aligned
  }
  raise(ErrorCode::IoError, "no data chunk in WAV: " + path.string());
}

inline void writeWav(const std::filesystem::path& path, const std::vector<float>& samples,
                     int sample_rate) {
  require(sample_rate > 0, ErrorCode::InvalidInput, "sample rate must be positive");
  const uint32_t n = static_cast<uint32_t>(samples.size());
  const uint32_t data_bytes = n * 2;
  std::string b;
  b.reserve(44 + data_bytes);

  auto put32 = [&](uint32_t v) { b.append(reinterpret_cast<const char*>(&v), 4); };
  auto put16 = [&](uint16_t v) { b.append(reinterpret_cast<const char*>(&v), 2); };

  b.append("RIFF");
  put32(36 + data_bytes);
  b.append("WAVE");
  b.append("fmt ");
  put32(16);
  put16(1);  // PCM
  put16(1);  // mono
  put32(static_cast<uint32_t>(sample_rate));
  put32(static_cast<uint32_t>(sample_rate) * 2);
  put16(2);
  put16(16);
  b.append("data");
  put32(data_bytes);
  for (uint32_t i = 0; i < n; ++i) {
    const float x = std::clamp(samples[i], -1.0f, 1.0f);
    const int16_t s = static_cast<int16_t>(std::lround(x * 32767.0f));
    b.append(reinterpret_cast<const char*>(&s), 2);
  }
  writeFileAtomic(path, b);
}

}  // namespace tacovc::io
