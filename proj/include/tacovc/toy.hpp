#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "tacovc/audio.hpp"
#include "tacovc/manifest.hpp"
#include "tacovc/phones.hpp"
#include "tacovc/wav.hpp"

namespace tacovc::toy {

// Deterministic formant-like toy utterances with known phone transcripts.
// Every acceptance run is driven by this generator, so no licensed corpus is
// needed. Voiced phones are harmonic stacks shaped by two formant peaks;
// fricatives are band-passed noise.

struct ToyPhone {
  std::string symbol;
  bool voiced;
  float f1, f2;  // formant centers (voiced) or band center/width (unvoiced)
  float amp;
};

inline const std::vector<ToyPhone>& toyPhones() {
  static const std::vector<ToyPhone> phones = {
      {"aa", true, 730.0f, 1090.0f, 0.50f},  {"ee", true, 530.0f, 1840.0f, 0.50f},
      {"ii", true, 270.0f, 2290.0f, 0.45f},  {"oo", true, 570.0f, 840.0f, 0.50f},
      {"uu", true, 300.0f, 870.0f, 0.45f},   {"mm", true, 250.0f, 1100.0f, 0.30f},
      {"ss", false, 4800.0f, 1500.0f, 0.22f}, {"sh", false, 2600.0f, 900.0f, 0.25f},
  };
  return phones;
}

inline pr::PhoneInventory toyInventory() {
  std::vector<std::string> syms;
  for (const auto& p : toyPhones()) syms.push_back(p.symbol);
  return pr::PhoneInventory::identity(syms);
}

struct ToySpeaker {
  std::string id;
  float f0;             // pitch
  float formant_scale;  // shifts the whole formant grid
  float tilt;           // harmonic rolloff exponent
};

inline ToySpeaker toySpeaker(const std::string& id) {
  if (id == "A") return {"A", 110.0f, 1.0f, 0.35f};
  if (id == "B") return {"B", 185.0f, 1.30f, 0.20f};
  raise(ErrorCode::InvalidInput, "unknown toy speaker: " + id);
}

struct ToyCorpusOptions {
  std::string speaker = "A";
  int n_utterances = 10;
  uint64_t seed = 1;
  int min_phones = 3;
  int max_phones = 6;
  float min_phone_sec = 0.11f;
  float max_phone_sec = 0.18f;
  int sample_rate = 22050;
};

namespace detail {

inline void synthVoiced(std::vector<float>& out, size_t start, size_t len, const ToyPhone& ph,
                        const ToySpeaker& spk, int sr) {
  const float f1 = ph.f1 * spk.formant_scale;
  const float f2 = ph.f2 * spk.formant_scale;
  const int max_h = static_cast<int>(7800.0f / spk.f0);
  std::vector<float> amps(max_h + 1, 0.0f);
  float norm = 0.0f;
  for (int h = 1; h <= max_h; ++h) {
    const float fh = h * spk.f0;
    const float g1 = std::exp(-0.5f * std::pow((fh - f1) / 180.0f, 2.0f));
    const float g2 = std::exp(-0.5f * std::pow((fh - f2) / 220.0f, 2.0f));
    amps[h] = (g1 + 0.8f * g2 + 0.015f) / std::pow(static_cast<float>(h), spk.tilt);
    norm += amps[h] * amps[h];
  }
  norm = std::sqrt(std::max(norm, 1e-9f));
  const float scale = ph.amp / norm;
  for (size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(start + i) / sr;
    double s = 0.0;
    for (int h = 1; h <= max_h; ++h)
      s += amps[h] * std::sin(2.0 * std::numbers::pi * h * spk.f0 * t + 1.7 * h);
    out[start + i] += static_cast<float>(s) * scale;
  }
}

inline void synthNoise(std::vector<float>& out, size_t start, size_t len, const ToyPhone& ph,
                       const ToySpeaker& spk, int sr, std::mt19937& rng) {
  // RBJ band-pass biquad around the phone's band center.
  const float fc = std::min(ph.f1 * spk.formant_scale, 0.45f * sr);
  const float q = std::max(1.0f, fc / ph.f2);
  const float w0 = 2.0f * std::numbers::pi_v<float> * fc / sr;
  const float alpha = std::sin(w0) / (2.0f * q);
  const float b0 = alpha, b1 = 0.0f, b2 = -alpha;
  const float a0 = 1.0f + alpha, a1 = -2.0f * std::cos(w0), a2 = 1.0f - alpha;

  std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
  float x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  std::vector<float> buf(len);
  double rms = 0.0;
  for (size_t i = 0; i < len; ++i) {
    const float x = uni(rng);
    const float y = (b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
    x2 = x1; x1 = x;
    y2 = y1; y1 = y;
    buf[i] = y;
    rms += static_cast<double>(y) * y;
  }
  rms = std::sqrt(std::max(rms / std::max<size_t>(len, 1), 1e-12));
  const float scale = ph.amp / static_cast<float>(rms);
  for (size_t i = 0; i < len; ++i) out[start + i] += buf[i] * scale;
}

}  // namespace detail

struct ToyUtterance {
  std::string utt_id;
  audio::Waveform wav;
  std::string transcript;
};

inline ToyUtterance synthesizeToyUtterance(const ToySpeaker& spk,
                                           const std::vector<int>& phone_idx,
                                           const std::vector<float>& durations_sec, int sr,
                                           std::mt19937& noise_rng) {
  const auto& phones = toyPhones();
  size_t total = 0;
  std::vector<size_t> lens;
  for (float d : durations_sec) {
    lens.push_back(static_cast<size_t>(std::lround(d * sr)));
    total += lens.back();
  }
  ToyUtterance utt;
  utt.wav.sample_rate = sr;
  utt.wav.samples.assign(total, 0.0f);

  size_t pos = 0;
  for (size_t k = 0; k < phone_idx.size(); ++k) {
    const ToyPhone& ph = phones[static_cast<size_t>(phone_idx[k])];
    if (ph.voiced)
      detail::synthVoiced(utt.wav.samples, pos, lens[k], ph, spk, sr);
    else
      detail::synthNoise(utt.wav.samples, pos, lens[k], ph, spk, sr, noise_rng);
    // 8 ms raised-cosine edges to avoid clicks at phone joins
    const size_t ramp = std::min<size_t>(static_cast<size_t>(0.008 * sr), lens[k] / 2);
    for (size_t i = 0; i < ramp; ++i) {
      const float g = 0.5f - 0.5f * std::cos(std::numbers::pi_v<float> * i / ramp);
      utt.wav.samples[pos + i] *= g;
      utt.wav.samples[pos + lens[k] - 1 - i] *= g;
    }
    if (k) utt.transcript += ' ';
    utt.transcript += ph.symbol;
    pos += lens[k];
  }

  float peak = 1e-6f;
  for (float s : utt.wav.samples) peak = std::max(peak, std::abs(s));
  const float g = 0.60f / peak;
  for (float& s : utt.wav.samples) s *= g;
  return utt;
}

// Writes <dir>/wavs/*.wav, <dir>/manifest.jsonl and <dir>/toy_phones.tsv.
inline io::DatasetManifest makeToyCorpus(const std::filesystem::path& dir,
                                         const ToyCorpusOptions& opt) {
  require(opt.n_utterances > 0, ErrorCode::InvalidInput, "n_utterances must be positive");
  const ToySpeaker spk = toySpeaker(opt.speaker);
  const auto& phones = toyPhones();
  std::filesystem::create_directories(dir / "wavs");

  std::mt19937 rng(static_cast<uint32_t>(opt.seed * 0x9e3779b9ull + 17));
  std::uniform_int_distribution<int> n_ph(opt.min_phones, opt.max_phones);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(phones.size()) - 1);
  std::uniform_real_distribution<float> dur(opt.min_phone_sec, opt.max_phone_sec);

  io::DatasetManifest manifest;
  manifest.base_dir = dir;
  for (int u = 0; u < opt.n_utterances; ++u) {
    const int n = n_ph(rng);
    std::vector<int> seq;
    std::vector<float> durs;
    for (int k = 0; k < n; ++k) {
      int p = pick(rng);
      if (k > 0 && p == seq.back()) p = (p + 1) % static_cast<int>(phones.size());
      seq.push_back(p);
      durs.push_back(dur(rng));
    }
    ToyUtterance utt = synthesizeToyUtterance(spk, seq, durs, opt.sample_rate, rng);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%03d", opt.speaker.c_str(), u);
    utt.utt_id = buf;

    const std::string wav_rel = "wavs/" + utt.utt_id + ".wav";
    io::writeWav(dir / wav_rel, utt.wav.samples, utt.wav.sample_rate);
    manifest.records.push_back({utt.utt_id, wav_rel, utt.transcript, spk.id});
  }
  manifest.save(dir / "manifest.jsonl");
  toyInventory().saveTsv(dir / "toy_phones.tsv");
  return manifest;
}

}  // namespace tacovc::toy
