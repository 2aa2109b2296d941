#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tacovc/error.hpp"
#include "tacovc/fft.hpp"
#include "tacovc/util.hpp"

namespace tacovc::audio {

using Mat = Eigen::MatrixXf;

struct Waveform {
  std::vector<float> samples;  // amplitudes in [-1, 1]
  int sample_rate = 22050;
};

enum class MelRole { TrueY, SynthYhat, Enhanced };

inline const char* melRoleName(MelRole r) {
  switch (r) {
    case MelRole::TrueY: return "TRUE_Y";
    case MelRole::SynthYhat: return "SYNTH_YHAT";
    case MelRole::Enhanced: return "ENHANCED";
  }
  return "?";
}

inline MelRole melRoleFromName(const std::string& s) {
  if (s == "TRUE_Y") return MelRole::TrueY;
  if (s == "SYNTH_YHAT") return MelRole::SynthYhat;
  if (s == "ENHANCED") return MelRole::Enhanced;
  raise(ErrorCode::InvalidInput, "unknown mel role: " + s);
}

struct MelSpectrogram {
  Mat values;  // [n_frames x n_mels], normalized log energies in [0, 1]
  int hop_samples = 256;
  MelRole role = MelRole::TrueY;
};

struct LinearSpectrogram {
  Mat values;  // [n_frames x n_fft/2+1]
};

struct MuLawWaveform {
  std::vector<uint8_t> codes;  // class indices in [0, 255]
  int sample_rate = 22050;
};

// One source of truth for the signal-processing constants. The hash of this
// struct is embedded in every feature sidecar and checkpoint so mixed-recipe
// artifacts are refused instead of silently combined.
struct FeatureConfig {
  int sample_rate = 22050;
  int n_fft = 1024;
  int hop = 256;
  int n_mels = 80;
  float fmin = 125.0f;
  float fmax = 7600.0f;
  // Normalization: amplitude -> dB (floor min_db), then [min_db, max_db] -> [0, 1].
  float min_db = -100.0f;
  float max_db = 20.0f;
  // STFT magnitudes divided by sum(window)/2 so a full-scale sine sits near 0 dB.
  bool window_gain_norm = true;
  float preemphasis = 0.0f;  // kept in the config even though the default recipe applies none
  std::string mel_scale = "slaney";
  std::string mel_filter_norm = "peak";
  int mu_channels = 256;

  int nBins() const { return n_fft / 2 + 1; }

  nlohmann::json toJson() const {
    return {
        {"sample_rate", sample_rate}, {"n_fft", n_fft},   {"hop", hop},
        {"n_mels", n_mels},           {"fmin", fmin},     {"fmax", fmax},
        {"min_db", min_db},           {"max_db", max_db}, {"window_gain_norm", window_gain_norm},
        {"preemphasis", preemphasis}, {"mel_scale", mel_scale},
        {"mel_filter_norm", mel_filter_norm}, {"mu_channels", mu_channels},
    };
  }

  static FeatureConfig fromJson(const nlohmann::json& j) {
    FeatureConfig c;
    c.sample_rate = j.at("sample_rate").get<int>();
    c.n_fft = j.at("n_fft").get<int>();
    c.hop = j.at("hop").get<int>();
    c.n_mels = j.at("n_mels").get<int>();
    c.fmin = j.at("fmin").get<float>();
    c.fmax = j.at("fmax").get<float>();
    c.min_db = j.at("min_db").get<float>();
    c.max_db = j.at("max_db").get<float>();
    c.window_gain_norm = j.at("window_gain_norm").get<bool>();
    c.preemphasis = j.at("preemphasis").get<float>();
    c.mel_scale = j.at("mel_scale").get<std::string>();
    c.mel_filter_norm = j.at("mel_filter_norm").get<std::string>();
    c.mu_channels = j.at("mu_channels").get<int>();
    return c;
  }

  uint64_t hash() const { return fnv1a64(toJson().dump()); }
  std::string hashHex() const { return hex64(hash()); }
};

namespace detail {

inline void validateWaveform(const Waveform& w, const FeatureConfig& cfg) {
  require(!w.samples.empty(), ErrorCode::InvalidInput, "empty waveform");
  require(w.sample_rate == cfg.sample_rate, ErrorCode::SampleRateMismatch,
          "waveform sample rate " + std::to_string(w.sample_rate) + " != configured " +
              std::to_string(cfg.sample_rate));
  for (float s : w.samples) {
    require(std::isfinite(s), ErrorCode::InvalidInput, "non-finite sample in waveform");
    require(std::abs(s) <= 1.0f + 1e-5f, ErrorCode::InvalidInput, "sample out of [-1, 1]");
  }
}

// Reflect-101 indexing so center padding works for arbitrarily short signals.
inline int reflectIndex(int idx, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  int m = idx % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

inline std::vector<float> hannWindow(int n) {
  std::vector<float> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5f - 0.5f * static_cast<float>(std::cos(2.0 * std::numbers::pi * i / n));
  return w;
}

struct ComplexStft {
  std::vector<std::vector<std::complex<float>>> frames;  // each n_fft/2+1 bins
  int n_frames = 0;
};

inline ComplexStft stftComplex(const std::vector<float>& x, const FeatureConfig& cfg) {
  const int n = static_cast<int>(x.size());
  const int half = cfg.n_fft / 2;
  const int frames = n / cfg.hop + 1;  // center padding: floor(N/hop) + 1
  const auto win = hannWindow(cfg.n_fft);
  float gain = 1.0f;
  if (cfg.window_gain_norm) {
    double s = 0.0;
    for (float v : win) s += v;
    gain = static_cast<float>(s / 2.0);
  }

  ComplexStft out;
  out.n_frames = frames;
  out.frames.resize(frames);
  std::vector<std::complex<float>> buf(cfg.n_fft);
  for (int f = 0; f < frames; ++f) {
    const int start = f * cfg.hop - half;
    for (int i = 0; i < cfg.n_fft; ++i) {
      const float s = x[static_cast<size_t>(reflectIndex(start + i, n))];
      buf[i] = std::complex<float>(s * win[i], 0.0f);
    }
    tacovc::detail::fftRadix2(buf, false);
    auto& row = out.frames[f];
    row.assign(buf.begin(), buf.begin() + cfg.nBins());
    if (gain != 1.0f)
      for (auto& c : row) c /= gain;
  }
  return out;
}

inline Mat stftMagnitude(const std::vector<float>& x, const FeatureConfig& cfg) {
  const ComplexStft s = stftComplex(x, cfg);
  Mat mag(s.n_frames, cfg.nBins());
  for (int f = 0; f < s.n_frames; ++f)
    for (int k = 0; k < cfg.nBins(); ++k) mag(f, k) = std::abs(s.frames[f][k]);
  return mag;
}

inline double hzToMel(double f) {
  // Slaney formula: linear below 1 kHz, logarithmic above.
  if (f < 1000.0) return 3.0 * f / 200.0;
  return 15.0 + 27.0 * std::log(f / 1000.0) / std::log(6.4);
}

inline double melToHz(double m) {
  if (m < 15.0) return 200.0 * m / 3.0;
  return 1000.0 * std::exp(std::log(6.4) * (m - 15.0) / 27.0);
}

inline Mat amplitudeToNormDb(const Mat& amp, const FeatureConfig& cfg) {
  const float span = cfg.max_db - cfg.min_db;
  Mat out(amp.rows(), amp.cols());
  for (Eigen::Index i = 0; i < amp.size(); ++i) {
    const float a = std::max(amp.data()[i], 1e-5f);
    const float db = 20.0f * std::log10(a);
    out.data()[i] = std::clamp((db - cfg.min_db) / span, 0.0f, 1.0f);
  }
  return out;
}

inline Mat normDbToAmplitude(const Mat& norm, const FeatureConfig& cfg) {
  const float span = cfg.max_db - cfg.min_db;
  Mat out(norm.rows(), norm.cols());
  for (Eigen::Index i = 0; i < norm.size(); ++i) {
    const float db = norm.data()[i] * span + cfg.min_db;
    out.data()[i] = std::pow(10.0f, db / 20.0f);
  }
  return out;
}

}  // namespace detail

// Triangular mel filterbank [n_bins x n_mels], peak-normalized, on the Slaney
// mel grid between fmin and fmax. Nonzero weights lie strictly inside
// (fmin, fmax) because the edge triangles rise from zero at the boundaries.
inline Mat melFilterbank(const FeatureConfig& cfg) {
  require(cfg.n_mels > 0, ErrorCode::InvalidConfig, "n_mels must be positive");
  require(cfg.fmin > 0 && cfg.fmax > cfg.fmin && cfg.fmax <= cfg.sample_rate / 2.0f,
          ErrorCode::InvalidConfig, "bad mel frequency range");
  const int bins = cfg.nBins();
  const double mel_lo = detail::hzToMel(cfg.fmin);
  const double mel_hi = detail::hzToMel(cfg.fmax);
  std::vector<double> hz(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    hz[i] = detail::melToHz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));

  Mat fb = Mat::Zero(bins, cfg.n_mels);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = hz[m], center = hz[m + 1], right = hz[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      double w = 0.0;
      if (f > left && f < right)
        w = f <= center ? (f - left) / (center - left) : (right - f) / (right - center);
      fb(k, m) = static_cast<float>(std::max(0.0, w));
    }
  }
  return fb;
}

inline std::vector<float> melCenterFrequencies(const FeatureConfig& cfg) {
  const double mel_lo = detail::hzToMel(cfg.fmin);
  const double mel_hi = detail::hzToMel(cfg.fmax);
  std::vector<float> centers(cfg.n_mels);
  for (int m = 0; m < cfg.n_mels; ++m)
    centers[m] =
        static_cast<float>(detail::melToHz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (cfg.n_mels + 1)));
  return centers;
}

inline MelSpectrogram waveformToMelspec(const Waveform& w, const FeatureConfig& cfg) {
  detail::validateWaveform(w, cfg);
  const Mat mag = detail::stftMagnitude(w.samples, cfg);
  const Mat fb = melFilterbank(cfg);
  MelSpectrogram mel;
  mel.values = detail::amplitudeToNormDb(mag * fb, cfg);
  mel.hop_samples = cfg.hop;
  mel.role = MelRole::TrueY;
  return mel;
}

inline LinearSpectrogram waveformToLinspec(const Waveform& w, const FeatureConfig& cfg) {
  detail::validateWaveform(w, cfg);
  LinearSpectrogram lin;
  lin.values = detail::amplitudeToNormDb(detail::stftMagnitude(w.samples, cfg), cfg);
  return lin;
}

// Band-limited resampling via windowed-sinc interpolation. Weights are
// renormalized per output sample, which keeps DC exact in the interior.
inline Waveform resample(const Waveform& w, int target_rate) {
  require(target_rate > 0, ErrorCode::InvalidInput, "target rate must be positive");
  require(w.sample_rate > 0, ErrorCode::InvalidInput, "source rate must be positive");
  require(!w.samples.empty(), ErrorCode::InvalidInput, "empty waveform");
  if (target_rate == w.sample_rate) return w;

  const int n = static_cast<int>(w.samples.size());
  const double ratio = static_cast<double>(target_rate) / w.sample_rate;
  const int out_len =
      static_cast<int>(std::llround(static_cast<double>(n) * target_rate / w.sample_rate));
  const double cutoff = std::min(1.0, ratio);  // relative to source Nyquist
  const int base_taps = 32;
  const double width = base_taps / cutoff;

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  for (int i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) / ratio;
    const int j0 = static_cast<int>(std::floor(pos - width)) + 1;
    const int j1 = static_cast<int>(std::floor(pos + width));
    double acc = 0.0, wsum = 0.0;
    for (int j = std::max(0, j0); j <= std::min(n - 1, j1); ++j) {
      const double t = pos - j;
      const double a = std::numbers::pi * cutoff * t;
      const double sinc = std::abs(a) < 1e-12 ? 1.0 : std::sin(a) / a;
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * t / width);
      const double h = sinc * win;
      acc += h * w.samples[static_cast<size_t>(j)];
      wsum += h;
    }
    out.samples[i] =
        wsum > 1e-12 ? std::clamp(static_cast<float>(acc / wsum), -1.0f, 1.0f) : 0.0f;
  }
  return out;
}

// mu-law codec, mu = channels - 1. Quantizer is symmetric with 0.0 -> code
// channels/2; decode returns bin midpoints.
inline MuLawWaveform muLawEncode(const Waveform& w, int channels = 256) {
  require(channels >= 2, ErrorCode::InvalidInput, "channels must be >= 2");
  const double mu = channels - 1;
  const double log_mu = std::log1p(mu);
  MuLawWaveform out;
  out.sample_rate = w.sample_rate;
  out.codes.resize(w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i) {
    const float x = w.samples[i];
    require(std::isfinite(x) && std::abs(x) <= 1.0f + 1e-6f, ErrorCode::InvalidInput,
            "mu-law input sample out of [-1, 1]");
    const double xc = std::clamp(static_cast<double>(x), -1.0, 1.0);
    const double y = std::copysign(std::log1p(mu * std::abs(xc)) / log_mu, xc);
    const int code = static_cast<int>(std::floor((y + 1.0) * channels / 2.0));
    out.codes[i] = static_cast<uint8_t>(std::clamp(code, 0, channels - 1));
  }
  return out;
}

inline float muLawDecodeSample(int code, int channels = 256) {
  const double mu = channels - 1;
  const double y = (code + 0.5) * 2.0 / channels - 1.0;
  const double x = std::copysign(std::expm1(std::abs(y) * std::log1p(mu)) / mu, y);
  return static_cast<float>(x);
}

inline Waveform muLawDecode(const MuLawWaveform& mw, int channels = 256) {
  Waveform out;
  out.sample_rate = mw.sample_rate;
  out.samples.resize(mw.codes.size());
  for (size_t i = 0; i < mw.codes.size(); ++i) {
    require(mw.codes[i] < channels, ErrorCode::InvalidInput, "mu-law code out of range");
    out.samples[i] = muLawDecodeSample(mw.codes[i], channels);
  }
  return out;
}

namespace detail {

// Inverse STFT matching stftComplex: overlap-add with the same Hann window,
// normalized by the window-square overlap. Output is frames * hop samples.
inline std::vector<float> istft(const ComplexStft& spec, const FeatureConfig& cfg) {
  const int frames = spec.n_frames;
  const int half = cfg.n_fft / 2;
  const auto win = hannWindow(cfg.n_fft);
  float gain = 1.0f;
  if (cfg.window_gain_norm) {
    double s = 0.0;
    for (float v : win) s += v;
    gain = static_cast<float>(s / 2.0);
  }

  const int buf_len = (frames - 1) * cfg.hop + cfg.n_fft;
  std::vector<double> acc(buf_len, 0.0), wsq(buf_len, 0.0);
  std::vector<std::complex<float>> full(cfg.n_fft);
  for (int f = 0; f < frames; ++f) {
    for (int k = 0; k <= half; ++k) full[k] = spec.frames[f][k] * gain;
    for (int k = half + 1; k < cfg.n_fft; ++k) full[k] = std::conj(full[cfg.n_fft - k]);
    tacovc::detail::fftRadix2(full, true);
    const int off = f * cfg.hop;
    for (int i = 0; i < cfg.n_fft; ++i) {
      acc[off + i] += static_cast<double>(full[i].real()) * win[i];
      wsq[off + i] += static_cast<double>(win[i]) * win[i];
    }
  }

  // The analysis placed frame f at f*hop - half; drop the leading half window.
  std::vector<float> out(static_cast<size_t>(frames) * cfg.hop, 0.0f);
  for (int i = 0; i < static_cast<int>(out.size()); ++i) {
    const int j = i + half;
    if (j < buf_len && wsq[j] > 1e-9)
      out[i] = static_cast<float>(acc[j] / wsq[j]);
  }
  return out;
}

}  // namespace detail

// Debug spectrogram inverter so the synthesizer is audible before the vocoder
// exists. Deterministic for a fixed phase seed. If err_trace is given, the
// per-iteration relative magnitude error is appended to it.
inline Waveform griffinLim(const LinearSpectrogram& lin, const FeatureConfig& cfg, int iters,
                           uint32_t phase_seed = 0x5eedf00d, std::vector<float>* err_trace = nullptr) {
  require(iters >= 1, ErrorCode::InvalidInput, "griffin-lim iters must be >= 1");
  require(lin.values.cols() == cfg.nBins(), ErrorCode::ShapeError,
          "linear spectrogram bin count mismatch");
  const int frames = static_cast<int>(lin.values.rows());
  require(frames >= 1, ErrorCode::ShapeError, "empty spectrogram");

  const Mat mag = detail::normDbToAmplitude(lin.values, cfg);
  const double mag_norm = std::max(1e-12, std::sqrt(static_cast<double>(mag.array().square().sum())));

  std::mt19937 rng(phase_seed);
  std::uniform_real_distribution<float> uni(-std::numbers::pi_v<float>, std::numbers::pi_v<float>);
  detail::ComplexStft spec;
  spec.n_frames = frames;
  spec.frames.resize(frames);
  for (int f = 0; f < frames; ++f) {
    spec.frames[f].resize(cfg.nBins());
    for (int k = 0; k < cfg.nBins(); ++k)
      spec.frames[f][k] = std::polar(mag(f, k), uni(rng));
  }

  std::vector<float> x;
  for (int it = 0; it < iters; ++it) {
    x = detail::istft(spec, cfg);
    detail::ComplexStft re = detail::stftComplex(x, cfg);
    double err = 0.0;
    for (int f = 0; f < frames && f < re.n_frames; ++f) {
      for (int k = 0; k < cfg.nBins(); ++k) {
        const float m = std::abs(re.frames[f][k]);
        const double d = static_cast<double>(m) - mag(f, k);
        err += d * d;
        const std::complex<float> phase =
            m > 1e-12f ? re.frames[f][k] / m : std::complex<float>(1.0f, 0.0f);
        spec.frames[f][k] = mag(f, k) * phase;
      }
    }
    if (err_trace) err_trace->push_back(static_cast<float>(std::sqrt(err) / mag_norm));
  }
  x = detail::istft(spec, cfg);

  Waveform out;
  out.sample_rate = cfg.sample_rate;
  out.samples.resize(static_cast<size_t>(frames) * cfg.hop, 0.0f);
  for (size_t i = 0; i < out.samples.size() && i < x.size(); ++i)
    out.samples[i] = std::clamp(x[i], -1.0f, 1.0f);
  return out;
}

}  // namespace tacovc::audio
