#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "tacovc/audio.hpp"
#include "tacovc/toy.hpp"

using namespace tacovc;
using namespace tacovc::audio;

namespace {

Waveform sine(float freq, float seconds, float amp = 0.5f, int sr = 22050) {
  Waveform w;
  w.sample_rate = sr;
  const size_t n = static_cast<size_t>(seconds * sr);
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i)
    w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / sr);
  return w;
}

Waveform toyClip() {
  std::mt19937 rng(7);
  return toy::synthesizeToyUtterance(toy::toySpeaker("A"), {0, 6, 3}, {0.15f, 0.12f, 0.15f},
                                     22050, rng)
      .wav;
}

}  // namespace

TEST_CASE("frame count follows floor(N/hop)+1") {
  FeatureConfig cfg;
  const Waveform w = sine(440.0f, 1.0f);
  REQUIRE(w.samples.size() == 22050);
  const auto mel = waveformToMelspec(w, cfg);
  const auto lin = waveformToLinspec(w, cfg);
  CHECK(mel.values.rows() == 87);
  CHECK(mel.values.cols() == 80);
  CHECK(lin.values.rows() == 87);
  CHECK(lin.values.cols() == 513);

  std::mt19937 rng(123);
  std::uniform_int_distribution<int> len(300, 50000);
  for (int i = 0; i < 10; ++i) {
    Waveform r;
    r.samples.assign(static_cast<size_t>(len(rng)), 0.01f);
    const int expect = static_cast<int>(r.samples.size()) / cfg.hop + 1;
    CHECK(waveformToMelspec(r, cfg).values.rows() == expect);
    CHECK(waveformToLinspec(r, cfg).values.rows() == expect);
  }
}

TEST_CASE("silence maps to the normalization floor") {
  FeatureConfig cfg;
  Waveform w;
  w.samples.assign(22050, 0.0f);
  const auto mel = waveformToMelspec(w, cfg);
  const auto lin = waveformToLinspec(w, cfg);
  CHECK(mel.values.maxCoeff() == 0.0f);
  CHECK(mel.values.minCoeff() == 0.0f);
  CHECK(lin.values.maxCoeff() == 0.0f);
}

TEST_CASE("pure tone lands in the mel band with the nearest center") {
  FeatureConfig cfg;
  const auto mel = waveformToMelspec(sine(1000.0f, 1.0f), cfg);
  Eigen::VectorXf avg = mel.values.colwise().mean();
  int argmax = 0;
  avg.maxCoeff(&argmax);

  const auto centers = melCenterFrequencies(cfg);
  int nearest = 0;
  for (int m = 1; m < cfg.n_mels; ++m)
    if (std::abs(centers[m] - 1000.0f) < std::abs(centers[nearest] - 1000.0f)) nearest = m;
  CHECK(argmax == nearest);
}

TEST_CASE("pure tone at a bin frequency lands in that linear bin") {
  FeatureConfig cfg;
  const float f = 100.0f * 22050.0f / 1024.0f;  // exactly bin 100
  const auto lin = waveformToLinspec(sine(f, 1.0f), cfg);
  Eigen::VectorXf avg = lin.values.colwise().mean();
  int argmax = 0;
  avg.maxCoeff(&argmax);
  CHECK(argmax == 100);
}

TEST_CASE("feature values stay in [0,1] and finite") {
  FeatureConfig cfg;
  const Waveform w = toyClip();
  const auto mel = waveformToMelspec(w, cfg);
  const auto lin = waveformToLinspec(w, cfg);
  CHECK(mel.values.rows() == lin.values.rows());
  CHECK(mel.values.allFinite());
  CHECK(lin.values.allFinite());
  CHECK(mel.values.minCoeff() >= 0.0f);
  CHECK(mel.values.maxCoeff() <= 1.0f);
  CHECK(lin.values.minCoeff() >= 0.0f);
  CHECK(lin.values.maxCoeff() <= 1.0f);
}

TEST_CASE("mel filterbank support and shape") {
  FeatureConfig cfg;
  const Eigen::MatrixXf fb = melFilterbank(cfg);
  REQUIRE(fb.rows() == 513);
  REQUIRE(fb.cols() == 80);
  CHECK(fb.minCoeff() >= 0.0f);
  for (int m = 0; m < 80; ++m) {
    CHECK(fb.col(m).maxCoeff() > 0.0f);
    for (int k = 0; k < 513; ++k) {
      if (fb(k, m) > 0.0f) {
        const double f = k * 22050.0 / 1024.0;
        CHECK(f > 125.0);
        CHECK(f < 7600.0);
      }
    }
  }
}

TEST_CASE("feature extraction is deterministic") {
  FeatureConfig cfg;
  const Waveform w = toyClip();
  const auto a = waveformToMelspec(w, cfg);
  const auto b = waveformToMelspec(w, cfg);
  CHECK(a.values == b.values);
}

TEST_CASE("feature extraction rejects bad input") {
  FeatureConfig cfg;
  Waveform empty;
  CHECK_THROWS_MATCHES(waveformToMelspec(empty, cfg), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::InvalidInput;
                       }));
  Waveform wrong = sine(440.0f, 0.25f, 0.5f, 16000);
  CHECK_THROWS_MATCHES(waveformToMelspec(wrong, cfg), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::SampleRateMismatch;
                       }));
}

TEST_CASE("resample length, identity and DC behaviour") {
  Waveform w = sine(440.0f, 1.0f, 0.5f, 16000);
  REQUIRE(w.samples.size() == 16000);
  const Waveform up = resample(w, 22050);
  CHECK(up.samples.size() == 22050);
  CHECK(up.sample_rate == 22050);

  const Waveform same = resample(w, 16000);
  CHECK(same.samples == w.samples);

  Waveform dc;
  dc.sample_rate = 16000;
  dc.samples.assign(16000, 0.25f);
  const Waveform dcu = resample(dc, 22050);
  for (size_t i = 200; i + 200 < dcu.samples.size(); ++i)
    REQUIRE(std::abs(dcu.samples[i] - 0.25f) < 1e-3f);

  CHECK_THROWS_AS(resample(w, 0), Error);
  CHECK_THROWS_AS(resample(w, -5), Error);
}

TEST_CASE("mu-law endpoints, zero code and round trip") {
  Waveform w;
  w.samples = {1.0f, -1.0f, 0.0f};
  const auto codes = muLawEncode(w).codes;
  CHECK(codes[0] == 255);
  CHECK(codes[1] == 0);
  CHECK(codes[2] == 128);

  // decode(128) must be the representable value nearest zero
  const float near = std::abs(muLawDecodeSample(128));
  for (int c = 0; c < 256; ++c)
    CHECK(std::abs(muLawDecodeSample(c)) >= near - 1e-9f);

  // brute-force grid: error bounded by the local quantization step
  float max_err = 0.0f;
  for (int i = 0; i <= 10000; ++i) {
    Waveform g;
    g.samples = {-1.0f + 2.0f * i / 10000.0f};
    const auto enc = muLawEncode(g);
    const float dec = muLawDecode(enc).samples[0];
    const float err = std::abs(dec - g.samples[0]);
    max_err = std::max(max_err, err);
    const int code = enc.codes[0];
    const float lo = code > 0 ? muLawDecodeSample(code - 1) : -1.0f;
    const float hi = code < 255 ? muLawDecodeSample(code + 1) : 1.0f;
    REQUIRE(err <= (hi - lo) / 2.0f + 1e-6f);  // one quantization step
  }
  CHECK(max_err <= 0.04f);

  Waveform bad;
  bad.samples = {1.5f};
  CHECK_THROWS_AS(muLawEncode(bad), Error);
}

TEST_CASE("griffin-lim reconstructs a tone and behaves monotonically") {
  FeatureConfig cfg;
  const Waveform w = sine(440.0f, 0.6f);
  const auto lin = waveformToLinspec(w, cfg);

  std::vector<float> trace;
  const Waveform rec = griffinLim(lin, cfg, 30, 0x5eedf00d, &trace);
  CHECK(rec.samples.size() == static_cast<size_t>(lin.values.rows()) * 256);

  // magnitude-envelope correlation against the target
  const auto lin2 = waveformToLinspec(rec, cfg);
  const Eigen::MatrixXf a = lin.values, b = lin2.values.topRows(lin.values.rows());
  const double ncc = (a.array() * b.array()).sum() /
                     std::sqrt(a.array().square().sum() * b.array().square().sum() + 1e-12);
  CHECK(ncc > 0.9);

  REQUIRE(trace.size() == 30);
  for (size_t i = 1; i < trace.size(); ++i) REQUIRE(trace[i] <= trace[i - 1] + 1e-4f);

  // determinism for a fixed phase seed
  const Waveform rec2 = griffinLim(lin, cfg, 30);
  CHECK(rec.samples == rec2.samples);

  // near-silent spectrogram inverts to a near-silent waveform
  LinearSpectrogram zero;
  zero.values = Eigen::MatrixXf::Zero(40, 513);
  const Waveform z = griffinLim(zero, cfg, 5);
  float peak = 0.0f;
  for (float s : z.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak < 1e-3f);

  CHECK_THROWS_AS(griffinLim(lin, cfg, 0), Error);
}

TEST_CASE("griffin-lim error is non-increasing on a speech-like clip") {
  FeatureConfig cfg;
  const auto lin = waveformToLinspec(toyClip(), cfg);
  std::vector<float> trace;
  griffinLim(lin, cfg, 20, 0x5eedf00d, &trace);
  REQUIRE(trace.size() == 20);
  for (size_t i = 1; i < trace.size(); ++i) REQUIRE(trace[i] <= trace[i - 1] + 1e-4f);
  CHECK(trace.back() < trace.front());
}

TEST_CASE("feature config hash is stable and parameter-sensitive") {
  FeatureConfig a, b;
  CHECK(a.hash() == b.hash());
  b.n_mels = 64;
  CHECK(a.hash() != b.hash());
  const FeatureConfig c = FeatureConfig::fromJson(a.toJson());
  CHECK(c.hash() == a.hash());
}
