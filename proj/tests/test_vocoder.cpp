#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "tacovc/vocoder.hpp"

using namespace tacovc;
using namespace tacovc::voc;

namespace {

VocoderConfig tinyConfig() {
  VocoderConfig cfg;
  cfg.dilations = {1, 2, 4};
  cfg.residual_ch = 8;
  cfg.skip_ch = 8;
  cfg.cond_ch = 6;
  cfg.upsample_strides = {4, 4};
  cfg.hop = 16;
  cfg.mel_bands = 10;
  cfg.classes = 16;
  return cfg;
}

Mat randomMel(std::mt19937& rng, int frames, int bands) {
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  Mat m(frames, bands);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
  return m;
}

std::vector<int> randomCodes(std::mt19937& rng, int n, int classes) {
  std::vector<int> codes(static_cast<size_t>(n));
  for (auto& c : codes) c = static_cast<int>(rng() % static_cast<unsigned>(classes));
  return codes;
}

}  // namespace

TEST_CASE("receptive field closed form") {
  VocoderConfig cfg;  // desk default: one stack to 128, kernel 2
  CHECK(cfg.receptiveField() == 1 + (2 - 1) * 255);

  VocoderConfig paper = VocoderConfig::paperPreset();
  CHECK(paper.dilations.size() == 20);
  CHECK(paper.receptiveField() == 1 + 2 * 1023);

  VocoderConfig one;
  one.dilations = {1};
  one.kernel = 2;
  CHECK(one.receptiveField() == 2);
  one.kernel = 1;
  CHECK(one.receptiveField() == 1);
}

TEST_CASE("config validation: stride product must equal hop") {
  VocoderConfig bad = tinyConfig();
  bad.upsample_strides = {4, 5};
  CHECK_THROWS_MATCHES(VocoderModel::build(bad, 1), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::ConfigMismatch;
                       }));
  VocoderConfig ok = tinyConfig();
  CHECK_NOTHROW(VocoderModel::build(ok, 1));
}

TEST_CASE("upsampled conditioning length is frames * hop exactly") {
  const VocoderConfig cfg = tinyConfig();
  VocoderModel model = VocoderModel::build(cfg, 2);
  std::mt19937 rng(3);
  for (const int frames : {1, 2, 9}) {
    const Mat cond = model.upsampleConditioningEval(randomMel(rng, frames, cfg.mel_bands));
    REQUIRE(cond.rows() == frames * cfg.hop);
    REQUIRE(cond.cols() == cfg.cond_ch);
    REQUIRE(cond.allFinite());
  }
}

TEST_CASE("incremental loop matches the graph path exactly") {
  const VocoderConfig cfg = tinyConfig();
  VocoderModel model = VocoderModel::build(cfg, 5);
  std::mt19937 rng(7);
  const int frames = 3;
  const Mat mel = randomMel(rng, frames, cfg.mel_bands);
  const auto codes = randomCodes(rng, frames * cfg.hop, cfg.classes);

  const Mat graph = model.teacherForcedLogits(codes, mel);
  const Mat inc = model.incrementalLogits(&codes, mel, GenMode::Argmax, 0, nullptr);
  REQUIRE(graph.rows() == inc.rows());
  const float max_diff = (graph - inc).cwiseAbs().maxCoeff();
  CHECK(max_diff < 1e-3f);
}

TEST_CASE("causality: perturbing sample t changes outputs only after t") {
  const VocoderConfig cfg = tinyConfig();
  VocoderModel model = VocoderModel::build(cfg, 8);
  std::mt19937 rng(9);
  const int frames = 4;
  const Mat mel = randomMel(rng, frames, cfg.mel_bands);
  auto codes = randomCodes(rng, frames * cfg.hop, cfg.classes);
  const Mat base = model.teacherForcedLogits(codes, mel);

  for (const int t : {5, 23, 40}) {
    auto perturbed = codes;
    perturbed[static_cast<size_t>(t)] = (perturbed[static_cast<size_t>(t)] + 3) % cfg.classes;
    const Mat out = model.teacherForcedLogits(perturbed, mel);
    for (int r = 0; r <= t; ++r)
      REQUIRE((out.row(r) - base.row(r)).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((out.bottomRows(out.rows() - t - 1) - base.bottomRows(base.rows() - t - 1))
              .cwiseAbs()
              .maxCoeff() > 0.0f);
  }
}

TEST_CASE("receptive field matches brute-force dependency probing") {
  VocoderConfig cfg = tinyConfig();
  cfg.dilations = {1, 2, 4};  // RF = 8
  VocoderModel model = VocoderModel::build(cfg, 10);
  std::mt19937 rng(11);
  const int frames = 2;
  const Mat mel = randomMel(rng, frames, cfg.mel_bands);
  auto codes = randomCodes(rng, frames * cfg.hop, cfg.classes);
  const Mat base = model.teacherForcedLogits(codes, mel);

  const int probe = 20;
  const int rf = cfg.receptiveField();
  int earliest = probe;
  for (int p = 0; p < probe; ++p) {
    auto perturbed = codes;
    perturbed[static_cast<size_t>(p)] = (perturbed[static_cast<size_t>(p)] + 5) % cfg.classes;
    const Mat out = model.teacherForcedLogits(perturbed, mel);
    if ((out.row(probe) - base.row(probe)).cwiseAbs().maxCoeff() > 0.0f) {
      earliest = p;
      break;
    }
  }
  // logits at `probe` see codes [probe - rf, probe - 1]
  CHECK(earliest == probe - rf);
}

TEST_CASE("generate: length contract, argmax determinism, seeded sampling") {
  const VocoderConfig cfg = tinyConfig();
  VocoderModel model = VocoderModel::build(cfg, 12);
  std::mt19937 rng(13);
  const Mat mel = randomMel(rng, 5, cfg.mel_bands);

  const auto a = model.generate(mel, GenMode::Argmax);
  REQUIRE(a.samples.size() == static_cast<size_t>(5 * cfg.hop));
  const auto b = model.generate(mel, GenMode::Argmax);
  CHECK(a.samples == b.samples);

  const auto s1 = model.generate(mel, GenMode::Sample, 42);
  const auto s2 = model.generate(mel, GenMode::Sample, 42);
  const auto s3 = model.generate(mel, GenMode::Sample, 43);
  CHECK(s1.samples == s2.samples);
  CHECK(s1.samples != s3.samples);

  Mat single = randomMel(rng, 1, cfg.mel_bands);
  CHECK(model.generate(single, GenMode::Argmax).samples.size() ==
        static_cast<size_t>(cfg.hop));
}

TEST_CASE("softmax head rows are proper distributions; chance-level accuracy untrained") {
  const VocoderConfig cfg = tinyConfig();
  VocoderModel model = VocoderModel::build(cfg, 14);
  std::mt19937 rng(15);
  const Mat mel = randomMel(rng, 4, cfg.mel_bands);
  const auto codes = randomCodes(rng, 4 * cfg.hop, cfg.classes);
  const Mat logits = model.teacherForcedLogits(codes, mel);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const float mx = logits.row(r).maxCoeff();
    double z = 0.0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k)
      z += std::exp(static_cast<double>(logits(r, k)) - mx);
    REQUIRE(std::isfinite(z));
    REQUIRE(z > 0.0);
  }
  const auto eval = model.teacherForcedEval(codes, mel);
  CHECK(eval.accuracy < 4.0f / cfg.classes);  // about chance on random codes
  CHECK(eval.cross_entropy > 0.5f * std::log(static_cast<float>(cfg.classes)));
}

TEST_CASE("alignment errors are rejected") {
  const VocoderConfig cfg = tinyConfig();
  VocoderModel model = VocoderModel::build(cfg, 16);
  std::mt19937 rng(17);
  VocExample ex;
  ex.utt_id = "x";
  ex.mel = randomMel(rng, 3, cfg.mel_bands);
  ex.codes = randomCodes(rng, 3 * cfg.hop - 1, cfg.classes);  // one short
  VocTrainHyper hyper;
  hyper.steps = 1;
  CHECK_THROWS_MATCHES(trainVocoder(model, {ex}, hyper), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::AlignmentError;
                       }));
}

TEST_CASE("training overfits a conditioned signal and degrades without it") {
  // piecewise-constant level per frame: the interior is predictable from the
  // AR context, but each frame's first samples are knowable only through the
  // conditioning, so permuting the conditioning frames must hurt
  VocoderConfig cfg = tinyConfig();
  cfg.dilations = {1, 2, 4, 8};
  VocoderModel model = VocoderModel::build(cfg, 18);

  const int frames = 24;
  const float levels[4] = {0.8f, -0.5f, 0.3f, -0.15f};
  audio::Waveform wav;
  wav.sample_rate = 22050;
  wav.samples.resize(static_cast<size_t>(frames) * cfg.hop);
  VocExample ex;
  ex.utt_id = "steps";
  ex.mel = Mat::Zero(frames, cfg.mel_bands);
  for (int f = 0; f < frames; ++f) {
    const float lvl = levels[(f * 3 + 1) % 4];
    for (int i = 0; i < cfg.hop; ++i) wav.samples[static_cast<size_t>(f) * cfg.hop + i] = lvl;
    ex.mel.row(f).setConstant((lvl + 1.0f) / 2.0f);
  }
  const auto mu = audio::muLawEncode(wav, cfg.classes);
  ex.codes.assign(mu.codes.begin(), mu.codes.end());

  VocTrainHyper hyper;
  hyper.steps = 220;
  hyper.crop_frames = 8;
  hyper.lr = {4e-3f, 1e-3f, 220};
  hyper.seed = 23;
  const auto report = trainVocoder(model, {ex}, hyper);
  REQUIRE(report.steps_run == 220);

  const auto matched = model.teacherForcedEval(ex.codes, ex.mel);
  CHECK(matched.accuracy > 0.9f);

  // permute the conditioning frames: evaluation must degrade clearly
  Mat permuted_mel = ex.mel;
  for (int f = 0; f < frames; ++f) permuted_mel.row(f) = ex.mel.row((f + 1) % frames);
  const auto permuted = model.teacherForcedEval(ex.codes, permuted_mel);
  INFO("matched ce " << matched.cross_entropy << " permuted ce " << permuted.cross_entropy);
  CHECK(permuted.cross_entropy > 2.0f * matched.cross_entropy);
}

TEST_CASE("training is seed-deterministic") {
  const VocoderConfig cfg = tinyConfig();
  std::mt19937 rng(29);
  VocExample ex;
  ex.utt_id = "d";
  ex.mel = randomMel(rng, 4, cfg.mel_bands);
  ex.codes = randomCodes(rng, 4 * cfg.hop, cfg.classes);

  auto run = [&]() {
    VocoderModel model = VocoderModel::build(cfg, 31);
    VocTrainHyper hyper;
    hyper.steps = 10;
    hyper.crop_frames = 2;
    hyper.seed = 37;
    return trainVocoder(model, {ex}, hyper);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.ce_history.size() == b.ce_history.size());
  for (size_t i = 0; i < a.ce_history.size(); ++i)
    REQUIRE(a.ce_history[i] == b.ce_history[i]);
}
