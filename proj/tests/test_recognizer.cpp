#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "tacovc/recognizer.hpp"

using namespace tacovc;
using namespace tacovc::pr;

namespace {

Mat randomMel(std::mt19937& rng, int frames, int bands = 80) {
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  Mat m(frames, bands);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
  return m;
}

PrConfig tinyConfig(int n_phones) {
  PrConfig cfg;
  cfg.input_bands = 12;
  cfg.channels = {16, 16};
  cfg.n_phones = n_phones;
  return cfg;
}

}  // namespace

TEST_CASE("recognizer config validation") {
  PrConfig cfg;
  cfg.n_phones = 61;
  CHECK(cfg.numClasses() == 62);
  CHECK(cfg.blankId() == 61);

  PrConfig strided = cfg;
  strided.time_strides = {1, 2, 1, 1};
  CHECK_THROWS_MATCHES(PrModel::build(strided, 1), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::InvalidConfig;
                       }));

  PrConfig no_phones;
  CHECK_THROWS_AS(PrModel::build(no_phones, 1), Error);

  const PrConfig paper = PrConfig::paperPreset(61);
  CHECK(paper.channels.size() == 10);
  CHECK(paper.numClasses() == 62);

  const PrConfig back = PrConfig::fromJson(cfg.toJson());
  CHECK(back.numClasses() == 62);
  CHECK(back.channels == cfg.channels);
}

TEST_CASE("time preservation and PPG shape for many lengths") {
  PrConfig cfg;
  cfg.n_phones = 61;
  PrModel model = PrModel::build(cfg, 7);
  std::mt19937 rng(5);
  for (const int frames : {1, 2, 3, 17, 87, 200}) {
    audio::MelSpectrogram mel;
    mel.values = randomMel(rng, frames);
    const Ppg ppg = model.extractPpg(mel);
    REQUIRE(ppg.posteriors.rows() == frames);
    REQUIRE(ppg.posteriors.cols() == 62);
  }
}

TEST_CASE("fresh model emits row-stochastic PPGs") {
  PrConfig cfg;
  cfg.n_phones = 61;
  PrModel model = PrModel::build(cfg, 99);
  std::mt19937 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    audio::MelSpectrogram mel;
    mel.values = randomMel(rng, 10 + trial * 7);
    const Ppg ppg = model.extractPpg(mel);
    for (Eigen::Index r = 0; r < ppg.posteriors.rows(); ++r) {
      REQUIRE(std::abs(ppg.posteriors.row(r).sum() - 1.0f) < 1e-5f);
      REQUIRE(ppg.posteriors.row(r).minCoeff() >= 0.0f);
    }
  }
}

TEST_CASE("extract_ppg rejects band mismatch") {
  PrConfig cfg;
  cfg.n_phones = 8;
  PrModel model = PrModel::build(cfg, 1);
  audio::MelSpectrogram mel;
  std::mt19937 rng(7);
  mel.values = randomMel(rng, 10, 64);
  CHECK_THROWS_MATCHES(model.extractPpg(mel), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::ShapeError;
                       }));
}

TEST_CASE("greedy decode collapse rules") {
  // peaked posteriors spelling out [a a blank a b b]
  const int C = 3, blank = 2;
  Mat post(6, C);
  post.setConstant(0.05f);
  const int frames[] = {0, 0, blank, 0, 1, 1};
  for (int r = 0; r < 6; ++r) post(r, frames[r]) = 0.9f;
  Ppg ppg{post};
  const PhonemeSequence seq = greedyDecode(ppg, blank);
  CHECK(seq.labels == std::vector<int>{0, 0, 1});

  Mat blanks(4, C);
  blanks.setConstant(0.1f);
  blanks.col(blank).setConstant(0.8f);
  CHECK(greedyDecode(Ppg{blanks}, blank).labels.empty());

  // uniform rows break ties toward the lowest class index
  Mat uniform = Mat::Constant(5, C, 1.0f / C);
  CHECK(greedyDecode(Ppg{uniform}, blank).labels == std::vector<int>{0});
}

TEST_CASE("ctc training learns a tiny mapping and is seed-deterministic") {
  // synthetic "phones": band blocks in a 12-band spectrogram
  const int n_phones = 3;
  auto makeExample = [&](const std::vector<int>& labels, std::mt19937& rng) {
    PrExample ex;
    ex.labels = labels;
    const int frames_per = 6;
    ex.mel = Mat::Zero(static_cast<Eigen::Index>(labels.size()) * frames_per, 12);
    std::uniform_real_distribution<float> noise(0.0f, 0.08f);
    for (size_t k = 0; k < labels.size(); ++k)
      for (int f = 0; f < frames_per; ++f) {
        const Eigen::Index row = static_cast<Eigen::Index>(k) * frames_per + f;
        for (int b = 0; b < 12; ++b) ex.mel(row, b) = noise(rng);
        for (int b = labels[k] * 4; b < labels[k] * 4 + 4; ++b) ex.mel(row, b) += 0.8f;
      }
    return ex;
  };

  std::mt19937 rng(8);
  std::vector<PrExample> data = {makeExample({0, 1, 2}, rng), makeExample({2, 0}, rng),
                                 makeExample({1, 2, 1}, rng)};

  auto runOnce = [&]() {
    PrModel model = PrModel::build(tinyConfig(n_phones), 11);
    PrTrainHyper hyper;
    hyper.steps = 120;
    hyper.batch_size = 3;
    hyper.lr = {3e-3f, 3e-4f, 120};
    hyper.seed = 21;
    return std::make_pair(trainPr(model, data, hyper), std::move(model));
  };

  auto [report, model] = runOnce();
  REQUIRE(report.steps_run == 120);
  CHECK(report.loss_history.back() < report.loss_history.front() * 0.5f);

  // decoded training utterances match their transcripts after overfit
  for (const auto& ex : data) {
    audio::MelSpectrogram mel;
    mel.values = ex.mel;
    const auto seq = greedyDecode(model.extractPpg(mel), model.config().blankId());
    CHECK(seq.labels == ex.labels);
  }

  // bit-identical loss history under the same seed
  auto [report2, model2] = runOnce();
  REQUIRE(report2.loss_history.size() == report.loss_history.size());
  for (size_t i = 0; i < report.loss_history.size(); ++i)
    REQUIRE(report.loss_history[i] == report2.loss_history[i]);
}

TEST_CASE("infeasible transcripts are skipped with a warning") {
  std::mt19937 rng(9);
  PrExample ok;
  ok.utt_id = "ok";
  ok.mel = randomMel(rng, 20, 12);
  ok.labels = {0, 1};
  PrExample bad;
  bad.utt_id = "bad";
  bad.mel = randomMel(rng, 2, 12);
  bad.labels = {0, 1, 2, 0, 1};  // longer than the frame count

  PrModel model = PrModel::build(tinyConfig(3), 2);
  PrTrainHyper hyper;
  hyper.steps = 2;
  const auto report = trainPr(model, {ok, bad}, hyper);
  REQUIRE(report.skipped == std::vector<std::string>{"bad"});

  // a single degenerate one-symbol transcript still trains
  PrExample single;
  single.utt_id = "single";
  single.mel = randomMel(rng, 8, 12);
  single.labels = {1};
  PrModel m2 = PrModel::build(tinyConfig(3), 3);
  PrTrainHyper h2;
  h2.steps = 80;
  h2.batch_size = 1;
  const auto rep2 = trainPr(m2, {single}, h2);
  CHECK(rep2.loss_history.back() < 0.15f);
}

TEST_CASE("early stop through the progress callback") {
  std::mt19937 rng(10);
  PrExample ex;
  ex.utt_id = "x";
  ex.mel = randomMel(rng, 15, 12);
  ex.labels = {0};
  PrModel model = PrModel::build(tinyConfig(2), 4);
  PrTrainHyper hyper;
  hyper.steps = 500;
  const auto report =
      trainPr(model, {ex}, hyper, [](int step, float) { return step < 9; });
  CHECK(report.steps_run == 10);
}
