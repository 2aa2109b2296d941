#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tacovc/audio.hpp"
#include "tacovc/nn/adam.hpp"
#include "tacovc/nn/ctc.hpp"
#include "tacovc/nn/layers.hpp"
#include "tacovc/phones.hpp"

namespace tacovc::pr {

using nn::Mat;

// CNN acoustic model trained with CTC. Strictly time-preserving: every layer
// runs at stride 1 with same padding, so a [T x 80] input yields T output
// frames, which is what makes frame-level PPG extraction possible.

struct PrConfig {
  int input_bands = 80;
  std::vector<int> channels = {64, 64, 64, 64};
  std::vector<int> time_strides;  // optional; anything != 1 is rejected
  int kernel = 3;
  float leaky_slope = 0.1f;
  int n_phones = 0;

  int numClasses() const { return n_phones + 1; }  // phones + CTC blank
  int blankId() const { return n_phones; }

  nlohmann::json toJson() const {
    return {{"input_bands", input_bands}, {"channels", channels},
            {"time_strides", time_strides}, {"kernel", kernel},
            {"leaky_slope", leaky_slope},   {"n_phones", n_phones}};
  }

  static PrConfig fromJson(const nlohmann::json& j) {
    PrConfig c;
    c.input_bands = j.at("input_bands").get<int>();
    c.channels = j.at("channels").get<std::vector<int>>();
    c.time_strides = j.value("time_strides", std::vector<int>{});
    c.kernel = j.at("kernel").get<int>();
    c.leaky_slope = j.at("leaky_slope").get<float>();
    c.n_phones = j.at("n_phones").get<int>();
    return c;
  }

  // Deeper stack in the spirit of the full-scale recognizer; the desk default
  // is small enough to overfit a toy corpus in minutes.
  static PrConfig paperPreset(int n_phones) {
    PrConfig c;
    c.channels = std::vector<int>(10, 128);
    c.kernel = 5;
    c.n_phones = n_phones;
    return c;
  }
};

struct Ppg {
  Mat posteriors;  // [n_frames x numClasses], rows sum to 1
};

class PrModel {
 public:
  PrModel() = default;

  static PrModel build(const PrConfig& cfg, uint64_t seed) {
    require(cfg.n_phones >= 1, ErrorCode::InvalidConfig, "recognizer needs a phone inventory");
    require(cfg.input_bands >= 1, ErrorCode::InvalidConfig, "input_bands must be positive");
    require(cfg.kernel >= 1, ErrorCode::InvalidConfig, "kernel must be positive");
    require(!cfg.channels.empty(), ErrorCode::InvalidConfig, "at least one conv layer required");
    for (int s : cfg.time_strides)
      require(s == 1, ErrorCode::InvalidConfig,
              "temporal downsampling is not allowed in the recognizer");

    PrModel m;
    m.cfg_ = cfg;
    std::mt19937 rng(static_cast<uint32_t>(seed ^ 0x9e3779b97f4a7c15ull));
    int in = cfg.input_bands;
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
      const std::string name = "pr.conv" + std::to_string(i);
      m.convs_.emplace_back(m.ps_, name, in, cfg.channels[i], cfg.kernel, rng);
      m.bns_.emplace_back(m.ps_, name + ".bn", cfg.channels[i]);
      in = cfg.channels[i];
    }
    m.head_ = nn::Dense(m.ps_, "pr.head", in, cfg.numClasses(), rng);
    return m;
  }

  const PrConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return ps_; }
  const nn::ParamSet& params() const { return ps_; }
  uint64_t weightChecksum() const { return ps_.checksum(); }

  // [T x bands] -> [T x C] logits. Conv -> Leaky-ReLU -> BatchNorm per layer.
  nn::Var forwardLogits(nn::Ctx& c, nn::Var mel) const {
    require(c.tape.val(mel).cols() == cfg_.input_bands, ErrorCode::ShapeError,
            "recognizer expects " + std::to_string(cfg_.input_bands) + " bands");
    nn::Var h = mel;
    for (size_t i = 0; i < convs_.size(); ++i)
      h = bns_[i](c, nn::leakyRelu(c.tape, convs_[i](c, h), cfg_.leaky_slope));
    return head_(c, h);
  }

  Ppg extractPpg(const audio::MelSpectrogram& mel) const {
    require(mel.values.cols() == cfg_.input_bands, ErrorCode::ShapeError,
            "PPG extraction expects " + std::to_string(cfg_.input_bands) + " bands, got " +
                std::to_string(mel.values.cols()));
    require(mel.values.rows() >= 1, ErrorCode::ShapeError, "empty spectrogram");
    nn::Tape t(/*grad_enabled=*/false);
    std::mt19937 unused(0);
    nn::Ctx c{t, const_cast<nn::ParamSet&>(ps_), /*train=*/false, &unused};
    nn::Var logits = forwardLogits(c, t.constant(mel.values));
    Ppg out;
    out.posteriors = t.val(nn::softmaxRows(t, logits));
    return out;
  }

 private:
  PrConfig cfg_;
  nn::ParamSet ps_;
  std::vector<nn::Conv1d> convs_;
  std::vector<nn::BatchNorm1d> bns_;
  nn::Dense head_;
};

// Best-path decoding: frame argmax (ties to the lowest class index), collapse
// repeats, drop blanks.
inline PhonemeSequence greedyDecode(const Ppg& ppg, int blank_id) {
  PhonemeSequence seq;
  int prev = -1;
  for (Eigen::Index r = 0; r < ppg.posteriors.rows(); ++r) {
    int arg = 0;
    ppg.posteriors.row(r).maxCoeff(&arg);
    if (arg != prev && arg != blank_id) seq.labels.push_back(arg);
    prev = arg;
  }
  return seq;
}

struct PrExample {
  std::string utt_id;
  Mat mel;                  // [T x bands]
  std::vector<int> labels;  // phone ids, no blanks
};

struct PrTrainHyper {
  int steps = 2000;
  int batch_size = 5;
  nn::LinearDecayLr lr{1e-3f, 1e-4f, 2000};
  float clip_norm = 1.0f;
  uint64_t seed = 1;
};

struct PrTrainReport {
  std::vector<float> loss_history;       // mean per-frame CTC loss per step
  std::vector<std::string> skipped;      // utterances with infeasible transcripts
  int steps_run = 0;
};

// Progress callback returns false to stop early (e.g. once the training set
// is fully decoded). Optimizer state lives inside the call, so one call is
// one training run.
inline PrTrainReport trainPr(
    PrModel& model, const std::vector<PrExample>& data, const PrTrainHyper& hyper,
    const std::function<bool(int step, float loss_per_frame)>& progress = nullptr) {
  PrTrainReport report;
  std::vector<const PrExample*> usable;
  for (const auto& ex : data) {
    require(!ex.labels.empty(), ErrorCode::InvalidInput,
            "PR training requires a transcript for " + ex.utt_id);
    if (!nn::ctcFeasible(static_cast<int>(ex.mel.rows()), ex.labels)) {
      report.skipped.push_back(ex.utt_id);
      continue;
    }
    usable.push_back(&ex);
  }
  require(!usable.empty(), ErrorCode::InvalidInput, "no trainable utterances");

  std::mt19937 rng(static_cast<uint32_t>(hyper.seed * 0x2545f4914f6cdd1dull + 7));
  nn::Adam opt(nn::AdamConfig{.clip_norm = hyper.clip_norm});
  std::vector<size_t> order(usable.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();

  for (int step = 0; step < hyper.steps; ++step) {
    nn::Tape t;
    nn::Ctx c{t, model.params(), /*train=*/true, &rng};
    std::vector<nn::Var> losses;
    float frame_loss = 0.0f;
    const int bs = std::min<int>(hyper.batch_size, static_cast<int>(usable.size()));
    for (int b = 0; b < bs; ++b) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const PrExample& ex = *usable[order[cursor++]];
      nn::Var logits = model.forwardLogits(c, t.constant(ex.mel));
      nn::Var loss = nn::ctcLoss(t, logits, ex.labels, model.config().blankId());
      frame_loss += t.val(loss)(0, 0) / static_cast<float>(ex.mel.rows());
      losses.push_back(nn::scale(t, loss, 1.0f / static_cast<float>(bs * ex.mel.rows())));
    }
    nn::Var total = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) total = nn::add(t, total, losses[i]);
    t.backward(total);
    opt.step(model.params(), hyper.lr.at(step));

    frame_loss /= static_cast<float>(bs);
    report.loss_history.push_back(frame_loss);
    report.steps_run = step + 1;
    if (progress && !progress(step, frame_loss)) break;
  }
  return report;
}

}  // namespace tacovc::pr
