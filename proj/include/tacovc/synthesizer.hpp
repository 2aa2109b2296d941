#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tacovc/audio.hpp"
#include "tacovc/nn/adam.hpp"
#include "tacovc/nn/layers.hpp"
#include "tacovc/recognizer.hpp"

namespace tacovc::syn {

using nn::Mat;

// Linearly decayed scheduled sampling: probability of feeding the ground
// truth frame back into the decoder, from start_rate down to final_rate.
struct ScheduledSamplingSchedule {
  float start_rate = 1.0f;
  float final_rate = 0.33f;
  int decay_steps = 10000;

  float rateAt(int step) const {
    require(step >= 0, ErrorCode::InvalidInput, "schedule step must be >= 0");
    if (decay_steps <= 0 || step >= decay_steps) return final_rate;
    return start_rate +
           (final_rate - start_rate) * static_cast<float>(step) / static_cast<float>(decay_steps);
  }

  nlohmann::json toJson() const {
    return {{"start_rate", start_rate}, {"final_rate", final_rate}, {"decay_steps", decay_steps}};
  }
  static ScheduledSamplingSchedule fromJson(const nlohmann::json& j) {
    return {j.at("start_rate").get<float>(), j.at("final_rate").get<float>(),
            j.at("decay_steps").get<int>()};
  }
};

struct SynthesizerConfig {
  int ppg_dim = 62;
  int mel_bands = 80;
  int lin_bins = 513;
  int r = 3;  // spectrogram frames per decoder step

  int prenet_h1 = 128, prenet_h2 = 64;
  int enc_bank_k = 8, enc_bank_ch = 64, enc_proj_ch = 64, enc_highways = 2, enc_gru = 64;
  int attn_dim = 128;
  int attn_rnn = 256;
  int dec_gru = 256, dec_layers = 1;
  int post_bank_k = 4, post_bank_ch = 32, post_proj_ch = 64, post_highways = 2, post_gru = 32;

  float mel_loss_weight = 1.0f, lin_loss_weight = 1.0f;

  int encDim() const { return 2 * enc_gru; }

  void validate() const {
    require(r >= 1, ErrorCode::InvalidConfig, "reduction factor must be >= 1");
    require(ppg_dim >= 2, ErrorCode::InvalidConfig, "ppg_dim must be >= 2");
    require(mel_bands >= 1 && lin_bins >= 1, ErrorCode::InvalidConfig, "bad feature dims");
  }

  nlohmann::json toJson() const {
    return {{"ppg_dim", ppg_dim},       {"mel_bands", mel_bands},
            {"lin_bins", lin_bins},     {"r", r},
            {"prenet_h1", prenet_h1},   {"prenet_h2", prenet_h2},
            {"enc_bank_k", enc_bank_k}, {"enc_bank_ch", enc_bank_ch},
            {"enc_proj_ch", enc_proj_ch}, {"enc_highways", enc_highways},
            {"enc_gru", enc_gru},       {"attn_dim", attn_dim},
            {"attn_rnn", attn_rnn},     {"dec_gru", dec_gru},
            {"dec_layers", dec_layers}, {"post_bank_k", post_bank_k},
            {"post_bank_ch", post_bank_ch}, {"post_proj_ch", post_proj_ch},
            {"post_highways", post_highways}, {"post_gru", post_gru},
            {"mel_loss_weight", mel_loss_weight}, {"lin_loss_weight", lin_loss_weight}};
  }

  static SynthesizerConfig fromJson(const nlohmann::json& j) {
    SynthesizerConfig c;
    c.ppg_dim = j.at("ppg_dim").get<int>();
    c.mel_bands = j.at("mel_bands").get<int>();
    c.lin_bins = j.at("lin_bins").get<int>();
    c.r = j.at("r").get<int>();
    c.prenet_h1 = j.at("prenet_h1").get<int>();
    c.prenet_h2 = j.at("prenet_h2").get<int>();
    c.enc_bank_k = j.at("enc_bank_k").get<int>();
    c.enc_bank_ch = j.at("enc_bank_ch").get<int>();
    c.enc_proj_ch = j.at("enc_proj_ch").get<int>();
    c.enc_highways = j.at("enc_highways").get<int>();
    c.enc_gru = j.at("enc_gru").get<int>();
    c.attn_dim = j.at("attn_dim").get<int>();
    c.attn_rnn = j.at("attn_rnn").get<int>();
    c.dec_gru = j.at("dec_gru").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.post_bank_k = j.at("post_bank_k").get<int>();
    c.post_bank_ch = j.at("post_bank_ch").get<int>();
    c.post_proj_ch = j.at("post_proj_ch").get<int>();
    c.post_highways = j.at("post_highways").get<int>();
    c.post_gru = j.at("post_gru").get<int>();
    c.mel_loss_weight = j.at("mel_loss_weight").get<float>();
    c.lin_loss_weight = j.at("lin_loss_weight").get<float>();
    return c;
  }

  static SynthesizerConfig paperPreset(int ppg_dim) {
    SynthesizerConfig c;
    c.ppg_dim = ppg_dim;
    c.prenet_h1 = 256;
    c.prenet_h2 = 128;
    c.enc_bank_k = 16;
    c.enc_bank_ch = 128;
    c.enc_proj_ch = 128;
    c.enc_highways = 4;
    c.enc_gru = 128;
    c.attn_dim = 256;
    c.attn_rnn = 256;
    c.dec_gru = 256;
    c.dec_layers = 2;
    c.post_bank_k = 8;
    c.post_bank_ch = 128;
    c.post_proj_ch = 128;
    c.post_highways = 4;
    c.post_gru = 128;
    return c;
  }
};

// Tacotron-style loss: equally weighted mean-L1 over the mel and linear
// targets, masked to the real (unpadded) frames.
inline float tacoLoss(const Mat& pred_mel, const Mat& pred_lin, const Mat& true_mel,
                      const Mat& true_lin, float mel_w = 1.0f, float lin_w = 1.0f) {
  require(pred_mel.rows() == true_mel.rows() && pred_mel.cols() == true_mel.cols(),
          ErrorCode::ShapeError, "mel prediction/target shape mismatch");
  require(pred_lin.rows() == true_lin.rows() && pred_lin.cols() == true_lin.cols(),
          ErrorCode::ShapeError, "linear prediction/target shape mismatch");
  const float mel_l1 = (pred_mel - true_mel).array().abs().mean();
  const float lin_l1 = (pred_lin - true_lin).array().abs().mean();
  return mel_w * mel_l1 + lin_w * lin_l1;
}

struct SynthOutput {
  audio::MelSpectrogram mel;       // role SYNTH_YHAT, clamped to [0, 1]
  audio::LinearSpectrogram lin;    // clamped to [0, 1]
  Mat attention;                   // [decoder_steps x input_frames]
};

struct SynExample {
  std::string utt_id;
  Mat ppg;  // [T x ppg_dim]
  Mat mel;  // [T x mel_bands]
  Mat lin;  // [T x lin_bins]
};

struct SynStepLoss {
  float total = 0.0f;
  float mel_l1 = 0.0f;
  float lin_l1 = 0.0f;
};

class SynthesizerModel {
 public:
  SynthesizerModel() = default;

  static SynthesizerModel build(const SynthesizerConfig& cfg, uint64_t seed) {
    cfg.validate();
    SynthesizerModel m;
    m.cfg_ = cfg;
    std::mt19937 rng(static_cast<uint32_t>(seed ^ 0xa5a5a5a51234fedcull));

    m.enc_prenet_ = nn::Prenet(m.ps_, "syn.enc.prenet", cfg.ppg_dim, cfg.prenet_h1, cfg.prenet_h2, rng);
    nn::CbhgConfig enc;
    enc.in_dim = cfg.prenet_h2;
    enc.bank_k = cfg.enc_bank_k;
    enc.bank_ch = cfg.enc_bank_ch;
    enc.proj_ch = cfg.enc_proj_ch;
    enc.n_highway = cfg.enc_highways;
    enc.highway_dim = cfg.prenet_h2;
    enc.gru_units = cfg.enc_gru;
    m.encoder_ = nn::Cbhg(m.ps_, "syn.enc.cbhg", enc, rng);

    m.enc_attn_proj_ = nn::Dense(m.ps_, "syn.attn.enc", cfg.encDim(), cfg.attn_dim, rng);
    m.query_proj_ = nn::Dense(m.ps_, "syn.attn.query", cfg.attn_rnn, cfg.attn_dim, rng);
    m.attn_v_ = m.ps_.add("syn.attn.v", nn::glorotUniform(rng, cfg.attn_dim, 1));

    m.dec_prenet_ = nn::Prenet(m.ps_, "syn.dec.prenet", cfg.mel_bands, cfg.prenet_h1, cfg.prenet_h2, rng);
    m.attn_rnn_ = nn::GruCell(m.ps_, "syn.dec.attn_rnn", cfg.prenet_h2 + cfg.encDim(), cfg.attn_rnn, rng);
    m.dec_in_proj_ = nn::Dense(m.ps_, "syn.dec.in_proj", cfg.attn_rnn + cfg.encDim(), cfg.dec_gru, rng);
    for (int i = 0; i < cfg.dec_layers; ++i)
      m.dec_grus_.emplace_back(m.ps_, "syn.dec.gru" + std::to_string(i), cfg.dec_gru, cfg.dec_gru, rng);
    m.mel_proj_ = nn::Dense(m.ps_, "syn.dec.mel_proj", cfg.dec_gru, cfg.mel_bands * cfg.r, rng);

    nn::CbhgConfig post;
    post.in_dim = cfg.mel_bands;
    post.bank_k = cfg.post_bank_k;
    post.bank_ch = cfg.post_bank_ch;
    post.proj_ch = cfg.post_proj_ch;
    post.n_highway = cfg.post_highways;
    post.highway_dim = cfg.post_proj_ch;
    post.gru_units = cfg.post_gru;
    m.postnet_ = nn::Cbhg(m.ps_, "syn.post.cbhg", post, rng);
    m.lin_proj_ = nn::Dense(m.ps_, "syn.post.lin_proj", 2 * cfg.post_gru, cfg.lin_bins, rng);
    return m;
  }

  const SynthesizerConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return ps_; }
  const nn::ParamSet& params() const { return ps_; }
  uint64_t weightChecksum() const { return ps_.checksum(); }

  static int decoderSteps(int frames, int r) { return (frames + r - 1) / r; }

  // One optimizer update over a batch. Per decoder step, the previous true
  // frame is fed with probability rate_at(step), otherwise the decoder's own
  // previous prediction. teacher_forcing_only bypasses sampling entirely.
  SynStepLoss trainStep(const std::vector<const SynExample*>& batch,
                        const ScheduledSamplingSchedule& schedule, int step, nn::Adam& opt,
                        float lr, std::mt19937& rng, bool teacher_forcing_only = false) {
    require(!batch.empty(), ErrorCode::InvalidInput, "empty batch");
    nn::Tape t;
    nn::Ctx c{t, ps_, /*train=*/true, &rng};
    const float rate = schedule.rateAt(step);
    std::uniform_real_distribution<float> coin(0.0f, 1.0f);

    SynStepLoss agg;
    std::vector<nn::Var> losses;
    for (const SynExample* ex : batch) {
      require(ex->ppg.rows() == ex->mel.rows() && ex->ppg.rows() == ex->lin.rows(),
              ErrorCode::AlignmentError,
              "PPG/mel/linear frame counts differ for " + ex->utt_id);
      require(ex->ppg.cols() == cfg_.ppg_dim, ErrorCode::ShapeError,
              "PPG width mismatch for " + ex->utt_id);
      const int L = static_cast<int>(ex->mel.rows());
      const int steps = decoderSteps(L, cfg_.r);
      const int padded = steps * cfg_.r;

      Mat mel_pad = Mat::Zero(padded, cfg_.mel_bands);  // floor value pads the tail
      mel_pad.topRows(L) = ex->mel;
      Mat lin_pad = Mat::Zero(padded, cfg_.lin_bins);
      lin_pad.topRows(L) = ex->lin;

      nn::Var enc = encode(c, t.constant(ex->ppg));
      nn::Var enc_proj = enc_attn_proj_(c, enc);

      DecoderState st = initialState(t);
      nn::Var prev = t.constant(Mat::Zero(1, cfg_.mel_bands));
      std::vector<nn::Var> groups;
      for (int i = 0; i < steps; ++i) {
        if (i > 0) {
          bool use_truth = true;
          if (!teacher_forcing_only && rate < 1.0f) use_truth = coin(rng) < rate;
          if (use_truth)
            prev = t.constant(mel_pad.row(i * cfg_.r - 1));
          else
            prev = nn::detach(t, nn::sliceRows(t, groups.back(), cfg_.r - 1, 1));
        }
        auto [group, alpha] = decodeStep(c, enc, enc_proj, st, prev);
        groups.push_back(group);
      }
      nn::Var mel_pred = nn::concatRows(t, groups);
      nn::Var lin_pred = lin_proj_(c, postnet_(c, mel_pred));

      nn::Var mel_l1 = nn::maskedMeanAbs(t, mel_pred, mel_pad, L);
      nn::Var lin_l1 = nn::maskedMeanAbs(t, lin_pred, lin_pad, L);
      agg.mel_l1 += t.val(mel_l1)(0, 0);
      agg.lin_l1 += t.val(lin_l1)(0, 0);
      nn::Var loss = nn::add(t, nn::scale(t, mel_l1, cfg_.mel_loss_weight),
                             nn::scale(t, lin_l1, cfg_.lin_loss_weight));
      losses.push_back(nn::scale(t, loss, 1.0f / static_cast<float>(batch.size())));
    }

    nn::Var total = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) total = nn::add(t, total, losses[i]);
    agg.total = t.val(total)(0, 0);
    agg.mel_l1 /= static_cast<float>(batch.size());
    agg.lin_l1 /= static_cast<float>(batch.size());
    t.backward(total);
    opt.step(ps_, lr);
    return agg;
  }

  // Constant stop-token decode: the known source length fixes the decoder to
  // exactly ceil(L/r) steps; the raw output is trimmed back to L frames. No
  // learned stop prediction exists anywhere.
  SynthOutput synthesize(const pr::Ppg& ppg) const {
    require(ppg.posteriors.rows() >= 1, ErrorCode::ShapeError, "empty PPG");
    require(ppg.posteriors.cols() == cfg_.ppg_dim, ErrorCode::ShapeError,
            "PPG width " + std::to_string(ppg.posteriors.cols()) + " != configured " +
                std::to_string(cfg_.ppg_dim));
    const int L = static_cast<int>(ppg.posteriors.rows());
    const int steps = decoderSteps(L, cfg_.r);

    nn::Tape t(/*grad_enabled=*/false);
    std::mt19937 unused(0);
    nn::Ctx c{t, const_cast<nn::ParamSet&>(ps_), /*train=*/false, &unused};

    nn::Var enc = encode(c, t.constant(ppg.posteriors));
    nn::Var enc_proj = enc_attn_proj_(c, enc);
    DecoderState st = initialState(t);
    nn::Var prev = t.constant(Mat::Zero(1, cfg_.mel_bands));

    Mat attention(steps, L);
    std::vector<nn::Var> groups;
    for (int i = 0; i < steps; ++i) {
      if (i > 0) prev = nn::sliceRows(t, groups.back(), cfg_.r - 1, 1);
      auto [group, alpha] = decodeStep(c, enc, enc_proj, st, prev);
      groups.push_back(group);
      attention.row(i) = t.val(alpha).row(0);
    }
    nn::Var mel_pred_full = nn::concatRows(t, groups);
    nn::Var mel_trimmed = L == steps * cfg_.r ? mel_pred_full : nn::sliceRows(t, mel_pred_full, 0, L);
    nn::Var lin_pred = lin_proj_(c, postnet_(c, mel_trimmed));

    SynthOutput out;
    out.mel.values = t.val(mel_trimmed).cwiseMax(0.0f).cwiseMin(1.0f);
    out.mel.role = audio::MelRole::SynthYhat;
    out.lin.values = t.val(lin_pred).cwiseMax(0.0f).cwiseMin(1.0f);
    out.attention = std::move(attention);
    return out;
  }

 private:
  struct DecoderState {
    nn::Var attn_h;
    std::vector<nn::Var> dec_h;
    nn::Var context;
  };

  DecoderState initialState(nn::Tape& t) const {
    DecoderState st;
    st.attn_h = t.constant(Mat::Zero(1, cfg_.attn_rnn));
    for (int i = 0; i < cfg_.dec_layers; ++i)
      st.dec_h.push_back(t.constant(Mat::Zero(1, cfg_.dec_gru)));
    st.context = t.constant(Mat::Zero(1, cfg_.encDim()));
    return st;
  }

  nn::Var encode(nn::Ctx& c, nn::Var ppg) const {
    return encoder_(c, enc_prenet_(c, ppg));
  }

  // Returns (r mel frames, attention weights over encoder frames).
  std::pair<nn::Var, nn::Var> decodeStep(nn::Ctx& c, nn::Var enc, nn::Var enc_proj,
                                         DecoderState& st, nn::Var prev_frame) const {
    nn::Tape& t = c.tape;
    nn::Var pre = dec_prenet_(c, prev_frame);
    st.attn_h = attn_rnn_.step(c, nn::concatCols(t, pre, st.context), st.attn_h);

    nn::Var query = query_proj_(c, st.attn_h);
    nn::Var scores = nn::matmul(t, nn::tanhOp(t, nn::addRowBroadcast(t, enc_proj, query)),
                                c.param(attn_v_));
    nn::Var alpha = nn::softmaxRows(t, nn::transposeOp(t, scores));  // [1 x T]
    st.context = nn::matmul(t, alpha, enc);

    nn::Var d = dec_in_proj_(c, nn::concatCols(t, st.attn_h, st.context));
    for (size_t i = 0; i < dec_grus_.size(); ++i) {
      st.dec_h[i] = dec_grus_[i].step(c, d, st.dec_h[i]);
      d = nn::add(t, d, st.dec_h[i]);
    }
    nn::Var flat = mel_proj_(c, d);  // [1 x r*mel]
    std::vector<nn::Var> rows;
    for (int j = 0; j < cfg_.r; ++j)
      rows.push_back(nn::sliceCols(t, flat, j * cfg_.mel_bands, cfg_.mel_bands));
    return {nn::concatRows(t, rows), alpha};
  }

  SynthesizerConfig cfg_;
  nn::ParamSet ps_;
  nn::Prenet enc_prenet_;
  nn::Cbhg encoder_;
  nn::Dense enc_attn_proj_, query_proj_;
  nn::ParamRef attn_v_;
  nn::Prenet dec_prenet_;
  nn::GruCell attn_rnn_;
  nn::Dense dec_in_proj_;
  std::vector<nn::GruCell> dec_grus_;
  nn::Dense mel_proj_;
  nn::Cbhg postnet_;
  nn::Dense lin_proj_;
};

struct SynTrainHyper {
  int steps = 10000;
  int batch_size = 5;
  nn::LinearDecayLr lr{0.002f, 0.0002f, 10000};
  ScheduledSamplingSchedule schedule{1.0f, 0.33f, 10000};
  float clip_norm = 1.0f;
  uint64_t seed = 1;
  bool teacher_forcing_only = false;
};

struct SynTrainReport {
  std::vector<SynStepLoss> history;
  int steps_run = 0;
};

inline SynTrainReport trainSynthesizer(
    SynthesizerModel& model, const std::vector<SynExample>& data, const SynTrainHyper& hyper,
    const std::function<bool(int step, const SynStepLoss&)>& progress = nullptr) {
  require(!data.empty(), ErrorCode::InvalidInput, "no training utterances");
  std::mt19937 rng(static_cast<uint32_t>(hyper.seed * 0x6a09e667f3bcc909ull + 3));
  nn::Adam opt(nn::AdamConfig{.clip_norm = hyper.clip_norm});

  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();

  SynTrainReport report;
  for (int step = 0; step < hyper.steps; ++step) {
    std::vector<const SynExample*> batch;
    const int bs = std::min<int>(hyper.batch_size, static_cast<int>(data.size()));
    for (int b = 0; b < bs; ++b) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&data[order[cursor++]]);
    }
    const SynStepLoss loss = model.trainStep(batch, hyper.schedule, step, opt, hyper.lr.at(step),
                                             rng, hyper.teacher_forcing_only);
    report.history.push_back(loss);
    report.steps_run = step + 1;
    if (progress && !progress(step, loss)) break;
  }
  return report;
}

}  // namespace tacovc::syn
