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

namespace tacovc::voc {

using nn::Mat;

// Autoregressive dilated-convolution vocoder. Gated causal conv stack with
// local conditioning injected into the gated units; the conditioning comes
// from the mel spectrogram through learnable transposed-conv upsampling whose
// stride product must equal the STFT hop, so one mel frame expands to exactly
// hop samples.

struct VocoderConfig {
  std::vector<int> dilations = {1, 2, 4, 8, 16, 32, 64, 128};
  int kernel = 2;
  int residual_ch = 32;
  int skip_ch = 32;
  int cond_ch = 32;
  std::vector<int> upsample_strides = {16, 16};
  int classes = 256;
  int hop = 256;
  int mel_bands = 80;
  int sample_rate = 22050;

  int receptiveField() const {
    int sum = 0;
    for (int d : dilations) sum += d;
    return 1 + (kernel - 1) * sum;
  }

  int zeroCode() const { return classes / 2; }

  void validate() const {
    require(!dilations.empty(), ErrorCode::InvalidConfig, "vocoder needs at least one layer");
    for (int d : dilations) require(d >= 1, ErrorCode::InvalidConfig, "dilation must be >= 1");
    require(kernel >= 1, ErrorCode::InvalidConfig, "kernel must be >= 1");
    require(classes >= 2 && classes <= 256, ErrorCode::InvalidConfig,
            "classes must be in [2, 256]");
    int prod = 1;
    for (int s : upsample_strides) {
      require(s >= 1, ErrorCode::InvalidConfig, "upsample stride must be >= 1");
      prod *= s;
    }
    require(prod == hop, ErrorCode::ConfigMismatch,
            "product of upsample strides (" + std::to_string(prod) + ") != hop (" +
                std::to_string(hop) + ")");
  }

  nlohmann::json toJson() const {
    return {{"dilations", dilations},   {"kernel", kernel},
            {"residual_ch", residual_ch}, {"skip_ch", skip_ch},
            {"cond_ch", cond_ch},       {"upsample_strides", upsample_strides},
            {"classes", classes},       {"hop", hop},
            {"mel_bands", mel_bands},   {"sample_rate", sample_rate}};
  }

  static VocoderConfig fromJson(const nlohmann::json& j) {
    VocoderConfig c;
    c.dilations = j.at("dilations").get<std::vector<int>>();
    c.kernel = j.at("kernel").get<int>();
    c.residual_ch = j.at("residual_ch").get<int>();
    c.skip_ch = j.at("skip_ch").get<int>();
    c.cond_ch = j.at("cond_ch").get<int>();
    c.upsample_strides = j.at("upsample_strides").get<std::vector<int>>();
    c.classes = j.at("classes").get<int>();
    c.hop = j.at("hop").get<int>();
    c.mel_bands = j.at("mel_bands").get<int>();
    c.sample_rate = j.value("sample_rate", 22050);
    return c;
  }

  // Two stacks of dilations 1..512, the geometry commonly published for
  // full-scale vocoders of this family.
  static VocoderConfig paperPreset() {
    VocoderConfig c;
    c.dilations.clear();
    for (int stack = 0; stack < 2; ++stack)
      for (int d = 1; d <= 512; d *= 2) c.dilations.push_back(d);
    c.residual_ch = 64;
    c.skip_ch = 128;
    c.cond_ch = 80;
    return c;
  }
};

enum class GenMode { Argmax, Sample };

struct VocExample {
  std::string utt_id;
  std::vector<int> codes;  // mu-law classes, length = n_frames * hop
  Mat mel;                 // [n_frames x mel_bands]
};

inline VocExample makeVocExample(const std::string& utt_id, const audio::Waveform& wav,
                                 const audio::FeatureConfig& fcfg) {
  VocExample ex;
  ex.utt_id = utt_id;
  ex.mel = audio::waveformToMelspec(wav, fcfg).values;
  const audio::MuLawWaveform mu = audio::muLawEncode(wav, fcfg.mu_channels);
  const size_t want = static_cast<size_t>(ex.mel.rows()) * static_cast<size_t>(fcfg.hop);
  ex.codes.assign(want, fcfg.mu_channels / 2);  // pad tail with the silence code
  for (size_t i = 0; i < mu.codes.size() && i < want; ++i) ex.codes[i] = mu.codes[i];
  return ex;
}

class VocoderModel {
 public:
  VocoderModel() = default;

  static VocoderModel build(const VocoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    VocoderModel m;
    m.cfg_ = cfg;
    std::mt19937 rng(static_cast<uint32_t>(seed ^ 0xd6e8feb86659fd93ull));
    const int R = cfg.residual_ch, S = cfg.skip_ch;

    m.embed_ = m.ps_.add("voc.embed", nn::glorotUniform(rng, cfg.classes, R));
    m.cond_pre_ = nn::Dense(m.ps_, "voc.cond.pre", cfg.mel_bands, cfg.cond_ch, rng);
    for (size_t i = 0; i < cfg.upsample_strides.size(); ++i) {
      const int s = cfg.upsample_strides[i];
      UpStage st;
      st.stride = s;
      st.w = m.ps_.add("voc.cond.up" + std::to_string(i) + ".w",
                       nn::glorotUniform(rng, 2 * s * cfg.cond_ch, cfg.cond_ch));
      st.b = m.ps_.add("voc.cond.up" + std::to_string(i) + ".b", Mat::Zero(1, cfg.cond_ch));
      m.up_stages_.push_back(st);
    }
    for (size_t l = 0; l < cfg.dilations.size(); ++l) {
      const std::string name = "voc.layer" + std::to_string(l);
      Layer layer;
      layer.dilation = cfg.dilations[l];
      layer.conv_w = m.ps_.add(name + ".conv.w", nn::glorotUniform(rng, cfg.kernel * R, 2 * R));
      layer.conv_b = m.ps_.add(name + ".conv.b", Mat::Zero(1, 2 * R));
      layer.cond_w = m.ps_.add(name + ".cond.w", nn::glorotUniform(rng, cfg.cond_ch, 2 * R));
      layer.res_w = m.ps_.add(name + ".res.w", nn::glorotUniform(rng, R, R));
      layer.res_b = m.ps_.add(name + ".res.b", Mat::Zero(1, R));
      layer.skip_w = m.ps_.add(name + ".skip.w", nn::glorotUniform(rng, R, S));
      layer.skip_b = m.ps_.add(name + ".skip.b", Mat::Zero(1, S));
      m.layers_.push_back(layer);
    }
    m.head1_ = nn::Dense(m.ps_, "voc.head1", S, S, rng);
    m.head2_ = nn::Dense(m.ps_, "voc.head2", S, cfg.classes, rng);
    return m;
  }

  const VocoderConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return ps_; }
  const nn::ParamSet& params() const { return ps_; }
  uint64_t weightChecksum() const { return ps_.checksum(); }

  // mel [F x bands] -> conditioning series [F*hop x cond_ch], length exact.
  nn::Var upsampleConditioning(nn::Ctx& c, nn::Var mel) const {
    require(c.tape.val(mel).cols() == cfg_.mel_bands, ErrorCode::ShapeError,
            "conditioning expects " + std::to_string(cfg_.mel_bands) + " mel bands");
    nn::Var h = nn::leakyRelu(c.tape, cond_pre_(c, mel), 0.1f);
    for (const auto& st : up_stages_)
      h = nn::leakyRelu(
          c.tape, nn::transposedConv1d(c.tape, h, c.param(st.w), c.param(st.b), st.stride), 0.1f);
    return h;
  }

  Mat upsampleConditioningEval(const Mat& mel) const {
    nn::Tape t(/*grad_enabled=*/false);
    std::mt19937 unused(0);
    nn::Ctx c{t, const_cast<nn::ParamSet&>(ps_), false, &unused};
    return t.val(upsampleConditioning(c, t.constant(mel)));
  }

  // Teacher-forced logits for a code sequence. Input at step t is the
  // embedding of codes[t-1] (prev_code before the crop), so the output at t
  // depends only on samples < t plus conditioning.
  nn::Var forwardLogits(nn::Ctx& c, const std::vector<int>& codes, int prev_code,
                        nn::Var cond) const {
    require(!codes.empty(), ErrorCode::InvalidInput, "empty code sequence");
    require(c.tape.val(cond).rows() == static_cast<Eigen::Index>(codes.size()),
            ErrorCode::AlignmentError, "conditioning length != code length");
    nn::Tape& t = c.tape;
    std::vector<int> inputs(codes.size());
    inputs[0] = prev_code;
    for (size_t i = 1; i < codes.size(); ++i) inputs[i] = codes[i - 1];

    nn::Var x = nn::embedRows(t, c.ps, embed_, inputs);
    nn::Var skip_total;
    const int R = cfg_.residual_ch;
    for (const auto& layer : layers_) {
      nn::Var z = nn::conv1d(t, x, c.param(layer.conv_w), c.param(layer.conv_b), cfg_.kernel,
                             layer.dilation, /*causal=*/true);
      z = nn::add(t, z, nn::matmul(t, cond, c.param(layer.cond_w)));
      nn::Var gated = nn::mul(t, nn::tanhOp(t, nn::sliceCols(t, z, 0, R)),
                              nn::sigmoid(t, nn::sliceCols(t, z, R, R)));
      nn::Var skip = nn::addRowBroadcast(t, nn::matmul(t, gated, c.param(layer.skip_w)),
                                         c.param(layer.skip_b));
      skip_total = skip_total.valid() ? nn::add(t, skip_total, skip) : skip;
      x = nn::add(t, x, nn::addRowBroadcast(t, nn::matmul(t, gated, c.param(layer.res_w)),
                                            c.param(layer.res_b)));
    }
    nn::Var h = nn::relu(t, skip_total);
    h = nn::relu(t, head1_(c, h));
    return head2_(c, h);
  }

  // Graph-path logits over a whole utterance, eval mode.
  Mat teacherForcedLogits(const std::vector<int>& codes, const Mat& mel) const {
    checkAlignment(codes, mel);
    nn::Tape t(/*grad_enabled=*/false);
    std::mt19937 unused(0);
    nn::Ctx c{t, const_cast<nn::ParamSet&>(ps_), false, &unused};
    nn::Var cond = upsampleConditioning(c, t.constant(mel));
    return t.val(forwardLogits(c, codes, cfg_.zeroCode(), cond));
  }

  struct EvalResult {
    float cross_entropy = 0.0f;
    float accuracy = 0.0f;
  };

  EvalResult teacherForcedEval(const std::vector<int>& codes, const Mat& mel) const {
    const Mat logits = teacherForcedLogits(codes, mel);
    EvalResult res;
    double ce = 0.0;
    int hits = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const float mx = logits.row(r).maxCoeff();
      double z = 0.0;
      for (Eigen::Index k = 0; k < logits.cols(); ++k)
        z += std::exp(static_cast<double>(logits(r, k)) - mx);
      ce -= static_cast<double>(logits(r, codes[static_cast<size_t>(r)])) - mx - std::log(z);
      int arg = 0;
      logits.row(r).maxCoeff(&arg);
      if (arg == codes[static_cast<size_t>(r)]) ++hits;
    }
    res.cross_entropy = static_cast<float>(ce / static_cast<double>(logits.rows()));
    res.accuracy = static_cast<float>(hits) / static_cast<float>(logits.rows());
    return res;
  }

  // Sample-by-sample loop sharing weights with the graph path; next_code
  // picks the continuation (argmax, sampling, or replay in tests).
  Mat incrementalLogits(const std::vector<int>* replay_codes, const Mat& mel, GenMode mode,
                        uint64_t seed, std::vector<int>* out_codes) const {
    const int T = static_cast<int>(mel.rows()) * cfg_.hop;
    const int R = cfg_.residual_ch;
    const int n_layers = static_cast<int>(layers_.size());

    const Mat cond = upsampleConditioningEval(mel);
    // per-layer conditioning projections with the conv bias folded in
    std::vector<Mat> cond_proj(static_cast<size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
      cond_proj[l] = cond * ps_.at(layers_[l].cond_w).value;
      cond_proj[l].rowwise() += ps_.at(layers_[l].conv_b).value.row(0);
    }

    // ring buffers of past layer inputs, zero history = causal zero padding
    std::vector<Mat> rings(static_cast<size_t>(n_layers));
    std::vector<int> ring_len(static_cast<size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
      ring_len[l] = std::max(1, (cfg_.kernel - 1) * layers_[l].dilation);
      rings[l] = Mat::Zero(ring_len[l], R);
    }

    std::mt19937 rng(static_cast<uint32_t>(seed * 0x94d049bb133111ebull + 5));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    Mat logits_all(T, cfg_.classes);
    int prev_code = cfg_.zeroCode();
    Eigen::RowVectorXf x(R), z(2 * R), gated(R), skip_sum(cfg_.skip_ch);
    for (int t = 0; t < T; ++t) {
      x = ps_.at(embed_).value.row(prev_code);
      skip_sum.setZero();
      for (int l = 0; l < n_layers; ++l) {
        const Layer& ly = layers_[l];
        const Mat& w = ps_.at(ly.conv_w).value;
        z = cond_proj[l].row(t);
        // taps j=0..k-1 read x at t + (j - k + 1) * dilation
        for (int j = 0; j < cfg_.kernel; ++j) {
          const int src = t + (j - cfg_.kernel + 1) * ly.dilation;
          if (src < 0) continue;
          if (src == t)
            z.noalias() += x * w.middleRows(static_cast<Eigen::Index>(j) * R, R);
          else
            z.noalias() += rings[l].row(src % ring_len[l]) *
                           w.middleRows(static_cast<Eigen::Index>(j) * R, R);
        }
        rings[l].row(t % ring_len[l]) = x;  // store this layer's input
        gated = (z.leftCols(R).array().tanh() *
                 (1.0f / (1.0f + (-z.rightCols(R).array()).exp())))
                    .matrix();
        skip_sum.noalias() += gated * ps_.at(ly.skip_w).value;
        skip_sum += ps_.at(ly.skip_b).value.row(0);
        x.noalias() += (gated * ps_.at(ly.res_w).value + ps_.at(ly.res_b).value.row(0)).eval();
      }
      Eigen::RowVectorXf h = skip_sum.cwiseMax(0.0f);
      h = ((h * ps_.at(head1_.w).value + ps_.at(head1_.b).value.row(0)).cwiseMax(0.0f)).eval();
      Eigen::RowVectorXf logits =
          (h * ps_.at(head2_.w).value + ps_.at(head2_.b).value.row(0)).eval();
      logits_all.row(t) = logits;

      int code;
      if (replay_codes) {
        code = (*replay_codes)[static_cast<size_t>(t)];
      } else if (mode == GenMode::Argmax) {
        int arg = 0;
        logits.maxCoeff(&arg);
        code = arg;
      } else {
        // inverse-CDF categorical draw; implementation-defined std
        // distributions are avoided so seeds reproduce across builds
        const float mx = logits.maxCoeff();
        Eigen::ArrayXd p = (logits.transpose().array().cast<double>() - mx).exp();
        p /= p.sum();
        const double u = uni(rng);
        double acc = 0.0;
        code = cfg_.classes - 1;
        for (int k = 0; k < cfg_.classes; ++k) {
          acc += p(k);
          if (u <= acc) {
            code = k;
            break;
          }
        }
      }
      if (out_codes) out_codes->push_back(code);
      prev_code = code;
    }
    return logits_all;
  }

  audio::Waveform generate(const Mat& mel, GenMode mode, uint64_t seed = 0) const {
    require(mel.rows() >= 1, ErrorCode::ShapeError, "empty conditioning spectrogram");
    std::vector<int> codes;
    codes.reserve(static_cast<size_t>(mel.rows()) * static_cast<size_t>(cfg_.hop));
    incrementalLogits(nullptr, mel, mode, seed, &codes);
    audio::MuLawWaveform mu;
    mu.sample_rate = cfg_.sample_rate;
    mu.codes.assign(codes.begin(), codes.end());
    audio::Waveform out = audio::muLawDecode(mu, cfg_.classes);
    return out;
  }

  void checkAlignment(const std::vector<int>& codes, const Mat& mel) const {
    require(static_cast<Eigen::Index>(codes.size()) == mel.rows() * cfg_.hop,
            ErrorCode::AlignmentError,
            "code count " + std::to_string(codes.size()) + " != frames*hop " +
                std::to_string(mel.rows() * cfg_.hop));
  }

 private:
  struct UpStage {
    nn::ParamRef w, b;
    int stride = 1;
  };
  struct Layer {
    nn::ParamRef conv_w, conv_b, cond_w, res_w, res_b, skip_w, skip_b;
    int dilation = 1;
  };

  VocoderConfig cfg_;
  nn::ParamSet ps_;
  nn::ParamRef embed_;
  nn::Dense cond_pre_;
  std::vector<UpStage> up_stages_;
  std::vector<Layer> layers_;
  nn::Dense head1_, head2_;
};

struct VocTrainHyper {
  int steps = 20000;
  int crop_frames = 6;
  nn::LinearDecayLr lr{5e-4f, 5e-5f, 20000};
  float clip_norm = 1.0f;
  uint64_t seed = 1;
};

struct VocTrainReport {
  std::vector<float> ce_history;
  int steps_run = 0;
};

// Teacher-forced next-sample cross-entropy training on random frame-aligned
// crops. The crop's first input comes from the sample just before the crop,
// so training windows stay causally consistent with full sequences.
inline VocTrainReport trainVocoder(
    VocoderModel& model, const std::vector<VocExample>& data, const VocTrainHyper& hyper,
    const std::function<bool(int step, float ce)>& progress = nullptr) {
  require(!data.empty(), ErrorCode::InvalidInput, "no training utterances");
  for (const auto& ex : data) model.checkAlignment(ex.codes, ex.mel);

  const int hop = model.config().hop;
  std::mt19937 rng(static_cast<uint32_t>(hyper.seed * 0x9e3779b97f4a7c15ull + 13));
  nn::Adam opt(nn::AdamConfig{.clip_norm = hyper.clip_norm});

  VocTrainReport report;
  for (int step = 0; step < hyper.steps; ++step) {
    const VocExample& ex = data[rng() % data.size()];
    const int frames = static_cast<int>(ex.mel.rows());
    const int crop = std::min(hyper.crop_frames, frames);
    const int f0 = frames == crop ? 0 : static_cast<int>(rng() % (frames - crop + 1));

    nn::Tape t;
    std::mt19937 unused(0);
    nn::Ctx c{t, model.params(), /*train=*/true, &unused};
    const Mat mel_crop = ex.mel.middleRows(f0, crop);
    nn::Var cond = model.upsampleConditioning(c, t.constant(mel_crop));
    std::vector<int> codes_crop(ex.codes.begin() + static_cast<long>(f0) * hop,
                                ex.codes.begin() + static_cast<long>(f0 + crop) * hop);
    const int prev = f0 == 0 ? model.config().zeroCode()
                             : ex.codes[static_cast<size_t>(f0) * hop - 1];
    nn::Var logits = model.forwardLogits(c, codes_crop, prev, cond);
    nn::Var loss = nn::crossEntropyRows(t, logits, codes_crop);
    const float ce = t.val(loss)(0, 0);
    t.backward(loss);
    opt.step(model.params(), hyper.lr.at(step));

    report.ce_history.push_back(ce);
    report.steps_run = step + 1;
    if (progress && !progress(step, ce)) break;
  }
  return report;
}

}  // namespace tacovc::voc
