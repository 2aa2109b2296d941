#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tacovc/manifest.hpp"
#include "tacovc/recognizer.hpp"
#include "tacovc/synthesizer.hpp"
#include "tacovc/tvcf.hpp"
#include "tacovc/wav.hpp"

namespace tacovc::se {

using nn::Mat;

// Taco-SE: the trained recognizer composed with a copy of the trained
// synthesizer. The recognizer is shared by reference and never updated; only
// the synthesizer copy trains, using the plain Tacotron loss.

enum class PairKind { Identity, Synth };

struct SeExample {
  std::string utt_id;
  Mat y_mel;      // true target
  Mat y_lin;
  Mat smspec;     // synthesized mel (yhat); empty until gen-smspec ran
  Mat ppg_y;      // cached recognizer outputs (the recognizer is frozen,
  Mat ppg_yhat;   // so these never change during training)
};

struct EnhancementPair {
  const Mat* input = nullptr;
  const Mat* target = nullptr;
  PairKind kind = PairKind::Identity;
};

// <y,y> or <yhat,y>, each with probability one half.
inline EnhancementPair samplePair(std::mt19937& rng, const SeExample& ex) {
  require(ex.smspec.size() > 0, ErrorCode::MissingFeature,
          "no SMSPEC features for " + ex.utt_id + "; run gen-smspec first");
  std::uniform_real_distribution<float> coin(0.0f, 1.0f);
  EnhancementPair pair;
  pair.target = &ex.y_mel;
  if (coin(rng) < 0.5f) {
    pair.kind = PairKind::Identity;
    pair.input = &ex.y_mel;
  } else {
    pair.kind = PairKind::Synth;
    pair.input = &ex.smspec;
  }
  return pair;
}

class TacoSeModel {
 public:
  TacoSeModel() = default;

  static TacoSeModel build(std::shared_ptr<const pr::PrModel> recognizer,
                           const syn::SynthesizerModel& donor) {
    require(recognizer != nullptr, ErrorCode::InvalidInput, "recognizer required");
    require(recognizer->config().numClasses() == donor.config().ppg_dim, ErrorCode::ConfigMismatch,
            "recognizer classes != synthesizer ppg_dim");
    require(recognizer->config().input_bands == donor.config().mel_bands,
            ErrorCode::ConfigMismatch, "recognizer bands != synthesizer mel bands");
    TacoSeModel m;
    m.pr_ = std::move(recognizer);
    m.syn_ = donor;  // weight copy; diverges from the conversion synthesizer once trained
    return m;
  }

  const pr::PrModel& recognizer() const { return *pr_; }
  std::shared_ptr<const pr::PrModel> recognizerPtr() const { return pr_; }
  syn::SynthesizerModel& synthesizer() { return syn_; }
  const syn::SynthesizerModel& synthesizer() const { return syn_; }

  uint64_t recognizerChecksum() const { return pr_->weightChecksum(); }

  // m -> PPG -> spectrograms, with the synthesizer's constant stop-token rule,
  // so output frames always equal input frames.
  syn::SynthOutput enhanceFull(const audio::MelSpectrogram& m) const {
    syn::SynthOutput out = syn_.synthesize(pr_->extractPpg(m));
    out.mel.role = audio::MelRole::Enhanced;
    return out;
  }

  audio::MelSpectrogram enhance(const audio::MelSpectrogram& m) const {
    return enhanceFull(m).mel;
  }

 private:
  std::shared_ptr<const pr::PrModel> pr_;
  syn::SynthesizerModel syn_;
};

struct SmspecStatus {
  std::string utt_id;
  bool ok = false;
  std::string message;
  int frames = 0;
};

// Writes "<utt_id>.smspec" (TVCF) plus sidecar for every manifest utterance:
// yhat = synthesize(extract_ppg(y_mel)), same frame count as y. Failures are
// recorded and skipped rather than aborting the batch.
inline std::vector<SmspecStatus> generateSmspecCorpus(
    const pr::PrModel& recognizer, const syn::SynthesizerModel& synth,
    const io::DatasetManifest& manifest, const audio::FeatureConfig& fcfg,
    const std::filesystem::path& out_dir, const std::string& generator_checkpoint_id) {
  manifest.requireNonEmpty();
  std::filesystem::create_directories(out_dir);
  std::vector<SmspecStatus> statuses;
  for (const auto& rec : manifest.records) {
    SmspecStatus st;
    st.utt_id = rec.utt_id;
    try {
      const io::WavData wav = io::readWav(manifest.audioPath(rec));
      const audio::MelSpectrogram mel =
          audio::waveformToMelspec({wav.samples, wav.sample_rate}, fcfg);
      const syn::SynthOutput out = synth.synthesize(recognizer.extractPpg(mel));
      require(out.mel.values.rows() == mel.values.rows(), ErrorCode::ShapeError,
              "SMSPEC frame count drifted");
      nlohmann::json sidecar{{"role", audio::melRoleName(audio::MelRole::SynthYhat)},
                             {"utt_id", rec.utt_id},
                             {"frames", out.mel.values.rows()},
                             {"feature_params", fcfg.toJson()},
                             {"feature_hash", fcfg.hashHex()},
                             {"generator_checkpoint_id", generator_checkpoint_id}};
      io::writeTvcf(out_dir / (rec.utt_id + ".smspec"), out.mel.values, sidecar);
      st.ok = true;
      st.frames = static_cast<int>(out.mel.values.rows());
    } catch (const std::exception& e) {
      st.ok = false;
      st.message = e.what();
    }
    statuses.push_back(std::move(st));
  }
  return statuses;
}

// Loads <y, yhat> training material; requires the SMSPEC corpus to exist and
// match the feature recipe. If required_provenance is set, stale SMSPECs from
// any other generator are rejected.
inline std::vector<SeExample> loadSeDataset(const io::DatasetManifest& manifest,
                                            const audio::FeatureConfig& fcfg,
                                            const pr::PrModel& recognizer,
                                            const std::filesystem::path& smspec_dir,
                                            const std::string& required_provenance = "") {
  manifest.requireNonEmpty();
  std::vector<SeExample> out;
  for (const auto& rec : manifest.records) {
    const std::filesystem::path sm_path = smspec_dir / (rec.utt_id + ".smspec");
    require(std::filesystem::exists(sm_path), ErrorCode::MissingFeature,
            "missing SMSPEC for " + rec.utt_id + "; run gen-smspec first");
    const nlohmann::json sidecar = io::readSidecar(sm_path);
    require(sidecar.value("feature_hash", "") == fcfg.hashHex(), ErrorCode::ConfigMismatch,
            "SMSPEC feature parameters differ from the pipeline config for " + rec.utt_id);
    if (!required_provenance.empty()) {
      const std::string got = sidecar.value("generator_checkpoint_id", "");
      require(got == required_provenance, ErrorCode::MissingFeature,
              "stale SMSPEC for " + rec.utt_id + ": generated by checkpoint " + got +
                  ", expected " + required_provenance);
    }

    SeExample ex;
    ex.utt_id = rec.utt_id;
    const io::WavData wav = io::readWav(manifest.audioPath(rec));
    const audio::Waveform w{wav.samples, wav.sample_rate};
    ex.y_mel = audio::waveformToMelspec(w, fcfg).values;
    ex.y_lin = audio::waveformToLinspec(w, fcfg).values;
    ex.smspec = io::readTvcf(sm_path);
    require(ex.smspec.rows() == ex.y_mel.rows(), ErrorCode::AlignmentError,
            "SMSPEC frame count mismatch for " + rec.utt_id);
    audio::MelSpectrogram mel_y{ex.y_mel, fcfg.hop, audio::MelRole::TrueY};
    audio::MelSpectrogram mel_s{ex.smspec, fcfg.hop, audio::MelRole::SynthYhat};
    ex.ppg_y = recognizer.extractPpg(mel_y).posteriors;
    ex.ppg_yhat = recognizer.extractPpg(mel_s).posteriors;
    out.push_back(std::move(ex));
  }
  return out;
}

struct SeTrainHyper {
  int steps = 10000;
  int batch_size = 5;
  nn::LinearDecayLr lr{0.0005f, 0.00005f, 10000};
  syn::ScheduledSamplingSchedule schedule{1.0f, 0.33f, 10000};
  float clip_norm = 1.0f;
  uint64_t seed = 1;
};

struct SeTrainReport {
  std::vector<syn::SynStepLoss> history;
  int steps_run = 0;
};

// Stochastic realization of the two-term enhancement objective: each example
// draws <y,y> or <yhat,y> with probability one half, and the plain Tacotron
// loss is applied to the drawn pair. The recognizer never receives gradients;
// its cached PPGs are constants of the graph.
inline SeTrainReport trainTacoSe(
    TacoSeModel& model, const std::vector<SeExample>& data, const SeTrainHyper& hyper,
    const std::function<bool(int step, const syn::SynStepLoss&)>& progress = nullptr) {
  require(!data.empty(), ErrorCode::InvalidInput, "no training utterances");
  for (const auto& ex : data)
    require(ex.smspec.size() > 0, ErrorCode::MissingFeature,
            "no SMSPEC features for " + ex.utt_id + "; run gen-smspec first");

  std::mt19937 rng(static_cast<uint32_t>(hyper.seed * 0xbf58476d1ce4e5b9ull + 11));
  nn::Adam opt(nn::AdamConfig{.clip_norm = hyper.clip_norm});
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();

  SeTrainReport report;
  for (int step = 0; step < hyper.steps; ++step) {
    const int bs = std::min<int>(hyper.batch_size, static_cast<int>(data.size()));
    std::vector<syn::SynExample> staged(static_cast<size_t>(bs));
    std::vector<const syn::SynExample*> batch;
    for (int b = 0; b < bs; ++b) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const SeExample& ex = data[order[cursor++]];
      const EnhancementPair pair = samplePair(rng, ex);
      syn::SynExample& se = staged[static_cast<size_t>(b)];
      se.utt_id = ex.utt_id;
      se.ppg = pair.kind == PairKind::Identity ? ex.ppg_y : ex.ppg_yhat;
      se.mel = ex.y_mel;
      se.lin = ex.y_lin;
      batch.push_back(&se);
    }
    const syn::SynStepLoss loss =
        model.synthesizer().trainStep(batch, hyper.schedule, step, opt, hyper.lr.at(step), rng);
    report.history.push_back(loss);
    report.steps_run = step + 1;
    if (progress && !progress(step, loss)) break;
  }
  return report;
}

}  // namespace tacovc::se
