#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tacovc/audio.hpp"
#include "tacovc/checkpoint.hpp"
#include "tacovc/enhancer.hpp"
#include "tacovc/manifest.hpp"
#include "tacovc/phones.hpp"
#include "tacovc/recognizer.hpp"
#include "tacovc/synthesizer.hpp"
#include "tacovc/vocoder.hpp"
#include "tacovc/wav.hpp"

namespace tacovc::pipeline {

namespace fs = std::filesystem;

// Feature parameters live in exactly one place and their hash is embedded in
// every checkpoint and feature sidecar; convert refuses to combine artifacts
// with differing hashes.
struct PipelineConfig {
  audio::FeatureConfig features;
  uint64_t seed = 1;
  std::string preset = "desk";

  pr::PrConfig pr_cfg;
  syn::SynthesizerConfig syn_cfg;
  voc::VocoderConfig voc_cfg;

  pr::PrTrainHyper pr_train;
  syn::SynTrainHyper syn_train;
  se::SeTrainHyper se_train;
  voc::VocTrainHyper voc_train{.steps = 20000, .crop_frames = 6};

  static PipelineConfig desk() {
    PipelineConfig c;
    c.pr_train.steps = 2000;
    c.pr_train.lr = {1e-3f, 1e-4f, 2000};
    c.syn_train.steps = 10000;
    c.syn_train.lr = {0.002f, 0.0002f, 10000};
    c.syn_train.schedule = {1.0f, 0.33f, 10000};
    c.se_train.steps = 10000;
    c.se_train.lr = {0.0005f, 0.00005f, 10000};
    c.se_train.schedule = {1.0f, 0.33f, 10000};
    c.voc_train.steps = 20000;
    c.voc_train.lr = {5e-4f, 5e-5f, 20000};
    return c;
  }

  static PipelineConfig forPreset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") {
      PipelineConfig c = desk();
      c.preset = "paper";
      c.pr_cfg = pr::PrConfig::paperPreset(61);
      c.syn_cfg = syn::SynthesizerConfig::paperPreset(62);
      c.voc_cfg = voc::VocoderConfig::paperPreset();
      return c;
    }
    raise(ErrorCode::InvalidConfig, "unknown preset: " + name + " (expected desk or paper)");
  }

  nlohmann::json toJson() const {
    return {{"features", features.toJson()},
            {"seed", seed},
            {"preset", preset},
            {"pr", {{"steps", pr_train.steps},
                    {"batch_size", pr_train.batch_size},
                    {"lr_init", pr_train.lr.init},
                    {"lr_final", pr_train.lr.final_value}}},
            {"syn", {{"steps", syn_train.steps},
                     {"batch_size", syn_train.batch_size},
                     {"lr_init", syn_train.lr.init},
                     {"lr_final", syn_train.lr.final_value},
                     {"schedule", syn_train.schedule.toJson()}}},
            {"se", {{"steps", se_train.steps},
                    {"batch_size", se_train.batch_size},
                    {"lr_init", se_train.lr.init},
                    {"lr_final", se_train.lr.final_value},
                    {"schedule", se_train.schedule.toJson()}}},
            {"voc", {{"steps", voc_train.steps},
                     {"crop_frames", voc_train.crop_frames},
                     {"lr_init", voc_train.lr.init},
                     {"lr_final", voc_train.lr.final_value}}}};
  }

  static PipelineConfig fromJson(const nlohmann::json& j) {
    PipelineConfig c = forPreset(j.value("preset", "desk"));
    if (j.contains("features")) c.features = audio::FeatureConfig::fromJson(j.at("features"));
    c.seed = j.value("seed", uint64_t{1});
    if (j.contains("pr")) {
      const auto& p = j.at("pr");
      c.pr_train.steps = p.value("steps", c.pr_train.steps);
      c.pr_train.batch_size = p.value("batch_size", c.pr_train.batch_size);
      c.pr_train.lr.init = p.value("lr_init", c.pr_train.lr.init);
      c.pr_train.lr.final_value = p.value("lr_final", c.pr_train.lr.final_value);
      c.pr_train.lr.decay_steps = c.pr_train.steps;
    }
    if (j.contains("syn")) {
      const auto& p = j.at("syn");
      c.syn_train.steps = p.value("steps", c.syn_train.steps);
      c.syn_train.batch_size = p.value("batch_size", c.syn_train.batch_size);
      c.syn_train.lr.init = p.value("lr_init", c.syn_train.lr.init);
      c.syn_train.lr.final_value = p.value("lr_final", c.syn_train.lr.final_value);
      c.syn_train.lr.decay_steps = c.syn_train.steps;
      if (p.contains("schedule"))
        c.syn_train.schedule = syn::ScheduledSamplingSchedule::fromJson(p.at("schedule"));
      else
        c.syn_train.schedule.decay_steps = c.syn_train.steps;
    }
    if (j.contains("se")) {
      const auto& p = j.at("se");
      c.se_train.steps = p.value("steps", c.se_train.steps);
      c.se_train.batch_size = p.value("batch_size", c.se_train.batch_size);
      c.se_train.lr.init = p.value("lr_init", c.se_train.lr.init);
      c.se_train.lr.final_value = p.value("lr_final", c.se_train.lr.final_value);
      c.se_train.lr.decay_steps = c.se_train.steps;
      if (p.contains("schedule"))
        c.se_train.schedule = syn::ScheduledSamplingSchedule::fromJson(p.at("schedule"));
      else
        c.se_train.schedule.decay_steps = c.se_train.steps;
    }
    if (j.contains("voc")) {
      const auto& p = j.at("voc");
      c.voc_train.steps = p.value("steps", c.voc_train.steps);
      c.voc_train.crop_frames = p.value("crop_frames", c.voc_train.crop_frames);
      c.voc_train.lr.init = p.value("lr_init", c.voc_train.lr.init);
      c.voc_train.lr.final_value = p.value("lr_final", c.voc_train.lr.final_value);
      c.voc_train.lr.decay_steps = c.voc_train.steps;
    }
    return c;
  }
};

// ---------------------------------------------------------------------------
// Checkpoint plumbing per network kind
// ---------------------------------------------------------------------------

inline nlohmann::json checkpointMeta(const std::string& kind, const audio::FeatureConfig& f) {
  return {{"kind", kind},
          {"format_version", 1},
          {"feature_params", f.toJson()},
          {"feature_hash", f.hashHex()}};
}

inline void requireKind(const io::Checkpoint& ck, const std::string& kind,
                        const std::string& what) {
  require(ck.config.value("kind", "") == kind, ErrorCode::ConfigMismatch,
          what + ": expected a '" + kind + "' checkpoint, found '" +
              ck.config.value("kind", "?") + "'");
}

inline void savePrCheckpoint(const fs::path& path, const pr::PrModel& model,
                             const pr::PhoneInventory& inventory,
                             const audio::FeatureConfig& fcfg, int train_steps) {
  nlohmann::json meta = checkpointMeta("pr", fcfg);
  meta["model"] = model.config().toJson();
  meta["inventory"] = inventory.toJson();
  meta["train_steps"] = train_steps;
  io::saveCheckpoint(path, meta, model.params());
}

struct LoadedPr {
  std::shared_ptr<pr::PrModel> model;
  pr::PhoneInventory inventory;
  audio::FeatureConfig features;
  std::string id;
};

inline LoadedPr loadPrCheckpoint(const fs::path& path) {
  const io::Checkpoint ck = io::loadCheckpoint(path);
  requireKind(ck, "pr", path.string());
  LoadedPr out;
  out.features = audio::FeatureConfig::fromJson(ck.config.at("feature_params"));
  out.inventory = pr::PhoneInventory::fromJson(ck.config.at("inventory"));
  auto model = std::make_shared<pr::PrModel>(
      pr::PrModel::build(pr::PrConfig::fromJson(ck.config.at("model")), /*seed=*/0));
  io::loadParamsInto(ck, model->params());
  out.model = std::move(model);
  out.id = io::checkpointId(path);
  return out;
}

inline void saveSynCheckpoint(const fs::path& path, const syn::SynthesizerModel& model,
                              const audio::FeatureConfig& fcfg, const std::string& speaker,
                              int train_steps, const syn::ScheduledSamplingSchedule& schedule) {
  nlohmann::json meta = checkpointMeta("syn", fcfg);
  meta["model"] = model.config().toJson();
  meta["speaker"] = speaker;
  meta["train_steps"] = train_steps;
  meta["schedule"] = schedule.toJson();
  io::saveCheckpoint(path, meta, model.params());
}

struct LoadedSyn {
  syn::SynthesizerModel model;
  audio::FeatureConfig features;
  std::string speaker;
  std::string id;
};

inline LoadedSyn loadSynCheckpoint(const fs::path& path) {
  const io::Checkpoint ck = io::loadCheckpoint(path);
  requireKind(ck, "syn", path.string());
  LoadedSyn out;
  out.features = audio::FeatureConfig::fromJson(ck.config.at("feature_params"));
  out.speaker = ck.config.value("speaker", "");
  out.model = syn::SynthesizerModel::build(
      syn::SynthesizerConfig::fromJson(ck.config.at("model")), /*seed=*/0);
  io::loadParamsInto(ck, out.model.params());
  out.id = io::checkpointId(path);
  return out;
}

inline void saveSeCheckpoint(const fs::path& path, const se::TacoSeModel& model,
                             const audio::FeatureConfig& fcfg, const std::string& donor_pr_id,
                             const std::string& speaker, int train_steps) {
  nlohmann::json meta = checkpointMeta("se", fcfg);
  meta["model"] = model.synthesizer().config().toJson();
  meta["donor_pr_id"] = donor_pr_id;
  meta["speaker"] = speaker;
  meta["train_steps"] = train_steps;
  io::saveCheckpoint(path, meta, model.synthesizer().params());
}

struct LoadedSe {
  se::TacoSeModel model;
  audio::FeatureConfig features;
  std::string donor_pr_id;
  std::string id;
};

inline LoadedSe loadSeCheckpoint(const fs::path& path, std::shared_ptr<const pr::PrModel> pr_model,
                                 const std::string& pr_id) {
  const io::Checkpoint ck = io::loadCheckpoint(path);
  requireKind(ck, "se", path.string());
  LoadedSe out;
  out.features = audio::FeatureConfig::fromJson(ck.config.at("feature_params"));
  out.donor_pr_id = ck.config.value("donor_pr_id", "");
  require(out.donor_pr_id == pr_id, ErrorCode::ConfigMismatch,
          "Taco-SE checkpoint was built against recognizer " + out.donor_pr_id +
              " but the pipeline provides " + pr_id);
  syn::SynthesizerModel inner = syn::SynthesizerModel::build(
      syn::SynthesizerConfig::fromJson(ck.config.at("model")), /*seed=*/0);
  io::loadParamsInto(ck, inner.params());
  out.model = se::TacoSeModel::build(std::move(pr_model), inner);
  out.id = io::checkpointId(path);
  return out;
}

inline void saveVocCheckpoint(const fs::path& path, const voc::VocoderModel& model,
                              const audio::FeatureConfig& fcfg, const std::string& speaker,
                              int train_steps) {
  nlohmann::json meta = checkpointMeta("voc", fcfg);
  meta["model"] = model.config().toJson();
  meta["speaker"] = speaker;
  meta["train_steps"] = train_steps;
  io::saveCheckpoint(path, meta, model.params());
}

struct LoadedVoc {
  voc::VocoderModel model;
  audio::FeatureConfig features;
  std::string id;
};

inline LoadedVoc loadVocCheckpoint(const fs::path& path) {
  const io::Checkpoint ck = io::loadCheckpoint(path);
  requireKind(ck, "voc", path.string());
  LoadedVoc out;
  out.features = audio::FeatureConfig::fromJson(ck.config.at("feature_params"));
  out.model =
      voc::VocoderModel::build(voc::VocoderConfig::fromJson(ck.config.at("model")), /*seed=*/0);
  io::loadParamsInto(ck, out.model.params());
  out.id = io::checkpointId(path);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint set + end-to-end conversion
// ---------------------------------------------------------------------------

struct CheckpointSet {
  fs::path pr, syn, se, voc;

  static CheckpointSet inDir(const fs::path& root) {
    return {root / "pr.ckpt", root / "syn.ckpt", root / "se.ckpt", root / "voc.ckpt"};
  }
};

struct LoadedPipeline {
  audio::FeatureConfig features;
  pr::PhoneInventory inventory;
  std::shared_ptr<pr::PrModel> pr;
  syn::SynthesizerModel syn;
  std::optional<se::TacoSeModel> se;
  std::optional<voc::VocoderModel> voc;
  std::string pr_id, syn_id, se_id, voc_id;
  std::string target_speaker;
};

// Loads and cross-validates a checkpoint set. All feature-parameter hashes
// must agree; this runs before any network executes.
inline LoadedPipeline loadPipeline(const CheckpointSet& set, bool need_se = true,
                                   bool need_voc = true) {
  LoadedPr lpr = loadPrCheckpoint(set.pr);
  LoadedSyn lsyn = loadSynCheckpoint(set.syn);
  LoadedPipeline out;
  out.features = lpr.features;
  const std::string want = out.features.hashHex();
  auto checkHash = [&](const audio::FeatureConfig& f, const fs::path& which) {
    require(f.hashHex() == want, ErrorCode::ConfigMismatch,
            "feature parameters of " + which.string() +
                " differ from the recognizer's; refusing to mix recipes");
  };
  checkHash(lsyn.features, set.syn);

  out.inventory = std::move(lpr.inventory);
  out.pr = std::move(lpr.model);
  out.pr_id = lpr.id;
  out.syn = std::move(lsyn.model);
  out.syn_id = lsyn.id;
  out.target_speaker = lsyn.speaker;
  require(out.pr->config().numClasses() == out.syn.config().ppg_dim, ErrorCode::ConfigMismatch,
          "recognizer class count != synthesizer PPG width");

  if (need_se) {
    LoadedSe lse = loadSeCheckpoint(set.se, out.pr, out.pr_id);
    checkHash(lse.features, set.se);
    out.se = std::move(lse.model);
    out.se_id = lse.id;
  }
  if (need_voc) {
    LoadedVoc lvoc = loadVocCheckpoint(set.voc);
    checkHash(lvoc.features, set.voc);
    require(lvoc.model.config().hop == out.features.hop, ErrorCode::ConfigMismatch,
            "vocoder hop != feature hop");
    out.voc = std::move(lvoc.model);
    out.voc_id = lvoc.id;
  }
  return out;
}

enum class VocoderKind { WaveNet, GriffinLim };

struct ConvertOptions {
  bool no_enhance = false;        // ablation: skip Taco-SE
  VocoderKind vocoder = VocoderKind::WaveNet;
  voc::GenMode mode = voc::GenMode::Argmax;
  uint64_t seed = 0;
  int griffinlim_iters = 60;
};

struct ConvertResult {
  audio::Waveform wav;
  int source_frames = 0;
  bool enhanced = false;
};

// waveform -> mel -> PPG -> synthesize -> enhance -> vocode. Output length is
// source mel frames * hop samples by the chained length contracts.
inline ConvertResult convert(const audio::Waveform& source_in, const LoadedPipeline& p,
                             const ConvertOptions& opt) {
  audio::Waveform source = source_in;
  if (source.sample_rate != p.features.sample_rate)
    source = audio::resample(source, p.features.sample_rate);

  const audio::MelSpectrogram mel = audio::waveformToMelspec(source, p.features);
  const pr::Ppg ppg = p.pr->extractPpg(mel);
  const syn::SynthOutput synth = p.syn.synthesize(ppg);

  audio::MelSpectrogram final_mel = synth.mel;
  audio::LinearSpectrogram final_lin = synth.lin;
  bool enhanced = false;
  if (!opt.no_enhance) {
    require(p.se.has_value(), ErrorCode::MissingCheckpoint, "no Taco-SE checkpoint loaded");
    // the enhancer consumes the synthesized spectrogram, not the source
    const syn::SynthOutput se_out = p.se->enhanceFull(synth.mel);
    final_mel = se_out.mel;
    final_lin = se_out.lin;
    enhanced = true;
  }

  ConvertResult res;
  res.source_frames = static_cast<int>(mel.values.rows());
  res.enhanced = enhanced;
  if (opt.vocoder == VocoderKind::WaveNet) {
    require(p.voc.has_value(), ErrorCode::MissingCheckpoint, "no vocoder checkpoint loaded");
    res.wav = p.voc->generate(final_mel.values, opt.mode, opt.seed);
  } else {
    res.wav = audio::griffinLim(final_lin, p.features, opt.griffinlim_iters);
  }
  require(res.wav.samples.size() ==
              static_cast<size_t>(res.source_frames) * static_cast<size_t>(p.features.hop),
          ErrorCode::ShapeError, "output length contract violated");
  return res;
}

inline std::string defaultOutputName(const std::string& utt_id, const std::string& source_spk,
                                     const std::string& target_spk) {
  return utt_id + "__" + source_spk + "_to_" + target_spk + ".wav";
}

// ---------------------------------------------------------------------------
// Verb-level helpers shared by the CLI and the acceptance suite
// ---------------------------------------------------------------------------

struct PreparedUtterance {
  std::string utt_id;
  std::string speaker;
  audio::Waveform wav;
  nn::Mat mel;
  nn::Mat lin;
};

inline std::vector<PreparedUtterance> prepareUtterances(const io::DatasetManifest& manifest,
                                                        const audio::FeatureConfig& fcfg,
                                                        bool need_lin = true) {
  manifest.requireNonEmpty();
  std::vector<PreparedUtterance> out;
  for (const auto& rec : manifest.records) {
    PreparedUtterance u;
    u.utt_id = rec.utt_id;
    u.speaker = rec.speaker;
    const io::WavData wav = io::readWav(manifest.audioPath(rec));
    u.wav = {wav.samples, wav.sample_rate};
    if (u.wav.sample_rate != fcfg.sample_rate) u.wav = audio::resample(u.wav, fcfg.sample_rate);
    u.mel = audio::waveformToMelspec(u.wav, fcfg).values;
    if (need_lin) u.lin = audio::waveformToLinspec(u.wav, fcfg).values;
    out.push_back(std::move(u));
  }
  return out;
}

inline void runFeatures(const io::DatasetManifest& manifest, const audio::FeatureConfig& fcfg,
                        const fs::path& out_dir) {
  const auto prepared = prepareUtterances(manifest, fcfg);
  fs::create_directories(out_dir);
  for (const auto& u : prepared) {
    nlohmann::json side{{"utt_id", u.utt_id},
                        {"feature_params", fcfg.toJson()},
                        {"feature_hash", fcfg.hashHex()},
                        {"frames", u.mel.rows()}};
    side["role"] = "TRUE_Y";
    io::writeTvcf(out_dir / (u.utt_id + ".mel.tvcf"), u.mel, side);
    side["role"] = "LINEAR";
    io::writeTvcf(out_dir / (u.utt_id + ".lin.tvcf"), u.lin, side);
  }
}

inline std::vector<syn::SynExample> buildSynDataset(const std::vector<PreparedUtterance>& utts,
                                                    const pr::PrModel& recognizer,
                                                    const audio::FeatureConfig& fcfg) {
  std::vector<syn::SynExample> out;
  for (const auto& u : utts) {
    syn::SynExample ex;
    ex.utt_id = u.utt_id;
    audio::MelSpectrogram mel{u.mel, fcfg.hop, audio::MelRole::TrueY};
    ex.ppg = recognizer.extractPpg(mel).posteriors;
    ex.mel = u.mel;
    ex.lin = u.lin;
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<voc::VocExample> buildVocDataset(const std::vector<PreparedUtterance>& utts,
                                                    const audio::FeatureConfig& fcfg) {
  std::vector<voc::VocExample> out;
  for (const auto& u : utts) out.push_back(voc::makeVocExample(u.utt_id, u.wav, fcfg));
  return out;
}

inline std::string manifestSpeaker(const io::DatasetManifest& manifest) {
  return manifest.records.empty() ? "" : manifest.records.front().speaker;
}

}  // namespace tacovc::pipeline
