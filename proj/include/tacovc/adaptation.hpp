#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tacovc/pipeline.hpp"

namespace tacovc::adapt {

namespace fs = std::filesystem;

// Limited-data speaker adaptation. Stage order is fixed:
//   (1) fine-tune the synthesizer with a fresh scheduled-sampling decay,
//   (2) regenerate the target SMSPEC corpus with the fine-tuned synthesizer,
//   (3) fine-tune Taco-SE against that corpus (stale SMSPECs are refused),
//   (4) fine-tune the vocoder.
// The recognizer is speaker independent and is copied byte-for-byte. A stage
// with zero steps copies its base checkpoint byte-for-byte, so an all-zero
// plan is the identity on every checkpoint.

struct AdaptationPlan {
  int syn_steps = 10000;
  int se_steps = 10000;
  int voc_steps = 20000;
  float sampling_final_rate = 0.33f;       // fresh decay from 1.0 over each stage
  bool vocoder_condition_on_enhanced = false;

  void validate() const {
    require(syn_steps >= 0 && se_steps >= 0 && voc_steps >= 0, ErrorCode::InvalidInput,
            "adaptation step counts must be >= 0");
    require(sampling_final_rate > 0.0f && sampling_final_rate <= 1.0f, ErrorCode::InvalidConfig,
            "final sampling rate must be in (0, 1]");
  }
};

struct StageRecord {
  int stage = 0;
  std::string name;
  std::string base_id;
  std::string out_id;
  int steps = 0;
  long wall_ms = 0;
};

struct AdaptationResult {
  pipeline::CheckpointSet checkpoints;
  std::vector<StageRecord> log;
  fs::path log_path;
};

namespace detail {

inline long nowMs() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

inline void appendLog(const fs::path& log_path, const StageRecord& rec) {
  std::ofstream out(log_path, std::ios::app);
  require(out.good(), ErrorCode::IoError, "cannot append adaptation log: " + log_path.string());
  nlohmann::json j{{"stage", rec.stage},   {"name", rec.name},   {"base_checkpoint", rec.base_id},
                   {"out_checkpoint", rec.out_id}, {"steps", rec.steps}, {"wall_ms", rec.wall_ms}};
  out << j.dump() << "\n";
}

}  // namespace detail

// Regenerates SMSPECs for the target set with the (already fine-tuned)
// synthesizer; the sidecars carry its checkpoint id so stage (3) can verify
// freshness.
inline std::vector<se::SmspecStatus> regenerateTargetSmspecs(
    const syn::SynthesizerModel& fine_tuned_syn, const std::string& fine_tuned_syn_id,
    const pr::PrModel& recognizer, const io::DatasetManifest& target_manifest,
    const audio::FeatureConfig& fcfg, const fs::path& smspec_dir) {
  return se::generateSmspecCorpus(recognizer, fine_tuned_syn, target_manifest, fcfg, smspec_dir,
                                  fine_tuned_syn_id);
}

inline AdaptationResult adapt(const pipeline::CheckpointSet& base,
                              const io::DatasetManifest& target_manifest,
                              const AdaptationPlan& plan, const pipeline::PipelineConfig& cfg,
                              const fs::path& out_dir) {
  plan.validate();
  target_manifest.requireNonEmpty();
  for (const fs::path& p : {base.pr, base.syn, base.se, base.voc})
    require(fs::exists(p), ErrorCode::MissingCheckpoint, "missing base checkpoint: " + p.string());

  fs::create_directories(out_dir);
  AdaptationResult result;
  result.checkpoints = pipeline::CheckpointSet::inDir(out_dir);
  result.log_path = out_dir / "adaptation_log.jsonl";

  pipeline::LoadedPipeline pipe = pipeline::loadPipeline(base);
  const auto utts = pipeline::prepareUtterances(target_manifest, pipe.features);
  const std::string target_speaker = pipeline::manifestSpeaker(target_manifest);
  const fs::path smspec_dir = out_dir / "smspec";

  auto record = [&](int stage, const std::string& name, const std::string& base_id,
                    const fs::path& out_path, int steps, long t0) {
    StageRecord rec{stage, name, base_id, io::checkpointId(out_path), steps,
                    detail::nowMs() - t0};
    detail::appendLog(result.log_path, rec);
    result.log.push_back(rec);
  };

  // Recognizer: speaker independent, copied byte-for-byte.
  {
    const long t0 = detail::nowMs();
    copyFileBytes(base.pr, result.checkpoints.pr);
    record(0, "recognizer-copy", pipe.pr_id, result.checkpoints.pr, 0, t0);
  }

  // Stage 1: synthesizer fine-tune with a fresh linear decay.
  {
    const long t0 = detail::nowMs();
    if (plan.syn_steps == 0) {
      copyFileBytes(base.syn, result.checkpoints.syn);
    } else {
      auto data = pipeline::buildSynDataset(utts, *pipe.pr, pipe.features);
      syn::SynTrainHyper hyper = cfg.syn_train;
      hyper.steps = plan.syn_steps;
      hyper.lr.decay_steps = plan.syn_steps;
      hyper.schedule = {1.0f, plan.sampling_final_rate, plan.syn_steps};
      hyper.seed = cfg.seed + 101;
      syn::trainSynthesizer(pipe.syn, data, hyper);
      pipeline::saveSynCheckpoint(result.checkpoints.syn, pipe.syn, pipe.features, target_speaker,
                                  plan.syn_steps, hyper.schedule);
    }
    record(1, "synthesizer-finetune", pipe.syn_id, result.checkpoints.syn, plan.syn_steps, t0);
  }
  const std::string tuned_syn_id = io::checkpointId(result.checkpoints.syn);

  // Stage 2: regenerate target SMSPECs with the fine-tuned synthesizer.
  const bool need_smspec =
      plan.se_steps > 0 || (plan.voc_steps > 0 && plan.vocoder_condition_on_enhanced);
  if (need_smspec) {
    const long t0 = detail::nowMs();
    const auto statuses = regenerateTargetSmspecs(pipe.syn, tuned_syn_id, *pipe.pr,
                                                  target_manifest, pipe.features, smspec_dir);
    for (const auto& st : statuses)
      require(st.ok, ErrorCode::InvalidInput, "SMSPEC regeneration failed for " + st.utt_id +
                                                  ": " + st.message);
    StageRecord rec{2, "smspec-regen", tuned_syn_id, tuned_syn_id,
                    static_cast<int>(statuses.size()), detail::nowMs() - t0};
    detail::appendLog(result.log_path, rec);
    result.log.push_back(rec);
  }

  // Stage 3: Taco-SE fine-tune; fails fast on stale SMSPEC provenance.
  {
    const long t0 = detail::nowMs();
    if (plan.se_steps == 0) {
      copyFileBytes(base.se, result.checkpoints.se);
    } else {
      auto data = se::loadSeDataset(target_manifest, pipe.features, *pipe.pr, smspec_dir,
                                    /*required_provenance=*/tuned_syn_id);
      se::SeTrainHyper hyper = cfg.se_train;
      hyper.steps = plan.se_steps;
      hyper.lr.decay_steps = plan.se_steps;
      hyper.schedule = {1.0f, plan.sampling_final_rate, plan.se_steps};
      hyper.seed = cfg.seed + 202;
      se::trainTacoSe(*pipe.se, data, hyper);
      pipeline::saveSeCheckpoint(result.checkpoints.se, *pipe.se, pipe.features, pipe.pr_id,
                                 target_speaker, plan.se_steps);
    }
    record(3, "taco-se-finetune", pipe.se_id, result.checkpoints.se, plan.se_steps, t0);
  }

  // Stage 4: vocoder fine-tune, conditioned on true target mels by default.
  {
    const long t0 = detail::nowMs();
    if (plan.voc_steps == 0) {
      copyFileBytes(base.voc, result.checkpoints.voc);
    } else {
      auto data = pipeline::buildVocDataset(utts, pipe.features);
      if (plan.vocoder_condition_on_enhanced) {
        for (auto& ex : data) {
          const Eigen::MatrixXf sm = io::readTvcf(smspec_dir / (ex.utt_id + ".smspec"));
          audio::MelSpectrogram m{sm, pipe.features.hop, audio::MelRole::SynthYhat};
          ex.mel = pipe.se->enhance(m).values;
        }
      }
      voc::VocTrainHyper hyper = cfg.voc_train;
      hyper.steps = plan.voc_steps;
      hyper.lr.decay_steps = plan.voc_steps;
      hyper.seed = cfg.seed + 303;
      voc::trainVocoder(*pipe.voc, data, hyper);
      pipeline::saveVocCheckpoint(result.checkpoints.voc, *pipe.voc, pipe.features,
                                  target_speaker, plan.voc_steps);
    }
    record(4, "vocoder-finetune", pipe.voc_id, result.checkpoints.voc, plan.voc_steps, t0);
  }

  return result;
}

}  // namespace tacovc::adapt
