// Batch front end for the voice-conversion pipeline: dataset ingestion,
// training orchestration for the four networks, speaker adaptation, and
// end-to-end conversion.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "tacovc/adaptation.hpp"
#include "tacovc/pipeline.hpp"
#include "tacovc/toy.hpp"

namespace fs = std::filesystem;
using namespace tacovc;

namespace {

struct GlobalOpts {
  uint64_t seed = 1;
  std::string preset = "desk";
  std::string config_path;
  bool quiet = false;
};

pipeline::PipelineConfig makeConfig(const GlobalOpts& g) {
  pipeline::PipelineConfig cfg = g.config_path.empty()
                                     ? pipeline::PipelineConfig::forPreset(g.preset)
                                     : pipeline::PipelineConfig::fromJson(
                                           nlohmann::json::parse(readFileBytes(g.config_path)));
  cfg.seed = g.seed;
  if (g.config_path.empty()) cfg.preset = g.preset;
  return cfg;
}

std::string defaultCheckpointRoot() {
  const char* env = std::getenv("TACOVC_CHECKPOINT_ROOT");
  return env ? std::string(env) : std::string("checkpoints");
}

// Aligns the synthesizer/vocoder configs with the feature recipe so one
// pipeline always carries a single parameter set.
void bindConfigsToFeatures(pipeline::PipelineConfig& cfg, const audio::FeatureConfig& f) {
  cfg.features = f;
  cfg.syn_cfg.mel_bands = f.n_mels;
  cfg.syn_cfg.lin_bins = f.nBins();
  cfg.voc_cfg.mel_bands = f.n_mels;
  cfg.voc_cfg.hop = f.hop;
  cfg.voc_cfg.classes = f.mu_channels;
  cfg.voc_cfg.sample_rate = f.sample_rate;
  cfg.pr_cfg.input_bands = f.n_mels;
}

float corpusPer(const io::DatasetManifest& ref, const io::DatasetManifest& hyp,
                const pr::PhoneInventory& inv) {
  std::map<std::string, const io::ManifestRecord*> by_id;
  for (const auto& h : hyp.records) by_id[h.utt_id] = &h;
  long edits = 0, total = 0;
  for (const auto& r : ref.records) {
    require(!r.transcript.empty(), ErrorCode::InvalidInput,
            "reference record " + r.utt_id + " has no transcript");
    const auto it = by_id.find(r.utt_id);
    require(it != by_id.end(), ErrorCode::InvalidInput,
            "hypothesis file lacks utterance " + r.utt_id);
    const auto rf = inv.foldSequence(inv.parseTranscript(r.transcript));
    std::vector<int> hf;
    if (!it->second->transcript.empty())
      hf = inv.foldSequence(inv.parseTranscript(it->second->transcript));
    require(!rf.empty(), ErrorCode::InvalidInput,
            "reference " + r.utt_id + " folds to an empty sequence");
    edits += pr::levenshtein(rf, hf);
    total += static_cast<long>(rf.size());
  }
  return static_cast<float>(edits) / static_cast<float>(total);
}

// Builds an identity inventory from every symbol seen in both files; used
// when eval-per is called without an explicit phone inventory.
pr::PhoneInventory impliedInventory(const io::DatasetManifest& ref,
                                    const io::DatasetManifest& hyp) {
  std::vector<std::string> syms;
  auto absorb = [&](const std::string& text) {
    std::istringstream in(text);
    std::string tok;
    while (in >> tok)
      if (std::find(syms.begin(), syms.end(), tok) == syms.end()) syms.push_back(tok);
  };
  for (const auto& r : ref.records) absorb(r.transcript);
  for (const auto& r : hyp.records) absorb(r.transcript);
  require(!syms.empty(), ErrorCode::InvalidInput, "no phone symbols found");
  return pr::PhoneInventory::identity(syms);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tacovc: trainable voice-conversion pipeline (PPG recognizer, seq2seq "
               "synthesizer, Taco-SE enhancer, autoregressive vocoder)"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the verb

  GlobalOpts g;
  app.add_option("--seed", g.seed, "global random seed");
  app.add_option("--preset", g.preset, "model size preset: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--config", g.config_path, "pipeline config JSON");
  app.add_flag("--quiet", g.quiet, "suppress progress logging");

  auto note = [&](const std::string& line) {
    if (!g.quiet) std::cerr << line << std::endl;
  };

  // make-toy-corpus ----------------------------------------------------
  auto* toy_cmd = app.add_subcommand(
      "make-toy-corpus", "synthesize a deterministic formant-like toy corpus with transcripts");
  std::string toy_out, toy_speaker = "A";
  int toy_count = 10;
  toy_cmd->add_option("--out", toy_out, "output directory")->required();
  toy_cmd->add_option("--speaker", toy_speaker, "toy speaker id (A or B)");
  toy_cmd->add_option("--count", toy_count, "number of utterances");
  toy_cmd->callback([&] {
    toy::ToyCorpusOptions opt;
    opt.speaker = toy_speaker;
    opt.n_utterances = toy_count;
    opt.seed = g.seed;
    const auto manifest = toy::makeToyCorpus(toy_out, opt);
    std::cout << "wrote " << manifest.records.size() << " utterances to " << toy_out << "\n";
  });

  // features ------------------------------------------------------------
  auto* feat_cmd = app.add_subcommand("features", "extract mel/linear TVCF feature files");
  std::string feat_manifest, feat_out;
  feat_cmd->add_option("--manifest", feat_manifest, "dataset manifest (JSON lines)")->required();
  feat_cmd->add_option("--out", feat_out, "output feature directory")->required();
  feat_cmd->callback([&] {
    const auto cfg = makeConfig(g);
    const auto manifest = io::DatasetManifest::load(feat_manifest);
    pipeline::runFeatures(manifest, cfg.features, feat_out);
    std::cout << "extracted features for " << manifest.records.size() << " utterances\n";
  });

  // train-pr ------------------------------------------------------------
  auto* pr_cmd = app.add_subcommand("train-pr", "train the CTC phoneme recognizer");
  std::string pr_manifest, pr_phones, pr_ckpts = defaultCheckpointRoot();
  int pr_steps = -1;
  pr_cmd->add_option("--manifest", pr_manifest, "manifest with phoneme transcripts")->required();
  pr_cmd->add_option("--phones", pr_phones, "phone inventory TSV (symbol<TAB>fold)")->required();
  pr_cmd->add_option("--checkpoints", pr_ckpts, "checkpoint directory");
  pr_cmd->add_option("--steps", pr_steps, "training steps (overrides config)");
  pr_cmd->callback([&] {
    pipeline::PipelineConfig cfg = makeConfig(g);
    bindConfigsToFeatures(cfg, cfg.features);
    const auto inventory = pr::PhoneInventory::loadTsv(pr_phones);
    auto manifest = io::DatasetManifest::load(pr_manifest);
    manifest.requireNonEmpty();
    manifest.requireTranscripts();

    const auto utts = pipeline::prepareUtterances(manifest, cfg.features, /*need_lin=*/false);
    std::vector<pr::PrExample> data;
    for (size_t i = 0; i < utts.size(); ++i)
      data.push_back({utts[i].utt_id, utts[i].mel,
                      inventory.parseTranscript(manifest.records[i].transcript).labels});

    pr::PrConfig mcfg = cfg.pr_cfg;
    mcfg.n_phones = inventory.size();
    pr::PrModel model = pr::PrModel::build(mcfg, cfg.seed);
    pr::PrTrainHyper hyper = cfg.pr_train;
    if (pr_steps >= 0) {
      hyper.steps = pr_steps;
      hyper.lr.decay_steps = pr_steps;
    }
    hyper.seed = cfg.seed;
    const auto report = trainPr(model, data, hyper, [&](int step, float loss) {
      if (step % 100 == 0) note("[train-pr] step " + std::to_string(step) + " loss/frame " +
                                std::to_string(loss));
      return true;
    });
    for (const auto& skipped : report.skipped)
      note("[train-pr] warning: skipped infeasible transcript for " + skipped);

    float per_sum = 0.0f;
    for (const auto& ex : data) {
      audio::MelSpectrogram mel{ex.mel, cfg.features.hop, audio::MelRole::TrueY};
      const auto hyp = pr::greedyDecode(model.extractPpg(mel), model.config().blankId());
      per_sum += pr::per(inventory, pr::PhonemeSequence{ex.labels}, hyp);
    }
    const fs::path out = fs::path(pr_ckpts) / "pr.ckpt";
    pipeline::savePrCheckpoint(out, model, inventory, cfg.features, report.steps_run);
    std::cout << "train PER " << per_sum / static_cast<float>(data.size()) << ", checkpoint "
              << out.string() << "\n";
  });

  // train-syn -----------------------------------------------------------
  auto* syn_cmd = app.add_subcommand("train-syn", "train the PPG-to-spectrogram synthesizer");
  std::string syn_manifest, syn_ckpts = defaultCheckpointRoot();
  int syn_steps = -1;
  syn_cmd->add_option("--manifest", syn_manifest, "single-speaker manifest")->required();
  syn_cmd->add_option("--checkpoints", syn_ckpts, "checkpoint directory (needs pr.ckpt)");
  syn_cmd->add_option("--steps", syn_steps, "training steps (overrides config)");
  syn_cmd->callback([&] {
    pipeline::PipelineConfig cfg = makeConfig(g);
    const auto lpr = pipeline::loadPrCheckpoint(fs::path(syn_ckpts) / "pr.ckpt");
    bindConfigsToFeatures(cfg, lpr.features);
    auto manifest = io::DatasetManifest::load(syn_manifest);
    const auto utts = pipeline::prepareUtterances(manifest, cfg.features);
    const auto data = pipeline::buildSynDataset(utts, *lpr.model, cfg.features);

    syn::SynthesizerConfig mcfg = cfg.syn_cfg;
    mcfg.ppg_dim = lpr.model->config().numClasses();
    syn::SynthesizerModel model = syn::SynthesizerModel::build(mcfg, cfg.seed);
    syn::SynTrainHyper hyper = cfg.syn_train;
    if (syn_steps >= 0) {
      hyper.steps = syn_steps;
      hyper.lr.decay_steps = syn_steps;
      hyper.schedule.decay_steps = syn_steps;
    }
    hyper.seed = cfg.seed;
    const auto report =
        trainSynthesizer(model, data, hyper, [&](int step, const syn::SynStepLoss& loss) {
          if (step % 100 == 0)
            note("[train-syn] step " + std::to_string(step) + " mel L1 " +
                 std::to_string(loss.mel_l1) + " lin L1 " + std::to_string(loss.lin_l1));
          return true;
        });
    const fs::path out = fs::path(syn_ckpts) / "syn.ckpt";
    pipeline::saveSynCheckpoint(out, model, cfg.features, pipeline::manifestSpeaker(manifest),
                                report.steps_run, hyper.schedule);
    std::cout << "final mel L1 " << report.history.back().mel_l1 << ", checkpoint "
              << out.string() << "\n";
  });

  // gen-smspec ----------------------------------------------------------
  auto* sm_cmd = app.add_subcommand("gen-smspec",
                                    "synthesize SMSPEC features for a corpus (Taco-SE input)");
  std::string sm_manifest, sm_ckpts = defaultCheckpointRoot(), sm_out;
  sm_cmd->add_option("--manifest", sm_manifest, "dataset manifest")->required();
  sm_cmd->add_option("--checkpoints", sm_ckpts, "checkpoint directory");
  sm_cmd->add_option("--out", sm_out, "output SMSPEC directory")->required();
  sm_cmd->callback([&] {
    const auto lpr = pipeline::loadPrCheckpoint(fs::path(sm_ckpts) / "pr.ckpt");
    const auto lsyn = pipeline::loadSynCheckpoint(fs::path(sm_ckpts) / "syn.ckpt");
    const auto manifest = io::DatasetManifest::load(sm_manifest);
    const auto statuses = se::generateSmspecCorpus(*lpr.model, lsyn.model, manifest, lpr.features,
                                                   sm_out, lsyn.id);
    int ok = 0;
    for (const auto& st : statuses) {
      if (st.ok)
        ++ok;
      else
        note("[gen-smspec] failed " + st.utt_id + ": " + st.message);
    }
    std::cout << "wrote " << ok << "/" << statuses.size() << " SMSPEC files to " << sm_out
              << "\n";
  });

  // train-se ------------------------------------------------------------
  auto* se_cmd = app.add_subcommand("train-se", "train the Taco-SE speech enhancement network");
  std::string se_manifest, se_ckpts = defaultCheckpointRoot(), se_smspec;
  int se_steps = -1;
  se_cmd->add_option("--manifest", se_manifest, "dataset manifest")->required();
  se_cmd->add_option("--checkpoints", se_ckpts, "checkpoint directory");
  se_cmd->add_option("--smspec", se_smspec, "SMSPEC directory from gen-smspec")->required();
  se_cmd->add_option("--steps", se_steps, "training steps (overrides config)");
  se_cmd->callback([&] {
    pipeline::PipelineConfig cfg = makeConfig(g);
    const auto lpr = pipeline::loadPrCheckpoint(fs::path(se_ckpts) / "pr.ckpt");
    const auto lsyn = pipeline::loadSynCheckpoint(fs::path(se_ckpts) / "syn.ckpt");
    bindConfigsToFeatures(cfg, lpr.features);
    const auto manifest = io::DatasetManifest::load(se_manifest);
    const auto data =
        se::loadSeDataset(manifest, cfg.features, *lpr.model, se_smspec, lsyn.id);

    se::TacoSeModel model = se::TacoSeModel::build(lpr.model, lsyn.model);
    se::SeTrainHyper hyper = cfg.se_train;
    if (se_steps >= 0) {
      hyper.steps = se_steps;
      hyper.lr.decay_steps = se_steps;
      hyper.schedule.decay_steps = se_steps;
    }
    hyper.seed = cfg.seed;
    const auto report =
        trainTacoSe(model, data, hyper, [&](int step, const syn::SynStepLoss& loss) {
          if (step % 100 == 0)
            note("[train-se] step " + std::to_string(step) + " mel L1 " +
                 std::to_string(loss.mel_l1));
          return true;
        });
    const fs::path out = fs::path(se_ckpts) / "se.ckpt";
    pipeline::saveSeCheckpoint(out, model, cfg.features, lpr.id,
                               pipeline::manifestSpeaker(manifest), report.steps_run);
    std::cout << "final mel L1 " << report.history.back().mel_l1 << ", checkpoint "
              << out.string() << "\n";
  });

  // train-vocoder --------------------------------------------------------
  auto* voc_cmd = app.add_subcommand("train-vocoder", "train the autoregressive vocoder");
  std::string voc_manifest, voc_ckpts = defaultCheckpointRoot();
  int voc_steps = -1;
  voc_cmd->add_option("--manifest", voc_manifest, "dataset manifest")->required();
  voc_cmd->add_option("--checkpoints", voc_ckpts, "checkpoint directory");
  voc_cmd->add_option("--steps", voc_steps, "training steps (overrides config)");
  voc_cmd->callback([&] {
    pipeline::PipelineConfig cfg = makeConfig(g);
    const auto lpr = pipeline::loadPrCheckpoint(fs::path(voc_ckpts) / "pr.ckpt");
    bindConfigsToFeatures(cfg, lpr.features);
    const auto manifest = io::DatasetManifest::load(voc_manifest);
    const auto utts = pipeline::prepareUtterances(manifest, cfg.features, /*need_lin=*/false);
    const auto data = pipeline::buildVocDataset(utts, cfg.features);

    voc::VocoderModel model = voc::VocoderModel::build(cfg.voc_cfg, cfg.seed);
    voc::VocTrainHyper hyper = cfg.voc_train;
    if (voc_steps >= 0) {
      hyper.steps = voc_steps;
      hyper.lr.decay_steps = voc_steps;
    }
    hyper.seed = cfg.seed;
    const auto report = trainVocoder(model, data, hyper, [&](int step, float ce) {
      if (step % 200 == 0) note("[train-vocoder] step " + std::to_string(step) + " ce " +
                                std::to_string(ce));
      return true;
    });
    const fs::path out = fs::path(voc_ckpts) / "voc.ckpt";
    pipeline::saveVocCheckpoint(out, model, cfg.features, pipeline::manifestSpeaker(manifest),
                                report.steps_run);
    std::cout << "final ce " << report.ce_history.back() << ", checkpoint " << out.string()
              << "\n";
  });

  // adapt -----------------------------------------------------------------
  auto* adapt_cmd = app.add_subcommand(
      "adapt", "adapt a trained pipeline to a new speaker with limited data");
  std::string ad_manifest, ad_base = defaultCheckpointRoot(), ad_out;
  adapt::AdaptationPlan plan;
  adapt_cmd->add_option("--manifest", ad_manifest, "target-speaker manifest")->required();
  adapt_cmd->add_option("--checkpoints", ad_base, "base checkpoint directory");
  adapt_cmd->add_option("--out", ad_out, "adapted checkpoint directory")->required();
  adapt_cmd->add_option("--syn-steps", plan.syn_steps, "synthesizer fine-tune steps");
  adapt_cmd->add_option("--se-steps", plan.se_steps, "Taco-SE fine-tune steps");
  adapt_cmd->add_option("--voc-steps", plan.voc_steps, "vocoder fine-tune steps");
  adapt_cmd->add_flag("--condition-on-enhanced", plan.vocoder_condition_on_enhanced,
                      "fine-tune the vocoder on enhanced mels instead of true mels");
  adapt_cmd->callback([&] {
    pipeline::PipelineConfig cfg = makeConfig(g);
    const auto manifest = io::DatasetManifest::load(ad_manifest);
    const auto result = adapt::adapt(pipeline::CheckpointSet::inDir(ad_base), manifest, plan,
                                     cfg, ad_out);
    for (const auto& rec : result.log)
      note("[adapt] stage " + std::to_string(rec.stage) + " " + rec.name + " steps " +
           std::to_string(rec.steps) + " -> " + rec.out_id);
    std::cout << "adapted checkpoints in " << ad_out << "\n";
  });

  // convert -----------------------------------------------------------------
  auto* conv_cmd = app.add_subcommand("convert", "convert a source WAV to the target voice");
  std::string cv_in, cv_out, cv_ckpts = defaultCheckpointRoot(), cv_vocoder = "wavenet";
  std::string cv_mode = "argmax", cv_src_speaker = "src";
  bool cv_no_enhance = false;
  conv_cmd->add_option("--in", cv_in, "source WAV (16-bit PCM mono)")->required();
  conv_cmd->add_option("--out", cv_out, "output WAV path (default: <utt>__<src>_to_<tgt>.wav)");
  conv_cmd->add_option("--checkpoints", cv_ckpts, "checkpoint directory");
  conv_cmd->add_flag("--no-enhance", cv_no_enhance, "skip the Taco-SE stage (ablation)");
  conv_cmd->add_option("--vocoder", cv_vocoder, "wavenet | griffinlim")
      ->check(CLI::IsMember({"wavenet", "griffinlim"}));
  conv_cmd->add_option("--mode", cv_mode, "wavenet output selection: argmax | sample")
      ->check(CLI::IsMember({"argmax", "sample"}));
  conv_cmd->add_option("--source-speaker", cv_src_speaker, "source speaker tag for naming");
  conv_cmd->callback([&] {
    pipeline::ConvertOptions opt;
    opt.no_enhance = cv_no_enhance;
    opt.vocoder = cv_vocoder == "wavenet" ? pipeline::VocoderKind::WaveNet
                                          : pipeline::VocoderKind::GriffinLim;
    opt.mode = cv_mode == "argmax" ? voc::GenMode::Argmax : voc::GenMode::Sample;
    opt.seed = g.seed;

    const auto set = pipeline::CheckpointSet::inDir(cv_ckpts);
    const auto pipe = pipeline::loadPipeline(set, /*need_se=*/!opt.no_enhance,
                                             /*need_voc=*/opt.vocoder ==
                                                 pipeline::VocoderKind::WaveNet);
    const io::WavData wav = io::readWav(cv_in);
    const auto result = pipeline::convert({wav.samples, wav.sample_rate}, pipe, opt);

    fs::path out_path;
    if (!cv_out.empty()) {
      out_path = cv_out;
    } else {
      const std::string target =
          pipe.target_speaker.empty() ? "target" : pipe.target_speaker;
      out_path = pipeline::defaultOutputName(fs::path(cv_in).stem().string(), cv_src_speaker,
                                             target);
    }
    io::writeWav(out_path, result.wav.samples, result.wav.sample_rate);
    std::cout << "wrote " << out_path.string() << " (" << result.wav.samples.size()
              << " samples, " << (result.enhanced ? "enhanced" : "no-enhance") << ")\n";
  });

  // eval-per -----------------------------------------------------------------
  auto* per_cmd = app.add_subcommand("eval-per", "phoneme error rate between transcript files");
  std::string per_ref, per_hyp, per_phones;
  per_cmd->add_option("--ref", per_ref, "reference JSONL (utt_id + transcript)")->required();
  per_cmd->add_option("--hyp", per_hyp, "hypothesis JSONL (utt_id + transcript)")->required();
  per_cmd->add_option("--phones", per_phones, "phone inventory TSV with scoring fold");
  per_cmd->callback([&] {
    const auto ref = io::DatasetManifest::load(per_ref);
    const auto hyp = io::DatasetManifest::load(per_hyp);
    ref.requireNonEmpty();
    const pr::PhoneInventory inv = per_phones.empty()
                                       ? impliedInventory(ref, hyp)
                                       : pr::PhoneInventory::loadTsv(per_phones);
    std::printf("%.4f\n", corpusPer(ref, hyp, inv));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors exit 2
  } catch (const Error& e) {
    nlohmann::json err{{"error", e.codeName()}, {"message", e.what()}};
    std::cerr << err.dump() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json err{{"error", "Internal"}, {"message", e.what()}};
    std::cerr << err.dump() << std::endl;
    return 1;
  }
  return 0;
}
