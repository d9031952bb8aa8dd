#include "avword/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "avword/checks.hpp"
#include "avword/traineval.hpp"

namespace avword {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// config schema
// ---------------------------------------------------------------------------

void reject_unknown(const json& obj, const std::vector<std::string>& allowed,
                    const std::string& where) {
  AVW_CHECK(obj.is_object(), "config section '" << where << "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      AVW_FAIL_AS(ConfigError, "unknown config key '" << where << "." << key << "'");
  }
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

struct RunConfig {
  std::string dataset_root = "data/wordbank";
  WordbankConfig wordbank;
  ModelSpec model;
  TrainConfig training;
  FusionConfig fusion;
  NoiseBankConfig noise_bank;
  std::uint64_t test_noise_seed = 0;
  std::string wav_bank_dir;  // when set, real recordings replace the synthetic bank
  std::string eval_checkpoint;
  std::string eval_noise_set;  // "", "clean", "snr_-10", ...
  std::string fuse_visual_checkpoint;
  std::string fuse_audio_checkpoint;
  std::size_t analysis_top_k = 20;
  std::string out_dir = "runs/out";
};

StemMode stem_mode_from_string(const std::string& s) {
  if (s == "3d" || s == "spatiotemporal") return StemMode::spatiotemporal;
  if (s == "2d" || s == "spatial") return StemMode::spatial;
  AVW_FAIL_AS(ConfigError, "unknown stem mode '" << s << "'");
}

PyramidalMode subsample_from_string(const std::string& s) {
  if (s == "pair_concat") return PyramidalMode::pair_concat;
  if (s == "keep_even") return PyramidalMode::keep_even;
  if (s == "none") return PyramidalMode::none;
  AVW_FAIL_AS(ConfigError, "unknown subsample mode '" << s << "'");
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec spec;
  reject_unknown(j, {"kind", "boundary_mode", "resnet", "audio_frontend", "backend",
                     "vocab_size"},
                 "model");
  maybe(j, "vocab_size", spec.vocab_size);
  if (j.contains("kind")) spec.kind = model_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("boundary_mode"))
    spec.boundary_mode = boundary_mode_from_string(j.at("boundary_mode").get<std::string>());
  if (j.contains("resnet")) {
    const json& r = j.at("resnet");
    reject_unknown(r, {"depth", "input_spatial", "stem_mode", "stem_temporal_kernel",
                       "feature_dim"},
                   "model.resnet");
    maybe(r, "depth", spec.resnet.depth);
    maybe(r, "input_spatial", spec.resnet.input_spatial);
    if (r.contains("stem_mode"))
      spec.resnet.stem_mode = stem_mode_from_string(r.at("stem_mode").get<std::string>());
    maybe(r, "stem_temporal_kernel", spec.resnet.stem_temporal_kernel);
    if (spec.resnet.stem_mode == StemMode::spatial) spec.resnet.stem_temporal_kernel = 1;
    maybe(r, "feature_dim", spec.resnet.feature_dim);
  }
  if (j.contains("audio_frontend")) {
    const json& a = j.at("audio_frontend");
    reject_unknown(a, {"hidden", "layers", "subsample", "input_dropout_p",
                       "batch_norm_inputs"},
                   "model.audio_frontend");
    maybe(a, "hidden", spec.audio_frontend.hidden);
    maybe(a, "layers", spec.audio_frontend.layers);
    if (a.contains("subsample"))
      spec.audio_frontend.subsample =
          subsample_from_string(a.at("subsample").get<std::string>());
    maybe(a, "input_dropout_p", spec.audio_frontend.input_dropout_p);
    maybe(a, "batch_norm_inputs", spec.audio_frontend.batch_norm_inputs);
  }
  if (j.contains("backend")) {
    const json& b = j.at("backend");
    reject_unknown(b, {"kind", "layers", "aggregate", "batch_norm", "dropout", "hidden",
                       "input_dropout_p", "head_dropout_p"},
                   "model.backend");
    if (b.contains("kind")) {
      const std::string k = b.at("kind").get<std::string>();
      if (k == "bilstm") spec.backend_kind = BackendKind::bilstm;
      else if (k == "tconv") spec.backend_kind = BackendKind::tconv;
      else AVW_FAIL_AS(ConfigError, "unknown backend kind '" << k << "'");
    }
    maybe(b, "layers", spec.backend.layers);
    if (b.contains("aggregate")) {
      const std::string a = b.at("aggregate").get<std::string>();
      if (a == "average") spec.backend.aggregate = Aggregation::average;
      else if (a == "last") spec.backend.aggregate = Aggregation::last;
      else AVW_FAIL_AS(ConfigError, "unknown aggregation '" << a << "'");
    }
    maybe(b, "batch_norm", spec.backend.batch_norm);
    maybe(b, "dropout", spec.backend.dropout);
    maybe(b, "hidden", spec.backend.hidden);
    maybe(b, "input_dropout_p", spec.backend.input_dropout_p);
    maybe(b, "head_dropout_p", spec.backend.head_dropout_p);
  }
  return spec;
}

json model_spec_to_json(const ModelSpec& spec) {
  json r{{"depth", spec.resnet.depth},
         {"input_spatial", spec.resnet.input_spatial},
         {"stem_mode", spec.resnet.stem_mode == StemMode::spatiotemporal ? "3d" : "2d"},
         {"stem_temporal_kernel", spec.resnet.stem_temporal_kernel},
         {"feature_dim", spec.resnet.feature_dim}};
  json a{{"hidden", spec.audio_frontend.hidden},
         {"layers", spec.audio_frontend.layers},
         {"subsample", spec.audio_frontend.subsample == PyramidalMode::pair_concat
                           ? "pair_concat"
                           : spec.audio_frontend.subsample == PyramidalMode::keep_even
                                 ? "keep_even"
                                 : "none"},
         {"input_dropout_p", spec.audio_frontend.input_dropout_p},
         {"batch_norm_inputs", spec.audio_frontend.batch_norm_inputs}};
  json b{{"kind", spec.backend_kind == BackendKind::bilstm ? "bilstm" : "tconv"},
         {"layers", spec.backend.layers},
         {"aggregate", spec.backend.aggregate == Aggregation::average ? "average" : "last"},
         {"batch_norm", spec.backend.batch_norm},
         {"dropout", spec.backend.dropout},
         {"hidden", spec.backend.hidden},
         {"input_dropout_p", spec.backend.input_dropout_p},
         {"head_dropout_p", spec.backend.head_dropout_p}};
  return json{{"kind", model_kind_to_string(spec.kind)},
              {"boundary_mode", boundary_mode_to_string(spec.boundary_mode)},
              {"resnet", r},
              {"audio_frontend", a},
              {"backend", b},
              {"vocab_size", spec.vocab_size}};
}

RunConfig parse_config_file(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in.good()) AVW_FAIL_AS(ConfigError, "cannot open config file " << path);
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    AVW_FAIL_AS(ConfigError, "config " << path << " is not valid JSON: " << e.what());
  }
  try {
    reject_unknown(j, {"dataset", "wordbank", "model", "training", "multimodal", "fusion",
                       "noise", "eval", "fuse", "analysis", "output"},
                   "<root>");
    if (j.contains("dataset")) {
      reject_unknown(j.at("dataset"), {"root"}, "dataset");
      maybe(j.at("dataset"), "root", cfg.dataset_root);
    }
    if (j.contains("wordbank")) {
      const json& w = j.at("wordbank");
      reject_unknown(w, {"vocab_size", "train_per_word", "val_per_word", "test_per_word",
                         "frame_size", "predictable_count", "homophone_pairs", "width_min",
                         "width_max", "context_visual_amp", "seed"},
                     "wordbank");
      maybe(w, "vocab_size", cfg.wordbank.vocab_size);
      maybe(w, "train_per_word", cfg.wordbank.train_per_word);
      maybe(w, "val_per_word", cfg.wordbank.val_per_word);
      maybe(w, "test_per_word", cfg.wordbank.test_per_word);
      maybe(w, "frame_size", cfg.wordbank.frame_size);
      maybe(w, "predictable_count", cfg.wordbank.predictable_count);
      if (w.contains("homophone_pairs")) {
        cfg.wordbank.homophone_pairs.clear();
        for (const auto& p : w.at("homophone_pairs"))
          cfg.wordbank.homophone_pairs.push_back(
              {p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
      }
      maybe(w, "width_min", cfg.wordbank.width_min);
      maybe(w, "width_max", cfg.wordbank.width_max);
      maybe(w, "context_visual_amp", cfg.wordbank.context_visual_amp);
      maybe(w, "seed", cfg.wordbank.seed);
    }
    if (j.contains("model")) cfg.model = model_spec_from_json(j.at("model"));
    if (j.contains("training")) {
      const json& t = j.at("training");
      reject_unknown(t, {"batch_size", "max_epochs", "lr", "patience", "factor", "lr_floor",
                         "seed", "stop_at_train_acc", "noise_augment", "shift_augment_px"},
                     "training");
      maybe(t, "batch_size", cfg.training.batch_size);
      maybe(t, "max_epochs", cfg.training.max_epochs);
      maybe(t, "lr", cfg.training.lr);
      maybe(t, "patience", cfg.training.patience);
      maybe(t, "factor", cfg.training.factor);
      maybe(t, "lr_floor", cfg.training.lr_floor);
      maybe(t, "seed", cfg.training.seed);
      maybe(t, "stop_at_train_acc", cfg.training.stop_at_train_acc);
      maybe(t, "noise_augment", cfg.training.noise_augment);
      maybe(t, "shift_augment_px", cfg.training.shift_augment_px);
    }
    if (j.contains("multimodal")) {
      const json& m = j.at("multimodal");
      reject_unknown(m, {"enabled", "p_drop_audio", "p_drop_video", "p_drop_boundaries",
                         "coupled"},
                     "multimodal");
      maybe(m, "enabled", cfg.training.multimodal.enabled);
      maybe(m, "p_drop_audio", cfg.training.multimodal.p_drop_audio);
      maybe(m, "p_drop_video", cfg.training.multimodal.p_drop_video);
      maybe(m, "p_drop_boundaries", cfg.training.multimodal.p_drop_boundaries);
      maybe(m, "coupled", cfg.training.multimodal.coupled);
    }
    if (j.contains("fusion")) {
      reject_unknown(j.at("fusion"), {"gamma"}, "fusion");
      maybe(j.at("fusion"), "gamma", cfg.fusion.gamma);
    }
    if (j.contains("noise")) {
      const json& n = j.at("noise");
      reject_unknown(n, {"bank_seed", "files_per_category", "file_seconds", "test_seed",
                         "wav_bank_dir"},
                     "noise");
      maybe(n, "bank_seed", cfg.noise_bank.seed);
      maybe(n, "files_per_category", cfg.noise_bank.files_per_category);
      maybe(n, "file_seconds", cfg.noise_bank.file_seconds);
      maybe(n, "test_seed", cfg.test_noise_seed);
      maybe(n, "wav_bank_dir", cfg.wav_bank_dir);
    }
    if (j.contains("eval")) {
      reject_unknown(j.at("eval"), {"checkpoint", "noise_set"}, "eval");
      maybe(j.at("eval"), "checkpoint", cfg.eval_checkpoint);
      maybe(j.at("eval"), "noise_set", cfg.eval_noise_set);
    }
    if (j.contains("fuse")) {
      reject_unknown(j.at("fuse"), {"visual_checkpoint", "audio_checkpoint", "noise_set"},
                     "fuse");
      maybe(j.at("fuse"), "visual_checkpoint", cfg.fuse_visual_checkpoint);
      maybe(j.at("fuse"), "audio_checkpoint", cfg.fuse_audio_checkpoint);
      maybe(j.at("fuse"), "noise_set", cfg.eval_noise_set);
    }
    if (j.contains("analysis")) {
      reject_unknown(j.at("analysis"), {"top_k"}, "analysis");
      maybe(j.at("analysis"), "top_k", cfg.analysis_top_k);
    }
    if (j.contains("output")) {
      reject_unknown(j.at("output"), {"dir"}, "output");
      maybe(j.at("output"), "dir", cfg.out_dir);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    AVW_FAIL_AS(ConfigError, "bad config " << path << ": " << e.what());
  }
  return cfg;
}

// exclusive lock guarding an output directory
class DirLock {
 public:
  explicit DirLock(const std::string& dir) : path_(fs::path(dir) / ".lock") {
    fs::create_directories(dir);
    if (fs::exists(path_))
      AVW_FAIL_AS(ConfigError, "output directory " << dir
                                                   << " is locked by another run (stale "
                                                   << path_.string() << "?)");
    std::ofstream out(path_);
    out << "locked\n";
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

void write_config_echo(const std::string& dir, const std::string& command,
                       const RunConfig& cfg) {
  json echo{{"version", kVersionString},
            {"command", command},
            {"dataset", {{"root", cfg.dataset_root}}},
            {"model", model_spec_to_json(cfg.model)},
            {"training",
             {{"batch_size", cfg.training.batch_size},
              {"max_epochs", cfg.training.max_epochs},
              {"lr", cfg.training.lr},
              {"patience", cfg.training.patience},
              {"factor", cfg.training.factor},
              {"lr_floor", cfg.training.lr_floor},
              {"seed", cfg.training.seed},
              {"stop_at_train_acc", cfg.training.stop_at_train_acc},
              {"noise_augment", cfg.training.noise_augment},
              {"shift_augment_px", cfg.training.shift_augment_px}}},
            {"multimodal",
             {{"enabled", cfg.training.multimodal.enabled},
              {"p_drop_audio", cfg.training.multimodal.p_drop_audio},
              {"p_drop_video", cfg.training.multimodal.p_drop_video},
              {"p_drop_boundaries", cfg.training.multimodal.p_drop_boundaries},
              {"coupled", cfg.training.multimodal.coupled}}},
            {"fusion", {{"gamma", cfg.fusion.gamma}}},
            {"noise",
             {{"bank_seed", cfg.noise_bank.seed},
              {"files_per_category", cfg.noise_bank.files_per_category},
              {"file_seconds", cfg.noise_bank.file_seconds},
              {"test_seed", cfg.test_noise_seed}}},
            {"output", {{"dir", cfg.out_dir}}}};
  std::ofstream out(fs::path(dir) / "config_echo.json");
  out << echo.dump(2) << "\n";
}

NoiseBank make_bank(const RunConfig& cfg) {
  if (!cfg.wav_bank_dir.empty()) return NoiseBank::load_wav_bank(cfg.wav_bank_dir);
  return NoiseBank(cfg.noise_bank);
}

Model build_model(const RunConfig& cfg, const LoadedDataset& ds) {
  ModelSpec spec = cfg.model;
  spec.vocab_size = ds.vocab.size();
  spec.resnet.input_spatial = ds.config.frame_size;
  return Model(spec, Rng(derive_seed(cfg.training.seed, "model-init")));
}

Model load_model_from_checkpoint(const std::string& ckpt, const LoadedDataset& ds,
                                 std::uint64_t seed) {
  const fs::path mpath = fs::path(ckpt) / "manifest.json";
  if (!fs::exists(mpath))
    AVW_FAIL_AS(ArtifactError, "checkpoint manifest not found: " << mpath.string());
  std::ifstream in(mpath);
  json manifest = json::parse(in);
  if (!manifest.contains("model_spec"))
    AVW_FAIL_AS(ArtifactError, "checkpoint " << ckpt << " carries no model spec echo");
  ModelSpec spec = model_spec_from_json(manifest["model_spec"]);
  spec.vocab_size = manifest["model_spec"].at("vocab_size").get<std::size_t>();
  if (spec.vocab_size != ds.vocab.size())
    AVW_FAIL_AS(ArtifactError, "checkpoint/model-spec mismatch: checkpoint vocabulary ("
                                   << spec.vocab_size << ") does not match dataset ("
                                   << ds.vocab.size() << ")");
  spec.resnet.input_spatial = ds.config.frame_size;
  Model model(spec, Rng(derive_seed(seed, "model-init")));
  auto params = model.parameters();
  auto bufs = model.buffers();
  load_checkpoint(ckpt, params, bufs);
  return model;
}

const TestNoiseSet* pick_noise_set(const std::vector<TestNoiseSet>& sets,
                                   const std::string& name) {
  if (name.empty()) return nullptr;
  for (const auto& s : sets)
    if (s.name == name) return &s;
  AVW_FAIL_AS(ConfigError, "unknown noise set '" << name << "'");
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_gen_data(RunConfig cfg) {
  cfg.wordbank.validate();
  DirLock lock(cfg.dataset_root);
  auto manifest = generate_wordbank(cfg.wordbank, cfg.dataset_root);
  std::cout << "wordbank written to " << cfg.dataset_root << " (content hash "
            << manifest.content_hash << ")\n";
  NoiseBank bank = make_bank(cfg);
  LoadedDataset ds = load_dataset(cfg.dataset_root);
  auto sets = build_test_noise_sets(bank, ds, cfg.test_noise_seed);
  write_test_noise_sets(sets, (fs::path(cfg.dataset_root) / "noise_tests").string());
  std::cout << sets.size() << " fixed test noise manifests written\n";
  write_config_echo(cfg.dataset_root, "gen-data", cfg);
  return 0;
}

int cmd_train(RunConfig cfg) {
  DirLock lock(cfg.out_dir);
  write_config_echo(cfg.out_dir, "train", cfg);
  LoadedDataset ds = load_dataset(cfg.dataset_root);
  Model model = build_model(cfg, ds);
  std::optional<NoiseBank> bank;
  if (model.spec().kind != ModelKind::visual && cfg.training.noise_augment)
    bank.emplace(make_bank(cfg));
  TrainResult res = train_model(model, ds, cfg.training, bank ? &*bank : nullptr,
                                cfg.out_dir);
  // store the spec echo inside the checkpoint manifest for later rebuilds
  {
    auto params = model.parameters();
    auto bufs = model.buffers();
    CheckpointExtras extras;
    json spec_json = model_spec_to_json(model.spec());
    extras.model_spec_json = spec_json.dump();
    save_checkpoint((fs::path(cfg.out_dir) / "checkpoint").string(), params, bufs, extras);
  }
  std::cout << "trained " << res.logs.size() << " epochs, stop reason: " << res.stop_reason
            << ", best val MCR " << res.best_val_mcr << "%, log hash " << res.log_hash
            << "\n";
  return 0;
}

int cmd_eval(RunConfig cfg) {
  if (cfg.eval_checkpoint.empty())
    AVW_FAIL_AS(ConfigError, "eval needs eval.checkpoint in the config");
  DirLock lock(cfg.out_dir);
  write_config_echo(cfg.out_dir, "eval", cfg);
  LoadedDataset ds = load_dataset(cfg.dataset_root);
  Model model = load_model_from_checkpoint(cfg.eval_checkpoint, ds, cfg.training.seed);
  std::optional<NoiseBank> bank;
  const TestNoiseSet* noise = nullptr;
  std::vector<TestNoiseSet> sets;
  if (!cfg.eval_noise_set.empty()) {
    bank.emplace(make_bank(cfg));
    sets = read_test_noise_sets((fs::path(cfg.dataset_root) / "noise_tests").string());
    noise = pick_noise_set(sets, cfg.eval_noise_set);
  }
  EvalReport rep = evaluate_mcr(model, ds.split("test"), ds.vocab.size(),
                                bank ? &*bank : nullptr, noise, cfg.training.batch_size);
  write_eval_report(rep, ds.vocab, cfg.out_dir, "eval");
  std::cout << "MCR " << rep.mcr << "% over " << rep.total << " samples\n";
  return 0;
}

int cmd_fuse(RunConfig cfg) {
  if (cfg.fuse_visual_checkpoint.empty() || cfg.fuse_audio_checkpoint.empty())
    AVW_FAIL_AS(ConfigError, "fuse needs fuse.visual_checkpoint and fuse.audio_checkpoint");
  DirLock lock(cfg.out_dir);
  write_config_echo(cfg.out_dir, "fuse", cfg);
  LoadedDataset ds = load_dataset(cfg.dataset_root);
  Model visual = load_model_from_checkpoint(cfg.fuse_visual_checkpoint, ds,
                                            cfg.training.seed);
  Model audio = load_model_from_checkpoint(cfg.fuse_audio_checkpoint, ds,
                                           cfg.training.seed);
  AVW_CHECK(visual.spec().kind == ModelKind::visual, "fuse.visual_checkpoint is not a"
                                                     " visual model");
  AVW_CHECK(audio.spec().kind == ModelKind::audio, "fuse.audio_checkpoint is not an"
                                                   " audio model");
  std::optional<NoiseBank> bank;
  const TestNoiseSet* noise = nullptr;
  std::vector<TestNoiseSet> sets;
  if (!cfg.eval_noise_set.empty()) {
    bank.emplace(make_bank(cfg));
    sets = read_test_noise_sets((fs::path(cfg.dataset_root) / "noise_tests").string());
    noise = pick_noise_set(sets, cfg.eval_noise_set);
  }
  EvalReport rep = evaluate_fused(visual, audio, ds.split("test"), ds.vocab.size(),
                                  bank ? &*bank : nullptr, noise, cfg.fusion,
                                  cfg.training.batch_size);
  write_eval_report(rep, ds.vocab, cfg.out_dir, "fused");
  std::cout << "fused MCR " << rep.mcr << "% (gamma " << cfg.fusion.gamma << ")\n";
  return 0;
}

int cmd_sweep(RunConfig cfg, const std::vector<std::string>& snr_filter) {
  if (cfg.eval_checkpoint.empty())
    AVW_FAIL_AS(ConfigError, "sweep-snr needs eval.checkpoint in the config");
  DirLock lock(cfg.out_dir);
  write_config_echo(cfg.out_dir, "sweep-snr", cfg);
  LoadedDataset ds = load_dataset(cfg.dataset_root);
  Model model = load_model_from_checkpoint(cfg.eval_checkpoint, ds, cfg.training.seed);
  NoiseBank bank = make_bank(cfg);
  auto sets = read_test_noise_sets((fs::path(cfg.dataset_root) / "noise_tests").string());
  if (!snr_filter.empty()) {
    std::vector<TestNoiseSet> kept;
    for (const auto& want : snr_filter) {
      const std::string name = want == "clean" ? "clean" : "snr_" + want;
      kept.push_back(*pick_noise_set(sets, name));
    }
    sets = std::move(kept);
  }
  SweepReport rep = snr_sweep(model, ds, bank, sets, cfg.training.batch_size);
  write_sweep_report(rep, cfg.out_dir);
  for (const auto& row : rep.per_set)
    std::cout << row.set_name << ": " << row.mcr << "%\n";
  for (const auto& [cat, mcr] : rep.per_category)
    std::cout << "category " << cat << ": " << mcr << "%\n";
  return 0;
}

int cmd_confusions(RunConfig cfg) {
  if (cfg.eval_checkpoint.empty())
    AVW_FAIL_AS(ConfigError, "analyze-confusions needs eval.checkpoint in the config");
  DirLock lock(cfg.out_dir);
  write_config_echo(cfg.out_dir, "analyze-confusions", cfg);
  LoadedDataset ds = load_dataset(cfg.dataset_root);
  Model model = load_model_from_checkpoint(cfg.eval_checkpoint, ds, cfg.training.seed);
  std::optional<NoiseBank> bank;
  const TestNoiseSet* noise = nullptr;
  std::vector<TestNoiseSet> sets;
  if (!cfg.eval_noise_set.empty()) {
    bank.emplace(make_bank(cfg));
    sets = read_test_noise_sets((fs::path(cfg.dataset_root) / "noise_tests").string());
    noise = pick_noise_set(sets, cfg.eval_noise_set);
  }
  EvalReport rep = evaluate_mcr(model, ds.split("test"), ds.vocab.size(),
                                bank ? &*bank : nullptr, noise, cfg.training.batch_size);
  write_eval_report(rep, ds.vocab, cfg.out_dir, "confusion_eval");
  auto pairs = confusion_pairs(rep, cfg.analysis_top_k);
  std::cout << "target,estimated,count\n";
  for (const auto& [t, e, c] : pairs)
    std::cout << ds.vocab.words[t] << "," << ds.vocab.words[e] << "," << c << "\n";
  return 0;
}

int cmd_context_eval(RunConfig cfg) {
  DirLock lock(cfg.out_dir);
  write_config_echo(cfg.out_dir, "context-eval", cfg);
  LoadedDataset ds = load_dataset(cfg.dataset_root);
  ModelSpec spec = cfg.model;
  spec.kind = ModelKind::visual;
  spec.vocab_size = ds.vocab.size();
  spec.resnet.input_spatial = ds.config.frame_size;
  ContextOnlyResult res = context_only_eval(spec, ds, cfg.training, cfg.out_dir);
  write_eval_report(res.report, ds.vocab, cfg.out_dir, "context_only");
  std::cout << "context-only MCR " << res.report.mcr << "% (chance "
            << 100.0 * (1.0 - 1.0 / static_cast<double>(ds.vocab.size())) << "%)\n";
  std::cout << "words recognizable from context alone (MCR <= 50%):\n";
  for (std::size_t w : res.recognizable) {
    double mcr = 0;
    for (const auto& [word, m] : res.per_word_mcr)
      if (word == w) mcr = m;
    std::cout << "  " << ds.vocab.words[w] << "  " << mcr << "%\n";
  }
  return 0;
}

int cmd_check(bool shapes, bool grads) {
  if (!shapes && !grads) {
    shapes = true;
    grads = true;
  }
  bool ok = true;
  if (shapes) ok = run_shape_checks(std::cout).ok && ok;
  if (grads) ok = run_gradient_battery(std::cout).ok && ok;
  if (!ok) AVW_FAIL_AS(NumericError, "check failed");
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"audiovisual word recognition workbench"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<double> gamma;
  std::optional<std::string> mode;
  std::vector<std::string> snr_list;

  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "override wordbank/training seed");
  app.add_option("--out", out_dir, "override output directory");
  app.add_option("--gamma", gamma, "override fusion weight");
  app.add_option("--mode", mode,
                 "override boundary mode (indicator|remove_outside|remove_inside|unused)");
  app.add_option("--snr", snr_list, "SNR subset for sweep-snr (e.g. -10,0,clean)")
      ->delimiter(',');

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic wordbank");
  auto* train = app.add_subcommand("train", "train a model");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* fuse = app.add_subcommand("fuse", "late-fuse a visual and an audio checkpoint");
  auto* sweep = app.add_subcommand("sweep-snr", "per-SNR and per-category MCR tables");
  auto* conf = app.add_subcommand("analyze-confusions", "top confused word pairs");
  auto* ctx = app.add_subcommand("context-eval", "train/evaluate on context frames only");
  auto* check = app.add_subcommand("check", "shape and gradient self-checks");
  for (auto* sub : {gen, train, eval, fuse, sweep, conf, ctx, check})
    sub->fallthrough();  // global flags may follow the subcommand name
  bool check_shapes = false, check_grads = false;
  check->add_flag("--shapes", check_shapes, "verify the published tensor chains");
  check->add_flag("--grad", check_grads, "run the finite-difference battery");

  std::vector<const char*> argv;
  argv.push_back("avword");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = parse_config_file(config_path);
    if (seed) {
      cfg.training.seed = *seed;
      cfg.wordbank.seed = *seed;
    }
    if (out_dir) cfg.out_dir = *out_dir;
    if (gamma) cfg.fusion.gamma = *gamma;
    if (mode) cfg.model.boundary_mode = boundary_mode_from_string(*mode);

    if (gen->parsed()) return cmd_gen_data(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (fuse->parsed()) return cmd_fuse(cfg);
    if (sweep->parsed()) return cmd_sweep(cfg, snr_list);
    if (conf->parsed()) return cmd_confusions(cfg);
    if (ctx->parsed()) return cmd_context_eval(cfg);
    if (check->parsed()) return cmd_check(check_shapes, check_grads);
    AVW_FAIL_AS(ConfigError, "no command given");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ArtifactError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace avword
