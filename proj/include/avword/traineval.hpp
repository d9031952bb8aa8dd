// Optimization loop (ADAM + plateau schedule), MCR evaluation, SNR sweeps,
// confusion analysis and context-only recognition.
#pragma once

#include <map>
#include <tuple>

#include "avword/checkpoint.hpp"
#include "avword/dataset.hpp"
#include "avword/model.hpp"
#include "avword/optim.hpp"

namespace avword {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 300;
  double lr = kLrInitial;
  int patience = 3;
  double factor = 0.5;
  double lr_floor = kLrFloor;
  std::uint64_t seed = 0;
  // stop once the running train accuracy reaches this level (<0 disables)
  double stop_at_train_acc = -1.0;
  bool noise_augment = true;  // audio-bearing models draw fresh noise per epoch
  // visual-bearing models: random whole-clip translation up to this many
  // pixels per axis, fresh per epoch (0 disables)
  std::size_t shift_augment_px = 2;
  MultimodalDropConfig multimodal;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_mcr = 0.0;
  double lr = 0.0;
  double train_acc = 0.0;
  double wall_s = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> logs;
  std::uint64_t log_hash = 0;  // deterministic fields only (wall_s excluded)
  std::string stop_reason;
  double best_val_mcr = 100.0;
};

// Trains in place. When out_dir is non-empty, writes log.jsonl, summary.json
// and checkpoint/ under it. On divergence the last finite-loss epoch's
// parameters are restored (and checkpointed) before the error is raised.
TrainResult train_model(Model& model, const LoadedDataset& dataset, const TrainConfig& cfg,
                        const NoiseBank* bank, const std::string& out_dir);

struct EvalReport {
  double mcr = 100.0;  // percent
  std::size_t total = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> per_word_errors;
  std::vector<std::size_t> per_word_counts;
  // (target, estimated) -> count, off-diagonal only
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> confusions;
};

// Argmax decisions with lowest-index tie-break.
std::vector<std::size_t> decide(const std::vector<Tensor<float>>& posteriors);

EvalReport report_from_decisions(const std::vector<Sample>& samples,
                                 const std::vector<std::size_t>& decisions,
                                 std::size_t vocab_size);

// Per-sample posteriors over the given samples; noise (when non-null) is the
// fixed test-set assignment aligned with the sample order.
std::vector<Tensor<float>> eval_posteriors(Model& model, const std::vector<Sample>& samples,
                                           const NoiseBank* bank, const TestNoiseSet* noise,
                                           std::size_t batch_size);

EvalReport evaluate_mcr(Model& model, const std::vector<Sample>& samples,
                        std::size_t vocab_size, const NoiseBank* bank = nullptr,
                        const TestNoiseSet* noise = nullptr, std::size_t batch_size = 32);

EvalReport evaluate_fused(Model& visual, Model& audio, const std::vector<Sample>& samples,
                          std::size_t vocab_size, const NoiseBank* bank,
                          const TestNoiseSet* noise, const FusionConfig& fusion,
                          std::size_t batch_size = 32);

struct SweepRow {
  std::string set_name;  // "snr_-10" .. "clean"
  double mcr = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> per_set;                // 8 rows
  std::map<std::string, double> per_category;   // averaged over the 7 noisy sets
};

SweepReport snr_sweep(Model& model, const LoadedDataset& dataset, const NoiseBank& bank,
                      const std::vector<TestNoiseSet>& sets, std::size_t batch_size = 32);

// Off-diagonal confusion cells sorted by descending count, ties by word order.
std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> confusion_pairs(
    const EvalReport& report, std::size_t top_k);

struct ContextOnlyResult {
  EvalReport report;
  std::vector<std::pair<std::size_t, double>> per_word_mcr;  // all words
  std::vector<std::size_t> recognizable;  // words with MCR <= 50%
  TrainResult training;
};

// Trains and evaluates a remove_inside (context-frames-only) system.
ContextOnlyResult context_only_eval(const ModelSpec& base_spec, const LoadedDataset& dataset,
                                    const TrainConfig& cfg, const std::string& out_dir);

// ---------------------------------------------------------------------------
// Two-stage visual training: the from-scratch run uses the temporal
// convolutional backend to initialize the frontend, whose per-frame features
// are then extracted once and reused to train recurrent backends (far cheaper
// per epoch, and the only protocol that trains reliably from scratch).
// ---------------------------------------------------------------------------

struct FeatureSample {
  Tensor<float> features;  // [T x F]
  BoundarySpec bounds;
  std::size_t label = 0;
  std::string id;
};

// Eval-mode frontend pass over a sample list.
std::vector<FeatureSample> extract_visual_features(Model& visual_model,
                                                   const std::vector<Sample>& samples,
                                                   std::size_t batch_size = 16);

// Trains a standalone Backend II on cached features, same protocol as
// train_model (shuffles, plateau schedule, divergence handling).
TrainResult train_backend_on_features(BilstmBackend<float>& backend,
                                      const std::vector<FeatureSample>& train,
                                      const std::vector<FeatureSample>& val,
                                      std::size_t vocab_size, BoundaryMode mode,
                                      const TrainConfig& cfg);

EvalReport evaluate_backend_on_features(BilstmBackend<float>& backend,
                                        const std::vector<FeatureSample>& samples,
                                        std::size_t vocab_size, BoundaryMode mode,
                                        std::size_t batch_size = 32);

// Builds a standard visual Model carrying the donor's frontend parameters and
// the given trained backend, so the usual eval/fusion/checkpoint paths apply.
Model assemble_visual_model(ModelSpec bilstm_spec, Model& frontend_donor,
                            BilstmBackend<float>& backend, std::uint64_t init_seed);

// CSV/JSON report writers used by the CLI.
void write_eval_report(const EvalReport& report, const Vocabulary& vocab,
                       const std::string& dir, const std::string& stem);
void write_sweep_report(const SweepReport& report, const std::string& dir);

// Batch assembly (exposed for tests): normalizes frames per video and
// spectra per utterance; applies the optional noise spec to the waveform and
// the optional per-sample pixel shift to the frames (train augmentation).
struct PixelShift {
  int dx = 0;
  int dy = 0;
};
Batch assemble_batch(const std::vector<const Sample*>& samples, ModelKind kind,
                     const NoiseBank* bank, const std::vector<const NoiseSpec*>* noise,
                     const std::vector<PixelShift>* shifts = nullptr);

std::uint64_t hash_training_log(const std::vector<EpochLog>& logs);

}  // namespace avword
