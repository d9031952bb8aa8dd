#include "avword/traineval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "avword/parallel.hpp"

namespace avword {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

namespace {

void normalize_video(const Tensor<std::uint8_t>& frames, float* out) {
  const std::size_t n = frames.numel();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += frames[i];
  mean = mean / (255.0 * static_cast<double>(n));
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = frames[i] / 255.0 - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv = 1.0 / (std::sqrt(var) + 1e-8);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<float>((frames[i] / 255.0 - mean) * inv);
}

Tensor<std::uint8_t> shift_frames(const Tensor<std::uint8_t>& frames, int dx, int dy) {
  const std::size_t t = frames.dim(0), h = frames.dim(2), w = frames.dim(3);
  Tensor<std::uint8_t> out(frames.shape());
  for (std::size_t ti = 0; ti < t; ++ti)
    for (std::size_t y = 0; y < h; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) - dy;
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
      for (std::size_t x = 0; x < w; ++x) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) - dx;
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
        out[(ti * h + y) * w + x] =
            frames[(ti * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
      }
    }
  return out;
}

}  // namespace

Batch assemble_batch(const std::vector<const Sample*>& samples, ModelKind kind,
                     const NoiseBank* bank, const std::vector<const NoiseSpec*>* noise,
                     const std::vector<PixelShift>* shifts) {
  AVW_CHECK(!samples.empty(), "assemble_batch: empty sample list");
  const std::size_t n = samples.size();
  Batch batch;
  batch.bounds.resize(n);
  batch.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    batch.bounds[i] = samples[i]->bounds;
    batch.labels[i] = samples[i]->meta.label;
  }

  if (kind != ModelKind::audio) {
    const auto& shape = samples[0]->frames.shape();
    const std::size_t t = shape[0], s = shape[2];
    batch.frames = Tensor<float>({n, 1, t, s, s});
    const std::size_t stride = t * s * s;
    parallel_for(n, [&](std::size_t i) {
      AVW_CHECK(samples[i]->frames.shape() == shape, "ragged frame shapes in a batch");
      if (shifts && ((*shifts)[i].dx != 0 || (*shifts)[i].dy != 0)) {
        normalize_video(shift_frames(samples[i]->frames, (*shifts)[i].dx, (*shifts)[i].dy),
                        batch.frames.data() + i * stride);
      } else {
        normalize_video(samples[i]->frames, batch.frames.data() + i * stride);
      }
    });
  }

  if (kind != ModelKind::visual) {
    // one STFT probe fixes T_A for the batch
    std::vector<Tensor<float>> spectra(n);
    parallel_for(n, [&](std::size_t i) {
      Waveform w = samples[i]->wave;
      if (noise && (*noise)[i] && !(*noise)[i]->clean()) {
        AVW_CHECK(bank != nullptr, "noise spec given without a noise bank");
        w = apply_noise(*bank, *(*noise)[i], w);
      }
      spectra[i] = utterance_scalar_normalize(stft_log_spectra(w)).frames;
    });
    const std::size_t t_a = spectra[0].dim(0);
    batch.spectra = Tensor<float>({t_a, n, kSpectralBins});
    for (std::size_t i = 0; i < n; ++i) {
      AVW_CHECK(spectra[i].dim(0) == t_a, "ragged audio lengths in a batch");
      for (std::size_t t = 0; t < t_a; ++t)
        std::copy_n(spectra[i].data() + t * kSpectralBins, kSpectralBins,
                    batch.spectra.data() + (t * n + i) * kSpectralBins);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

std::vector<std::size_t> decide(const std::vector<Tensor<float>>& posteriors) {
  std::vector<std::size_t> out(posteriors.size());
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    const auto& p = posteriors[i];
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.numel(); ++k)
      if (p[k] > p[best]) best = k;  // strict: ties resolve to the lowest index
    out[i] = best;
  }
  return out;
}

EvalReport report_from_decisions(const std::vector<Sample>& samples,
                                 const std::vector<std::size_t>& decisions,
                                 std::size_t vocab_size) {
  AVW_CHECK(samples.size() == decisions.size(), "decision/sample count mismatch");
  AVW_CHECK(!samples.empty(), "evaluate on an empty manifest");
  EvalReport r;
  r.total = samples.size();
  r.per_word_errors.assign(vocab_size, 0);
  r.per_word_counts.assign(vocab_size, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t target = samples[i].meta.label;
    ++r.per_word_counts[target];
    if (decisions[i] == target) {
      ++r.correct;
    } else {
      ++r.per_word_errors[target];
      ++r.confusions[{target, decisions[i]}];
    }
  }
  r.mcr = 100.0 * (1.0 - static_cast<double>(r.correct) / static_cast<double>(r.total));
  return r;
}

namespace {

// groups sample indices by kept sequence length (remove modes make T ragged)
std::vector<std::vector<std::size_t>> bucket_by_kept(const std::vector<const Sample*>& samples,
                                                     BoundaryMode mode,
                                                     const std::vector<std::size_t>& order,
                                                     std::size_t batch_size) {
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (std::size_t idx : order) {
    const auto* s = samples[idx];
    const std::size_t kept = boundary_kept_rows(s->frames.dim(0), s->bounds, mode);
    buckets[kept].push_back(idx);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [kept, idxs] : buckets)
    for (std::size_t at = 0; at < idxs.size(); at += batch_size) {
      const std::size_t len = std::min(batch_size, idxs.size() - at);
      batches.emplace_back(idxs.begin() + static_cast<std::ptrdiff_t>(at),
                           idxs.begin() + static_cast<std::ptrdiff_t>(at + len));
    }
  return batches;
}

}  // namespace

std::vector<Tensor<float>> eval_posteriors(Model& model, const std::vector<Sample>& samples,
                                           const NoiseBank* bank, const TestNoiseSet* noise,
                                           std::size_t batch_size) {
  AVW_CHECK(!samples.empty(), "evaluate on an empty manifest");
  if (noise)
    AVW_CHECK(noise->entries.size() == samples.size(),
              "noise manifest covers " << noise->entries.size() << " samples, split has "
                                       << samples.size());
  std::vector<const Sample*> ptrs(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) ptrs[i] = &samples[i];

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto batches = bucket_by_kept(ptrs, model.spec().boundary_mode, order, batch_size);

  std::vector<Tensor<float>> posts(samples.size());
  Rng eval_rng(0);  // eval path draws nothing
  for (const auto& batch_idx : batches) {
    std::vector<const Sample*> bsamples;
    std::vector<const NoiseSpec*> bnoise;
    for (std::size_t idx : batch_idx) {
      bsamples.push_back(ptrs[idx]);
      if (noise) {
        AVW_CHECK(noise->entries[idx].sample_id == samples[idx].meta.id,
                  "noise manifest order does not match the test split");
        bnoise.push_back(noise->entries[idx].noise ? &*noise->entries[idx].noise : nullptr);
      }
    }
    const std::vector<const NoiseSpec*>* np = noise ? &bnoise : nullptr;
    Batch b = assemble_batch(bsamples, model.spec().kind, bank, np);
    ForwardResult out = model.forward(b, Mode::eval, eval_rng);
    const std::size_t k = out.posteriors.dim(1);
    for (std::size_t i = 0; i < batch_idx.size(); ++i) {
      Tensor<float> row({k});
      std::copy_n(out.posteriors.data() + i * k, k, row.data());
      posts[batch_idx[i]] = std::move(row);
    }
  }
  return posts;
}

EvalReport evaluate_mcr(Model& model, const std::vector<Sample>& samples,
                        std::size_t vocab_size, const NoiseBank* bank,
                        const TestNoiseSet* noise, std::size_t batch_size) {
  auto posts = eval_posteriors(model, samples, bank, noise, batch_size);
  return report_from_decisions(samples, decide(posts), vocab_size);
}

EvalReport evaluate_fused(Model& visual, Model& audio, const std::vector<Sample>& samples,
                          std::size_t vocab_size, const NoiseBank* bank,
                          const TestNoiseSet* noise, const FusionConfig& fusion,
                          std::size_t batch_size) {
  auto pv = eval_posteriors(visual, samples, bank, noise, batch_size);
  auto pa = eval_posteriors(audio, samples, bank, noise, batch_size);
  std::vector<Tensor<float>> fused(pv.size());
  for (std::size_t i = 0; i < pv.size(); ++i) fused[i] = late_fuse(pv[i], pa[i], fusion);
  return report_from_decisions(samples, decide(fused), vocab_size);
}

SweepReport snr_sweep(Model& model, const LoadedDataset& dataset, const NoiseBank& bank,
                      const std::vector<TestNoiseSet>& sets, std::size_t batch_size) {
  const auto& test = dataset.split("test");
  SweepReport rep;
  std::map<std::string, std::pair<std::size_t, std::size_t>> cat_counts;  // errors, total
  for (const auto& set : sets) {
    auto posts = eval_posteriors(model, test, &bank, &set, batch_size);
    auto dec = decide(posts);
    auto r = report_from_decisions(test, dec, dataset.vocab.size());
    rep.per_set.push_back({set.name, r.mcr});
    if (set.snr_db) {
      for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& assign = set.entries[i];
        AVW_CHECK(assign.noise && assign.noise->sources.size() == 1,
                  "fixed test sets carry exactly one noise source");
        const char* cat = kNoiseCategories[assign.noise->sources[0].category];
        auto& [err, tot] = cat_counts[cat];
        ++tot;
        if (dec[i] != test[i].meta.label) ++err;
      }
    }
  }
  for (const auto& [cat, counts] : cat_counts)
    rep.per_category[cat] =
        100.0 * static_cast<double>(counts.first) / static_cast<double>(counts.second);
  return rep;
}

std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> confusion_pairs(
    const EvalReport& report, std::size_t top_k) {
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> pairs;
  for (const auto& [key, count] : report.confusions)
    pairs.emplace_back(key.first, key.second, count);
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<2>(a) != std::get<2>(b)) return std::get<2>(a) > std::get<2>(b);
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    return std::get<1>(a) < std::get<1>(b);
  });
  if (pairs.size() > top_k) pairs.resize(top_k);
  return pairs;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

std::uint64_t hash_training_log(const std::vector<EpochLog>& logs) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const std::string& s) {
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
  };
  char buf[160];
  for (const auto& l : logs) {
    std::snprintf(buf, sizeof buf, "%zu|%.17g|%.17g|%.17g|%.17g;", l.epoch, l.loss,
                  l.val_mcr, l.lr, l.train_acc);
    mix(buf);
  }
  return h;
}

TrainResult train_model(Model& model, const LoadedDataset& dataset, const TrainConfig& cfg,
                        const NoiseBank* bank, const std::string& out_dir) {
  AVW_CHECK(cfg.batch_size >= 1, "batch_size must be >= 1");
  const auto& train = dataset.split("train");
  const auto& val = dataset.split("val");
  const bool audio_bearing = model.spec().kind != ModelKind::visual;
  if (audio_bearing && cfg.noise_augment)
    AVW_CHECK(bank != nullptr, "noise augmentation requested without a noise bank");

  std::ofstream log_out;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    log_out.open(fs::path(out_dir) / "log.jsonl");
    AVW_CHECK(log_out.good(), "cannot write training log in " << out_dir);
  }

  auto params = model.parameters();
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam<float> adam(acfg);
  PlateauScheduler sched(cfg.lr, cfg.patience, cfg.factor, cfg.lr_floor);

  std::vector<const Sample*> ptrs(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) ptrs[i] = &train[i];

  // last finite-loss snapshot, restored on divergence
  std::map<std::string, Tensor<float>> snapshot;
  auto take_snapshot = [&] {
    for (auto& [name, p] : params) snapshot[name] = p->value;
  };
  take_snapshot();

  TrainResult result;
  Rng root(cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng = root.fork("shuffle", epoch);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
    auto batches = bucket_by_kept(ptrs, model.spec().boundary_mode, order, cfg.batch_size);

    double loss_sum = 0.0;
    std::size_t seen = 0, train_correct = 0;
    bool diverged = false;
    Rng forward_rng = root.fork("forward", epoch);
    const bool video_bearing = model.spec().kind != ModelKind::audio;
    for (const auto& batch_idx : batches) {
      std::vector<const Sample*> bsamples;
      std::vector<NoiseSpec> specs(batch_idx.size());
      std::vector<const NoiseSpec*> spec_ptrs;
      std::vector<PixelShift> shifts(batch_idx.size());
      for (std::size_t bi = 0; bi < batch_idx.size(); ++bi) {
        const std::size_t idx = batch_idx[bi];
        bsamples.push_back(ptrs[idx]);
        if (audio_bearing && cfg.noise_augment) {
          Rng nrng = root.fork("noise", epoch, idx);
          specs[bi] = draw_train_noise_spec(*bank, ptrs[idx]->wave.samples.size(), nrng);
          spec_ptrs.push_back(&specs[bi]);
        }
        if (video_bearing && cfg.shift_augment_px > 0) {
          Rng srng = root.fork("shift", epoch, idx);
          const int span = 2 * static_cast<int>(cfg.shift_augment_px) + 1;
          shifts[bi].dx = static_cast<int>(srng.next_below(span)) -
                          static_cast<int>(cfg.shift_augment_px);
          shifts[bi].dy = static_cast<int>(srng.next_below(span)) -
                          static_cast<int>(cfg.shift_augment_px);
        }
      }
      const std::vector<const NoiseSpec*>* np = spec_ptrs.empty() ? nullptr : &spec_ptrs;
      const std::vector<PixelShift>* sp =
          (video_bearing && cfg.shift_augment_px > 0) ? &shifts : nullptr;
      Batch b = assemble_batch(bsamples, model.spec().kind, bank, np, sp);
      ForwardResult out = model.forward(b, Mode::train, forward_rng, &cfg.multimodal);
      const double loss = out.loss->value[0];
      if (!std::isfinite(loss)) {
        diverged = true;
        break;
      }
      loss_sum += loss * static_cast<double>(batch_idx.size());
      seen += batch_idx.size();
      const std::size_t k = out.posteriors.dim(1);
      for (std::size_t i = 0; i < batch_idx.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
          if (out.posteriors[i * k + c] > out.posteriors[i * k + best]) best = c;
        if (best == b.labels[i]) ++train_correct;
      }
      ad::backward(out.loss);
      adam.step(params);
    }

    if (diverged) {
      for (auto& [name, p] : params) p->value = snapshot[name];
      if (!out_dir.empty()) {
        auto bufs = model.buffers();
        CheckpointExtras extras;
        extras.optimizer = adam.export_state();
        extras.scheduler = sched.state();
        save_checkpoint((fs::path(out_dir) / "checkpoint").string(), params, bufs, extras);
      }
      result.stop_reason = "diverged";
      AVW_FAIL_AS(NumericError, "training diverged (non-finite loss) at epoch "
                                    << epoch << "; last-good checkpoint retained");
    }

    double train_acc = static_cast<double>(train_correct) / static_cast<double>(seen);
    if (cfg.stop_at_train_acc >= 0.0 && train_acc >= 0.9 * cfg.stop_at_train_acc) {
      // dropout makes in-batch accuracy pessimistic; confirm with a clean
      // eval-mode pass over the train split
      EvalReport train_rep = evaluate_mcr(model, train, dataset.vocab.size(), nullptr,
                                          nullptr, cfg.batch_size);
      train_acc = 1.0 - train_rep.mcr / 100.0;
    }
    EvalReport val_rep = evaluate_mcr(model, val, dataset.vocab.size(), nullptr, nullptr,
                                      cfg.batch_size);
    const double new_lr = sched.observe(val_rep.mcr);
    adam.set_lr(new_lr);
    result.best_val_mcr = std::min(result.best_val_mcr, val_rep.mcr);
    take_snapshot();

    EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(seen);
    log.val_mcr = val_rep.mcr;
    log.lr = new_lr;
    log.train_acc = train_acc;
    log.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.logs.push_back(log);
    if (log_out.is_open()) {
      json j{{"epoch", log.epoch}, {"loss", log.loss},   {"val_mcr", log.val_mcr},
             {"lr", log.lr},       {"train_acc", log.train_acc}, {"wall_s", log.wall_s}};
      log_out << j.dump() << "\n";
      log_out.flush();
    }

    if (cfg.stop_at_train_acc >= 0.0 && train_acc >= cfg.stop_at_train_acc) {
      result.stop_reason = "train_accuracy_target";
      break;
    }
    if (sched.exhausted()) {
      result.stop_reason = "lr_floor_patience_exhausted";
      break;
    }
    if (epoch == cfg.max_epochs) result.stop_reason = "max_epochs";
  }

  result.log_hash = hash_training_log(result.logs);
  if (!out_dir.empty()) {
    auto bufs = model.buffers();
    CheckpointExtras extras;
    extras.optimizer = adam.export_state();
    extras.scheduler = sched.state();
    save_checkpoint((fs::path(out_dir) / "checkpoint").string(), params, bufs, extras);
    json summary{{"log_hash", result.log_hash},
                 {"stop_reason", result.stop_reason},
                 {"epochs", result.logs.size()},
                 {"best_val_mcr", result.best_val_mcr}};
    std::ofstream sout(fs::path(out_dir) / "summary.json");
    sout << summary.dump(2) << "\n";
  }
  return result;
}

ContextOnlyResult context_only_eval(const ModelSpec& base_spec, const LoadedDataset& dataset,
                                    const TrainConfig& cfg, const std::string& out_dir) {
  ModelSpec spec = base_spec;
  spec.boundary_mode = BoundaryMode::remove_inside;
  Model model(spec, Rng(derive_seed(cfg.seed, "model-init")));
  ContextOnlyResult res;
  res.training = train_model(model, dataset, cfg, nullptr, out_dir);
  res.report = evaluate_mcr(model, dataset.split("test"), dataset.vocab.size());
  for (std::size_t w = 0; w < dataset.vocab.size(); ++w) {
    const std::size_t cnt = res.report.per_word_counts[w];
    const double mcr =
        cnt == 0 ? 100.0
                 : 100.0 * static_cast<double>(res.report.per_word_errors[w]) /
                       static_cast<double>(cnt);
    res.per_word_mcr.emplace_back(w, mcr);
    if (mcr <= 50.0) res.recognizable.push_back(w);
  }
  return res;
}

// ---------------------------------------------------------------------------
// two-stage visual training
// ---------------------------------------------------------------------------

std::vector<FeatureSample> extract_visual_features(Model& visual_model,
                                                   const std::vector<Sample>& samples,
                                                   std::size_t batch_size) {
  ResNet<float>* net = visual_model.visual_frontend();
  AVW_CHECK(net != nullptr, "feature extraction needs a model with a visual frontend");
  net->set_mode(Mode::eval);
  std::vector<FeatureSample> out(samples.size());
  for (std::size_t at = 0; at < samples.size(); at += batch_size) {
    const std::size_t len = std::min(batch_size, samples.size() - at);
    std::vector<const Sample*> ptrs(len);
    for (std::size_t i = 0; i < len; ++i) ptrs[i] = &samples[at + i];
    Batch b = assemble_batch(ptrs, ModelKind::visual, nullptr, nullptr);
    ad::NoGradGuard guard;
    auto feat = net->forward(ad::make_leaf<float>(std::move(b.frames)));  // [T,N,F]
    const std::size_t t = feat->shape()[0], f = feat->shape()[2];
    for (std::size_t i = 0; i < len; ++i) {
      FeatureSample fs;
      fs.features = Tensor<float>({t, f});
      for (std::size_t ti = 0; ti < t; ++ti)
        std::copy_n(feat->value.data() + (ti * len + i) * f, f,
                    fs.features.data() + ti * f);
      fs.bounds = samples[at + i].bounds;
      fs.label = samples[at + i].meta.label;
      fs.id = samples[at + i].meta.id;
      out[at + i] = std::move(fs);
    }
  }
  return out;
}

namespace {

// [T,N,F] batch from cached per-sample features
ad::VarPtr<float> stack_features(const std::vector<const FeatureSample*>& batch) {
  const std::size_t n = batch.size();
  const std::size_t t = batch[0]->features.dim(0);
  const std::size_t f = batch[0]->features.dim(1);
  Tensor<float> seq({t, n, f});
  for (std::size_t i = 0; i < n; ++i) {
    AVW_CHECK(batch[i]->features.shape() == batch[0]->features.shape(),
              "ragged feature shapes in a batch");
    for (std::size_t ti = 0; ti < t; ++ti)
      std::copy_n(batch[i]->features.data() + ti * f, f, seq.data() + (ti * n + i) * f);
  }
  return ad::make_leaf<float>(std::move(seq));
}

std::vector<std::vector<std::size_t>> bucket_features(
    const std::vector<const FeatureSample*>& samples, BoundaryMode mode,
    const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (std::size_t idx : order) {
    const auto* s = samples[idx];
    buckets[boundary_kept_rows(s->features.dim(0), s->bounds, mode)].push_back(idx);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [kept, idxs] : buckets)
    for (std::size_t at = 0; at < idxs.size(); at += batch_size) {
      const std::size_t len = std::min(batch_size, idxs.size() - at);
      batches.emplace_back(idxs.begin() + static_cast<std::ptrdiff_t>(at),
                           idxs.begin() + static_cast<std::ptrdiff_t>(at + len));
    }
  return batches;
}

ad::VarPtr<float> backend_logits_on_features(BilstmBackend<float>& backend,
                                             const std::vector<const FeatureSample*>& batch,
                                             BoundaryMode mode, Rng& rng, Mode run_mode) {
  auto seq = stack_features(batch);
  std::vector<BoundarySpec> bounds(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) bounds[i] = batch[i]->bounds;
  auto aug = boundary_augment<float>(seq, bounds, mode);
  return backend.forward(aug, aug, rng, run_mode);
}

}  // namespace

EvalReport evaluate_backend_on_features(BilstmBackend<float>& backend,
                                        const std::vector<FeatureSample>& samples,
                                        std::size_t vocab_size, BoundaryMode mode,
                                        std::size_t batch_size) {
  AVW_CHECK(!samples.empty(), "evaluate on an empty manifest");
  std::vector<const FeatureSample*> ptrs(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) ptrs[i] = &samples[i];
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto batches = bucket_features(ptrs, mode, order, batch_size);

  backend.set_mode(Mode::eval);
  Rng rng(0);
  std::vector<std::size_t> decisions(samples.size());
  for (const auto& batch_idx : batches) {
    std::vector<const FeatureSample*> batch;
    for (std::size_t idx : batch_idx) batch.push_back(ptrs[idx]);
    ad::NoGradGuard guard;
    auto logits = backend_logits_on_features(backend, batch, mode, rng, Mode::eval);
    auto post = softmax_rows(logits->value);
    const std::size_t k = post.dim(1);
    for (std::size_t i = 0; i < batch_idx.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (post[i * k + c] > post[i * k + best]) best = c;
      decisions[batch_idx[i]] = best;
    }
  }

  EvalReport r;
  r.total = samples.size();
  r.per_word_errors.assign(vocab_size, 0);
  r.per_word_counts.assign(vocab_size, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t target = samples[i].label;
    ++r.per_word_counts[target];
    if (decisions[i] == target) {
      ++r.correct;
    } else {
      ++r.per_word_errors[target];
      ++r.confusions[{target, decisions[i]}];
    }
  }
  r.mcr = 100.0 * (1.0 - static_cast<double>(r.correct) / static_cast<double>(r.total));
  return r;
}

TrainResult train_backend_on_features(BilstmBackend<float>& backend,
                                      const std::vector<FeatureSample>& train,
                                      const std::vector<FeatureSample>& val,
                                      std::size_t vocab_size, BoundaryMode mode,
                                      const TrainConfig& cfg) {
  ParamMap<float> params;
  BufMap<float> bufs;
  backend.collect("backend", params, bufs);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam<float> adam(acfg);
  PlateauScheduler sched(cfg.lr, cfg.patience, cfg.factor, cfg.lr_floor);

  std::vector<const FeatureSample*> ptrs(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) ptrs[i] = &train[i];

  TrainResult result;
  Rng root(cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng = root.fork("shuffle", epoch);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
    auto batches = bucket_features(ptrs, mode, order, cfg.batch_size);

    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    Rng forward_rng = root.fork("forward", epoch);
    backend.set_mode(Mode::train);
    for (const auto& batch_idx : batches) {
      std::vector<const FeatureSample*> batch;
      std::vector<std::size_t> labels;
      for (std::size_t idx : batch_idx) {
        batch.push_back(ptrs[idx]);
        labels.push_back(ptrs[idx]->label);
      }
      auto logits = backend_logits_on_features(backend, batch, mode, forward_rng,
                                               Mode::train);
      auto ce = ad::softmax_cross_entropy<float>(logits, labels);
      const double loss = ce.loss->value[0];
      AVW_CHECK(std::isfinite(loss), "backend training diverged");
      loss_sum += loss * static_cast<double>(batch.size());
      seen += batch.size();
      const std::size_t k = ce.posteriors.dim(1);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
          if (ce.posteriors[i * k + c] > ce.posteriors[i * k + best]) best = c;
        if (best == labels[i]) ++correct;
      }
      ad::backward(ce.loss);
      adam.step(params);
    }

    double train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (train_acc >= 0.9) {
      auto rep = evaluate_backend_on_features(backend, train, vocab_size, mode,
                                              cfg.batch_size);
      train_acc = 1.0 - rep.mcr / 100.0;
      backend.set_mode(Mode::train);
    }
    auto val_rep = evaluate_backend_on_features(backend, val, vocab_size, mode,
                                                cfg.batch_size);
    backend.set_mode(Mode::train);
    const double new_lr = sched.observe(val_rep.mcr);
    adam.set_lr(new_lr);
    result.best_val_mcr = std::min(result.best_val_mcr, val_rep.mcr);

    EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(seen);
    log.val_mcr = val_rep.mcr;
    log.lr = new_lr;
    log.train_acc = train_acc;
    log.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.logs.push_back(log);

    if (cfg.stop_at_train_acc >= 0.0 && train_acc >= cfg.stop_at_train_acc) {
      result.stop_reason = "train_accuracy_target";
      break;
    }
    if (sched.exhausted()) {
      result.stop_reason = "lr_floor_patience_exhausted";
      break;
    }
    if (epoch == cfg.max_epochs) result.stop_reason = "max_epochs";
  }
  result.log_hash = hash_training_log(result.logs);
  return result;
}

Model assemble_visual_model(ModelSpec bilstm_spec, Model& frontend_donor,
                            BilstmBackend<float>& backend, std::uint64_t init_seed) {
  bilstm_spec.kind = ModelKind::visual;
  bilstm_spec.backend_kind = BackendKind::bilstm;
  Model model(bilstm_spec, Rng(derive_seed(init_seed, "model-init")));
  auto dst_params = model.parameters();
  auto dst_bufs = model.buffers();
  auto src_params = frontend_donor.parameters();
  auto src_bufs = frontend_donor.buffers();
  ParamMap<float> be_params;
  BufMap<float> be_bufs;
  backend.collect("backend", be_params, be_bufs);

  for (auto& [name, p] : dst_params) {
    ad::VarPtr<float> src;
    if (name.rfind("visual.", 0) == 0) src = src_params.at(name);
    else if (name.rfind("backend.", 0) == 0) src = be_params.at(name);
    AVW_CHECK(src != nullptr, "no donor for parameter " << name);
    AVW_CHECK(src->value.shape() == p->value.shape(), "donor shape mismatch for " << name);
    p->value = src->value;
  }
  for (auto& [name, t] : dst_bufs) {
    Tensor<float>* src = nullptr;
    if (name.rfind("visual.", 0) == 0) src = src_bufs.at(name);
    else if (name.rfind("backend.", 0) == 0) src = be_bufs.at(name);
    AVW_CHECK(src != nullptr, "no donor for buffer " << name);
    *t = *src;
  }
  return model;
}

void write_eval_report(const EvalReport& report, const Vocabulary& vocab,
                       const std::string& dir, const std::string& stem) {
  fs::create_directories(dir);
  {
    std::ofstream csv(fs::path(dir) / (stem + "_per_word.csv"));
    csv << "word,count,errors,mcr\n";
    for (std::size_t w = 0; w < vocab.size(); ++w) {
      const std::size_t cnt = report.per_word_counts[w];
      const double mcr = cnt == 0 ? 0.0
                                  : 100.0 * static_cast<double>(report.per_word_errors[w]) /
                                        static_cast<double>(cnt);
      csv << vocab.words[w] << "," << cnt << "," << report.per_word_errors[w] << "," << mcr
          << "\n";
    }
  }
  {
    std::ofstream csv(fs::path(dir) / (stem + "_confusions.csv"));
    csv << "target,estimated,count\n";
    for (const auto& [target, estimated, count] :
         confusion_pairs(report, report.confusions.size()))
      csv << vocab.words[target] << "," << vocab.words[estimated] << "," << count << "\n";
  }
  json j{{"mcr", report.mcr}, {"total", report.total}, {"correct", report.correct}};
  std::ofstream js(fs::path(dir) / (stem + ".json"));
  js << j.dump(2) << "\n";
}

void write_sweep_report(const SweepReport& report, const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream csv(fs::path(dir) / "snr_sweep.csv");
    csv << "set,mcr\n";
    for (const auto& row : report.per_set) csv << row.set_name << "," << row.mcr << "\n";
  }
  {
    std::ofstream csv(fs::path(dir) / "category_sweep.csv");
    csv << "category,mcr\n";
    for (const auto& [cat, mcr] : report.per_category) csv << cat << "," << mcr << "\n";
  }
  json j;
  for (const auto& row : report.per_set) j["per_set"][row.set_name] = row.mcr;
  for (const auto& [cat, mcr] : report.per_category) j["per_category"][cat] = mcr;
  std::ofstream js(fs::path(dir) / "snr_sweep.json");
  js << j.dump(2) << "\n";
}

}  // namespace avword
