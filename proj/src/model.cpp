#include "avword/model.hpp"

#include <cmath>
#include <cstdio>

namespace avword {

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "visual") return ModelKind::visual;
  if (s == "audio") return ModelKind::audio;
  if (s == "audiovisual") return ModelKind::audiovisual;
  AVW_FAIL("unknown model kind '" << s << "' (expected visual, audio or audiovisual)");
}

std::string model_kind_to_string(ModelKind k) {
  switch (k) {
    case ModelKind::visual: return "visual";
    case ModelKind::audio: return "audio";
    case ModelKind::audiovisual: return "audiovisual";
  }
  AVW_FAIL("bad model kind value");
}

void ModelSpec::validate() const {
  AVW_CHECK(vocab_size >= 2, "vocab_size must be >= 2");
  if (kind != ModelKind::audio) resnet.validate();
  if (kind != ModelKind::visual) {
    AVW_CHECK(audio_frontend.hidden >= 1 && audio_frontend.layers >= 1,
              "audio frontend needs at least one layer and one unit");
  }
  if (kind == ModelKind::audiovisual) {
    // both frontends must land on the 25 fps video rate
    AVW_CHECK(audio_frontend.subsample != PyramidalMode::none &&
                  audio_frontend.layers == 2,
              "frame-rate mismatch: the audiovisual backend needs the audio frontend to"
              " reduce 100 fps to 25 fps (two subsampling layers)");
  }
  if (backend_kind == BackendKind::tconv)
    AVW_CHECK(kind == ModelKind::visual && boundary_mode != BoundaryMode::indicator,
              "Backend I is the visual initialization backend; it takes raw 256-wide"
              " features (no indicator column)");
}

std::size_t ModelSpec::backend_input_dim() const {
  const std::size_t b = boundary_mode == BoundaryMode::indicator ? 1 : 0;
  switch (kind) {
    case ModelKind::visual: return resnet.feature_dim + b;
    case ModelKind::audio: return audio_frontend.hidden;  // boundaries enter the spectra
    case ModelKind::audiovisual: return resnet.feature_dim + audio_frontend.hidden + b;
  }
  AVW_FAIL("bad model kind value");
}

void MultimodalDropConfig::validate() const {
  AVW_CHECK(p_drop_audio >= 0 && p_drop_audio < 1, "p_drop_audio out of range");
  AVW_CHECK(p_drop_video >= 0 && p_drop_video < 1, "p_drop_video out of range");
  AVW_CHECK(p_drop_boundaries >= 0 && p_drop_boundaries < 1, "p_drop_boundaries out of range");
  if (coupled)
    AVW_CHECK(p_drop_audio + p_drop_video <= 1.0,
              "coupled multimodal dropping needs p_drop_audio + p_drop_video <= 1");
}

ModalityMask multimodal_mask_sample(const MultimodalDropConfig& cfg, Rng& rng, Mode mode) {
  AVW_CHECK(mode == Mode::train, "multimodal_mask_sample is a train-mode operation");
  cfg.validate();
  ModalityMask m;
  if (cfg.coupled) {
    const double u = rng.next_double();
    if (u < cfg.p_drop_audio) {
      m.use_audio = false;
    } else if (u < cfg.p_drop_audio + cfg.p_drop_video) {
      m.use_video = false;
    }
  } else {
    m.use_audio = !rng.bernoulli(cfg.p_drop_audio);
    m.use_video = !rng.bernoulli(cfg.p_drop_video);
  }
  m.use_boundaries = !rng.bernoulli(cfg.p_drop_boundaries);
  return m;
}

Tensor<float> late_fuse(const Tensor<float>& p_v, const Tensor<float>& p_a,
                        const FusionConfig& cfg) {
  cfg.validate();
  AVW_CHECK(p_v.shape() == p_a.shape() && p_v.ndim() == 1,
            "late_fuse expects two equal-length posterior vectors");
  const std::size_t k = p_v.numel();
  auto check_norm = [&](const Tensor<float>& p, const char* name) {
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += p[i];
    AVW_CHECK(std::fabs(sum - 1.0) < 1e-6, "" << name << " posterior sums to " << sum);
  };
  check_norm(p_v, "visual");
  check_norm(p_a, "audio");

  std::size_t floored = 0;
  std::vector<double> logw(k);
  double mx = -1e300;
  for (std::size_t i = 0; i < k; ++i) {
    double pv = p_v[i], pa = p_a[i];
    if (pv < 1e-12) {
      pv = 1e-12;
      ++floored;
    }
    if (pa < 1e-12) {
      pa = 1e-12;
      ++floored;
    }
    logw[i] = cfg.gamma * std::log(pv) + (1.0 - cfg.gamma) * std::log(pa);
    mx = std::max(mx, logw[i]);
  }
  if (floored > 0)
    std::fprintf(stderr, "[avword] late_fuse: floored %zu zero posterior cells at 1e-12\n",
                 floored);
  double z = 0.0;
  Tensor<float> out({k});
  for (std::size_t i = 0; i < k; ++i) {
    logw[i] = std::exp(logw[i] - mx);
    z += logw[i];
  }
  for (std::size_t i = 0; i < k; ++i) out[i] = static_cast<float>(logw[i] / z);
  return out;
}

// ---------------------------------------------------------------------------
// Model assembly
// ---------------------------------------------------------------------------

Model::Model(const ModelSpec& spec, Rng rng) : spec_(spec) {
  spec_.validate();
  if (spec_.kind != ModelKind::audio) {
    Rng vr = rng.fork("visual-init");
    visual_ = std::make_unique<ResNet<float>>(spec_.resnet, vr);
  }
  if (spec_.kind != ModelKind::visual) {
    AudioFrontendConfig acfg = spec_.audio_frontend;
    acfg.input_dim = kSpectralBins;
    if (spec_.kind == ModelKind::audio && spec_.boundary_mode == BoundaryMode::indicator)
      acfg.input_dim += 1;  // indicator joins the spectra in the audio-only network
    spec_.audio_frontend = acfg;
    Rng ar = rng.fork("audio-init");
    audio_ = AudioFrontend<float>::make(acfg, ar);
  }
  Rng br = rng.fork("backend-init");
  if (spec_.backend_kind == BackendKind::bilstm) {
    BilstmBackendConfig bcfg = spec_.backend;
    bcfg.n_classes = spec_.vocab_size;
    spec_.backend = bcfg;
    bilstm_ = BilstmBackend<float>::make(spec_.backend_input_dim(), bcfg, br);
  } else {
    TConvBackendConfig tcfg;
    tcfg.in_channels = spec_.backend_input_dim();
    tcfg.n_classes = spec_.vocab_size;
    tconv_ = TConvBackend<float>::make(tcfg, br);
  }
}

void Model::set_mode(Mode m) {
  if (visual_) visual_->set_mode(m);
  if (audio_) audio_->set_mode(m);
  if (bilstm_) bilstm_->set_mode(m);
  if (tconv_) tconv_->set_mode(m);
}

ParamMap<float> Model::parameters() {
  ParamMap<float> p;
  BufMap<float> b;
  if (visual_) visual_->collect("visual", p, b);
  if (audio_) audio_->collect("audio", p, b);
  if (bilstm_) bilstm_->collect("backend", p, b);
  if (tconv_) tconv_->collect("backend", p, b);
  return p;
}

BufMap<float> Model::buffers() {
  ParamMap<float> p;
  BufMap<float> b;
  if (visual_) visual_->collect("visual", p, b);
  if (audio_) audio_->collect("audio", p, b);
  if (bilstm_) bilstm_->collect("backend", p, b);
  if (tconv_) tconv_->collect("backend", p, b);
  return b;
}

ad::VarPtr<float> Model::backend_logits(const ad::VarPtr<float>& feat_fwd,
                                        const ad::VarPtr<float>& feat_bwd, Rng& rng,
                                        Mode mode) {
  if (bilstm_) return bilstm_->forward(feat_fwd, feat_bwd, rng, mode);
  return tconv_->forward(feat_fwd, mode);
}

ForwardResult Model::forward(const Batch& batch, Mode mode, Rng& rng,
                             const MultimodalDropConfig* mm) {
  set_mode(mode);
  std::optional<ad::NoGradGuard> guard;
  if (mode == Mode::eval) guard.emplace();

  const std::size_t n = batch.size();
  AVW_CHECK(n > 0, "empty batch");

  // per-sample modality masks (audiovisual training regularization)
  std::vector<float> keep_v(n, 1.0f), keep_a(n, 1.0f), keep_b(n, 1.0f);
  if (mode == Mode::train && mm && mm->enabled && spec_.kind == ModelKind::audiovisual) {
    for (std::size_t i = 0; i < n; ++i) {
      const ModalityMask m = multimodal_mask_sample(*mm, rng, mode);
      keep_a[i] = m.use_audio ? 1.0f : 0.0f;
      keep_v[i] = m.use_video ? 1.0f : 0.0f;
      keep_b[i] = m.use_boundaries ? 1.0f : 0.0f;
    }
  }

  ad::VarPtr<float> logits;
  switch (spec_.kind) {
    case ModelKind::visual: {
      AVW_CHECK(batch.frames.numel() > 0, "visual model given a batch without frames");
      auto frames = ad::make_leaf<float>(batch.frames);
      auto feat = visual_->forward(frames);  // [T,N,F]
      auto aug = boundary_augment<float>(feat, batch.bounds, spec_.boundary_mode);
      logits = backend_logits(aug, aug, rng, mode);
      break;
    }
    case ModelKind::audio: {
      AVW_CHECK(batch.spectra.numel() > 0, "audio model given a batch without spectra");
      auto seq = ad::make_leaf<float>(batch.spectra);  // [T_A,N,161]
      std::vector<BoundarySpec> audio_bounds(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto [s, e] = video_to_audio_interval(batch.bounds[i].start_frame,
                                              batch.bounds[i].end_frame);
        audio_bounds[i] = {s, e};
      }
      auto aug = boundary_augment<float>(seq, audio_bounds, spec_.boundary_mode);
      auto [ff, fb] = audio_->forward(aug, rng, mode);
      logits = backend_logits(ff, fb, rng, mode);
      break;
    }
    case ModelKind::audiovisual: {
      AVW_CHECK(batch.frames.numel() > 0 && batch.spectra.numel() > 0,
                "audiovisual model needs frames and spectra");
      auto frames = ad::make_leaf<float>(batch.frames);
      auto xv = visual_->forward(frames);                       // [T,N,F]
      auto spectra = ad::make_leaf<float>(batch.spectra);       // [T_A,N,161]
      auto [xa_f, xa_b] = audio_->forward(spectra, rng, mode);  // [T',N,H] each
      AVW_CHECK(xv->shape()[0] == xa_f->shape()[0],
                "frame-rate mismatch: visual frontend emits " << xv->shape()[0]
                                                              << " frames, audio frontend "
                                                              << xa_f->shape()[0]);
      Tensor<float> kv({n}), ka({n});
      for (std::size_t i = 0; i < n; ++i) {
        kv[i] = keep_v[i];
        ka[i] = keep_a[i];
      }
      auto xv_m = ad::scale_per_sample(xv, kv);
      auto xa_f_m = ad::scale_per_sample(xa_f, ka);
      auto xa_b_m = ad::scale_per_sample(xa_b, ka);
      auto make_dir = [&](const ad::VarPtr<float>& xa_d) {
        auto cat = ad::concat_cols<float>({xv_m, xa_d});
        return boundary_augment<float>(cat, batch.bounds, spec_.boundary_mode, &keep_b);
      };
      logits = backend_logits(make_dir(xa_f_m), make_dir(xa_b_m), rng, mode);
      break;
    }
  }

  ForwardResult out;
  if (!batch.labels.empty()) {
    auto ce = ad::softmax_cross_entropy<float>(logits, batch.labels);
    out.loss = ce.loss;
    out.posteriors = std::move(ce.posteriors);
  } else {
    out.posteriors = softmax_rows(logits->value);
  }
  return out;
}

}  // namespace avword
