// Assembly of the three end-to-end networks (visual-only, audio-only,
// audiovisual intermediate), multimodal-dropout training masks, and late
// (posterior-level) fusion.
#pragma once

#include <memory>
#include <optional>

#include "avword/audio.hpp"
#include "avword/backend.hpp"
#include "avword/resnet.hpp"

namespace avword {

enum class ModelKind { visual, audio, audiovisual };

ModelKind model_kind_from_string(const std::string& s);
std::string model_kind_to_string(ModelKind k);

enum class BackendKind { bilstm, tconv };

struct ModelSpec {
  ModelKind kind = ModelKind::visual;
  BoundaryMode boundary_mode = BoundaryMode::indicator;
  ResNetConfig resnet;                  // visual / audiovisual
  AudioFrontendConfig audio_frontend;   // audio / audiovisual
  BackendKind backend_kind = BackendKind::bilstm;
  BilstmBackendConfig backend;
  std::size_t vocab_size = 500;

  void validate() const;
  // per-direction feature width seen by the backend
  std::size_t backend_input_dim() const;
};

struct MultimodalDropConfig {
  double p_drop_audio = 0.25;
  double p_drop_video = 0.25;
  double p_drop_boundaries = 0.25;
  bool coupled = true;
  bool enabled = true;

  void validate() const;
};

struct ModalityMask {
  bool use_audio = true;
  bool use_video = true;
  bool use_boundaries = true;
};

// Coupled sampling: {keep both: 0.5, drop audio only: 0.25, drop video only:
// 0.25}; boundaries dropped independently. Train mode only.
ModalityMask multimodal_mask_sample(const MultimodalDropConfig& cfg, Rng& rng, Mode mode);

struct FusionConfig {
  double gamma = 0.40;  // visual weight
  void validate() const {
    AVW_CHECK(gamma >= 0.0 && gamma <= 1.0, "fusion gamma must lie in [0,1]");
  }
};

// out_w proportional to p_v(w)^gamma * p_a(w)^(1-gamma), renormalized. Zero
// cells are floored at 1e-12 (with a logged warning) before exponentiation.
Tensor<float> late_fuse(const Tensor<float>& p_v, const Tensor<float>& p_a,
                        const FusionConfig& cfg);

// One assembled minibatch. Sequences are equal-length within a batch (the
// loader buckets by kept length under remove modes).
struct Batch {
  Tensor<float> frames;    // [N,1,T,S,S], per-video normalized; empty for audio-only
  Tensor<float> spectra;   // [T_A,N,161], utterance-normalized; empty for visual-only
  std::vector<BoundarySpec> bounds;
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
};

struct ForwardResult {
  ad::VarPtr<float> loss;      // null in eval-only calls without labels
  Tensor<float> posteriors;    // [N,K]
};

class Model {
 public:
  Model(const ModelSpec& spec, Rng rng);

  // Builds the graph for one batch; train mode applies dropout masks and
  // multimodal stream dropping (audiovisual kind).
  ForwardResult forward(const Batch& batch, Mode mode, Rng& rng,
                        const MultimodalDropConfig* mm = nullptr);

  const ModelSpec& spec() const { return spec_; }
  void set_mode(Mode m);
  ParamMap<float> parameters();
  BufMap<float> buffers();
  ResNet<float>* visual_frontend() { return visual_.get(); }

 private:
  ad::VarPtr<float> backend_logits(const ad::VarPtr<float>& feat_fwd,
                                   const ad::VarPtr<float>& feat_bwd, Rng& rng, Mode mode);

  ModelSpec spec_;
  std::unique_ptr<ResNet<float>> visual_;
  std::optional<AudioFrontend<float>> audio_;
  std::optional<BilstmBackend<float>> bilstm_;
  std::optional<TConvBackend<float>> tconv_;
};

}  // namespace avword
