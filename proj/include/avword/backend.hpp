// Word-boundary conditioning and the two classification backends: the
// temporal-convolutional Backend I and the bidirectional-LSTM Backend II.
#pragma once

#include <string>
#include <vector>

#include "avword/lstm.hpp"

namespace avword {

// Half-open video-frame interval [start, end) occupied by the target word.
struct BoundarySpec {
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;

  void validate(std::size_t t_total) const {
    AVW_CHECK(start_frame < end_frame && end_frame <= t_total,
              "boundary [" << start_frame << "," << end_frame << ") invalid for T="
                           << t_total);
  }
  std::size_t width() const { return end_frame - start_frame; }
};

enum class BoundaryMode { indicator, remove_outside, remove_inside, unused };

BoundaryMode boundary_mode_from_string(const std::string& s);
std::string boundary_mode_to_string(BoundaryMode m);

struct Vocabulary {
  std::vector<std::string> words;

  std::size_t size() const { return words.size(); }
  void validate() const;
  static Vocabulary make_default(std::size_t n);
};

// Applies one boundary mode to a time-major feature sequence [T,N,D] with one
// BoundarySpec per sample. indicator appends a 0/1 column (optionally scaled
// per sample, for multimodal boundary dropping); remove modes drop rows and
// require every sample in the batch to keep the same number of rows.
template <typename T>
ad::VarPtr<T> boundary_augment(const ad::VarPtr<T>& features,
                               const std::vector<BoundarySpec>& specs, BoundaryMode mode,
                               const std::vector<T>* indicator_scale = nullptr);

// Kept-row count for one sample under a boundary mode.
std::size_t boundary_kept_rows(std::size_t t_total, const BoundarySpec& spec,
                               BoundaryMode mode);

enum class Aggregation { average, last };

struct BilstmBackendConfig {
  std::size_t layers = 2;  // 1 or 2
  Aggregation aggregate = Aggregation::average;
  bool batch_norm = true;   // after temporal aggregation
  bool dropout = true;      // p=0.30 at LSTM inputs, p=0.15 after aggregation
  std::size_t hidden = 256;
  std::size_t n_classes = 500;
  double input_dropout_p = 0.30;
  double head_dropout_p = 0.15;
};

template <typename T>
struct BilstmBackend {
  BilstmBackendConfig cfg;
  DirectionalStack<T> fwd;
  DirectionalStack<T> bwd;
  BatchNormLayer<T> head_bn;  // used when cfg.batch_norm
  LinearLayer<T> head;        // 2*hidden -> n_classes, Fig. 2 has no bottleneck

  static BilstmBackend make(std::size_t input_dim, const BilstmBackendConfig& cfg, Rng& rng);

  // Per-direction inputs [T,N,D] -> logits [N,K]. Both directions may receive
  // the same sequence (visual path) or direction-specific ones (audio path).
  ad::VarPtr<T> forward(const ad::VarPtr<T>& feat_fwd, const ad::VarPtr<T>& feat_bwd,
                        Rng& rng, Mode mode);

  void set_mode(Mode m);
  void collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs);
};

struct TConvBackendConfig {
  std::size_t in_channels = 256;
  std::size_t bottleneck = 256;
  std::size_t n_classes = 500;
};

// Two blocks of {temporal conv (stride 2, channels x2) -> BN -> ReLU -> max
// pool (stride 2)}, then 1024 -> 256 -> K. For T=29: 29 -> 15 -> 7 -> 4 -> 1.
template <typename T>
struct TConvBackend {
  TConvBackendConfig cfg;
  Conv3dLayer<T> conv1;
  BatchNormLayer<T> bn1;
  Conv3dLayer<T> conv2;
  BatchNormLayer<T> bn2;
  LinearLayer<T> bottleneck;
  LinearLayer<T> head;

  static TConvBackend make(const TConvBackendConfig& cfg, Rng& rng);
  ad::VarPtr<T> forward(const ad::VarPtr<T>& feat /*[T,N,C]*/, Mode mode);
  void set_mode(Mode m);
  void collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs);

  // symbolic t-extent chain for tests: {29, 15, 7, 4, 1} for T=29
  static std::vector<std::size_t> t_chain(std::size_t t_in);
};

}  // namespace avword
