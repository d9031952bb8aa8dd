// Residual-network visual frontend: spatiotemporal stem, four stages of 2D
// basic blocks (temporal kernel 1, temporal stride 1 everywhere), and a fully
// connected head replacing average pooling. Maps [N,1,T,S,S] frame stacks to
// a 256-dim feature per frame.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "avword/layers.hpp"

namespace avword {

enum class StemMode { spatiotemporal, spatial };  // 3D vs 2D input layers

struct ResNetConfig {
  int depth = 18;  // 18 or 34
  std::size_t input_spatial = 112;
  std::size_t stem_temporal_kernel = 5;
  StemMode stem_mode = StemMode::spatiotemporal;
  std::size_t feature_dim = 256;

  // stage block counts: (2,2,2,2) for 18, (3,4,6,3) for 34
  std::array<std::size_t, 4> block_plan() const;
  void validate() const;
};

struct ShapeChain {
  // channels x spatial entries: input, then after each of the four stages
  std::vector<std::array<std::size_t, 3>> stages;  // {C, H, W}
  std::size_t flattened = 0;   // 512 * s4 * s4
  std::size_t feature_dim = 0; // FC output
  std::string str() const;     // "1x112x112 -> 64x28x28 -> ... -> 8192 -> 256"
};

// Symbolic shape chain; no data is run.
ShapeChain shape_chain_report(const ResNetConfig& cfg, std::size_t spatial);

template <typename T>
struct BasicBlock {
  Conv3dLayer<T> conv1;
  BatchNormLayer<T> bn1;
  Conv3dLayer<T> conv2;
  BatchNormLayer<T> bn2;
  std::optional<Conv3dLayer<T>> proj;      // 1x1 shortcut at stage boundaries
  std::optional<BatchNormLayer<T>> proj_bn;

  static BasicBlock make(std::size_t in_ch, std::size_t out_ch, std::size_t spatial_stride,
                         Rng& rng);
  ad::VarPtr<T> forward(const ad::VarPtr<T>& x);
  void set_mode(Mode m);
  void collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs);
};

template <typename T>
class ResNet {
 public:
  ResNet(const ResNetConfig& cfg, Rng& rng);

  // frames [N,1,T,S,S] (normalized grayscale) -> time-major features [T,N,F]
  ad::VarPtr<T> forward(const ad::VarPtr<T>& frames);

  void set_mode(Mode m);
  void collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs);
  const ResNetConfig& config() const { return cfg_; }

 private:
  ResNetConfig cfg_;
  Conv3dLayer<T> stem_conv_;
  BatchNormLayer<T> stem_bn_;
  std::vector<std::vector<BasicBlock<T>>> stages_;
  LinearLayer<T> fc_;
};

// Contract wrapper: [N,1,T,S,S] -> [N,T,F]
template <typename T>
ad::VarPtr<T> visual_forward(ResNet<T>& net, const ad::VarPtr<T>& frames, Mode mode);

}  // namespace avword
