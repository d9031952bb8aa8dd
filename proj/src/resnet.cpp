#include "avword/resnet.hpp"

#include <sstream>

namespace avword {

std::array<std::size_t, 4> ResNetConfig::block_plan() const {
  if (depth == 18) return {2, 2, 2, 2};
  if (depth == 34) return {3, 4, 6, 3};
  AVW_FAIL("ResNet depth must be 18 or 34, got " << depth);
}

void ResNetConfig::validate() const {
  block_plan();
  AVW_CHECK(stem_mode == StemMode::spatiotemporal || stem_temporal_kernel == 1,
            "2D stem requires temporal kernel 1");
  AVW_CHECK(stem_temporal_kernel % 2 == 1, "stem temporal kernel must be odd");
  AVW_CHECK(input_spatial >= 16 && input_spatial % 16 == 0,
            "input spatial size " << input_spatial
                                  << " is not supported; minimum legal size is 16 and the"
                                     " extent must be a multiple of 16");
  AVW_CHECK(feature_dim >= 1, "feature_dim must be >= 1");
}

namespace {

std::size_t halve(std::size_t x) { return (x - 1) / 2 + 1; }  // stride-2, k=3, p=1

constexpr std::array<std::size_t, 4> kStageChannels{64, 128, 256, 512};

}  // namespace

ShapeChain shape_chain_report(const ResNetConfig& cfg, std::size_t spatial) {
  ResNetConfig probe = cfg;
  probe.input_spatial = spatial;
  probe.validate();
  ShapeChain chain;
  chain.stages.push_back({1, spatial, spatial});
  // stem conv (k7 s2 p3) then maxpool (k3 s2 p1); stage 1 keeps the extent
  std::size_t s = halve(halve(spatial));
  chain.stages.push_back({kStageChannels[0], s, s});
  for (int st = 1; st < 4; ++st) {
    s = halve(s);
    chain.stages.push_back({kStageChannels[static_cast<std::size_t>(st)], s, s});
  }
  chain.flattened = kStageChannels[3] * s * s;
  chain.feature_dim = cfg.feature_dim;
  return chain;
}

std::string ShapeChain::str() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) os << " -> ";
    os << stages[i][0] << "x" << stages[i][1] << "x" << stages[i][2];
  }
  os << " -> " << flattened << " -> " << feature_dim;
  return os.str();
}

template <typename T>
BasicBlock<T> BasicBlock<T>::make(std::size_t in_ch, std::size_t out_ch,
                                  std::size_t spatial_stride, Rng& rng) {
  BasicBlock<T> b;
  ConvSpec c1;
  c1.in_channels = in_ch;
  c1.out_channels = out_ch;
  c1.kernel = {1, 3, 3};
  c1.stride = {1, spatial_stride, spatial_stride};
  c1.padding = {0, 1, 1};
  c1.bias_enabled = false;
  b.conv1 = Conv3dLayer<T>::make(c1, rng);
  b.bn1 = BatchNormLayer<T>::make(out_ch, true);
  ConvSpec c2 = c1;
  c2.in_channels = out_ch;
  c2.stride = {1, 1, 1};
  b.conv2 = Conv3dLayer<T>::make(c2, rng);
  b.bn2 = BatchNormLayer<T>::make(out_ch, true);
  if (in_ch != out_ch || spatial_stride != 1) {
    ConvSpec p;
    p.in_channels = in_ch;
    p.out_channels = out_ch;
    p.kernel = {1, 1, 1};
    p.stride = {1, spatial_stride, spatial_stride};
    p.padding = {0, 0, 0};
    p.bias_enabled = false;
    b.proj = Conv3dLayer<T>::make(p, rng);
    b.proj_bn = BatchNormLayer<T>::make(out_ch, true);
  }
  return b;
}

template <typename T>
ad::VarPtr<T> BasicBlock<T>::forward(const ad::VarPtr<T>& x) {
  auto y = bn2.forward(conv2.forward(ad::relu(bn1.forward(conv1.forward(x)))));
  auto shortcut = proj ? proj_bn->forward(proj->forward(x)) : x;
  return ad::relu(ad::add(y, shortcut));
}

template <typename T>
void BasicBlock<T>::set_mode(Mode m) {
  bn1.set_mode(m);
  bn2.set_mode(m);
  if (proj_bn) proj_bn->set_mode(m);
}

template <typename T>
void BasicBlock<T>::collect(const std::string& prefix, ParamMap<T>& params,
                            BufMap<T>& bufs) {
  conv1.collect(prefix + ".conv1", params, bufs);
  bn1.collect(prefix + ".bn1", params, bufs);
  conv2.collect(prefix + ".conv2", params, bufs);
  bn2.collect(prefix + ".bn2", params, bufs);
  if (proj) {
    proj->collect(prefix + ".proj", params, bufs);
    proj_bn->collect(prefix + ".proj_bn", params, bufs);
  }
}

template <typename T>
ResNet<T>::ResNet(const ResNetConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t kt = cfg_.stem_mode == StemMode::spatiotemporal
                             ? cfg_.stem_temporal_kernel
                             : 1;
  ConvSpec stem;
  stem.in_channels = 1;
  stem.out_channels = kStageChannels[0];
  stem.kernel = {kt, 7, 7};
  stem.stride = {1, 2, 2};
  stem.padding = {kt / 2, 3, 3};
  stem.bias_enabled = false;
  stem_conv_ = Conv3dLayer<T>::make(stem, rng);
  stem_bn_ = BatchNormLayer<T>::make(kStageChannels[0], true);

  const auto plan = cfg_.block_plan();
  std::size_t in_ch = kStageChannels[0];
  for (std::size_t st = 0; st < 4; ++st) {
    std::vector<BasicBlock<T>> blocks;
    for (std::size_t i = 0; i < plan[st]; ++i) {
      const std::size_t stride = (st > 0 && i == 0) ? 2 : 1;
      blocks.push_back(BasicBlock<T>::make(in_ch, kStageChannels[st], stride, rng));
      in_ch = kStageChannels[st];
    }
    stages_.push_back(std::move(blocks));
  }

  const auto chain = shape_chain_report(cfg_, cfg_.input_spatial);
  fc_ = LinearLayer<T>::make(chain.flattened, cfg_.feature_dim, rng);
}

template <typename T>
ad::VarPtr<T> ResNet<T>::forward(const ad::VarPtr<T>& frames) {
  const Shape& s = frames->shape();
  AVW_CHECK(s.size() == 5, "visual frontend expects [N,1,T,H,W] frames");
  AVW_CHECK(s[1] == 1, "visual frontend expects a single grayscale channel, got " << s[1]);
  AVW_CHECK(s[3] == cfg_.input_spatial && s[4] == cfg_.input_spatial,
            "visual frontend built for " << cfg_.input_spatial << "x" << cfg_.input_spatial
                                         << ", got " << s[3] << "x" << s[4]);
  auto x = ad::relu(stem_bn_.forward(stem_conv_.forward(frames)));
  x = ad::maxpool3d<T>(x, {1, 3, 3}, {1, 2, 2}, {0, 1, 1});
  for (auto& stage : stages_)
    for (auto& block : stage) x = block.forward(x);
  auto seq = ad::conv_to_time_major(x);  // [T,N,512*s*s]
  return fc_.forward(seq);               // [T,N,F]
}

template <typename T>
void ResNet<T>::set_mode(Mode m) {
  stem_bn_.set_mode(m);
  for (auto& stage : stages_)
    for (auto& block : stage) block.set_mode(m);
}

template <typename T>
void ResNet<T>::collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs) {
  stem_conv_.collect(prefix + ".stem.conv", params, bufs);
  stem_bn_.collect(prefix + ".stem.bn", params, bufs);
  for (std::size_t st = 0; st < stages_.size(); ++st)
    for (std::size_t i = 0; i < stages_[st].size(); ++i)
      stages_[st][i].collect(prefix + ".stage" + std::to_string(st + 1) + ".block" +
                                 std::to_string(i),
                             params, bufs);
  fc_.collect(prefix + ".fc", params, bufs);
}

template <typename T>
ad::VarPtr<T> visual_forward(ResNet<T>& net, const ad::VarPtr<T>& frames, Mode mode) {
  net.set_mode(mode);
  auto seq = net.forward(frames);       // [T,N,F]
  return ad::transpose01(seq);          // [N,T,F]
}

template struct BasicBlock<float>;
template class ResNet<float>;
template ad::VarPtr<float> visual_forward<float>(ResNet<float>&, const ad::VarPtr<float>&, Mode);

}  // namespace avword
