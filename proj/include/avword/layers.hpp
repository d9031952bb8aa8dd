// Thin parameterized layer wrappers shared by the frontends and backends.
//
// Every layer exposes collect(prefix, params, buffers) so checkpoints and the
// optimizer see a flat, name-ordered view of the model.
#pragma once

#include <map>
#include <string>

#include "avword/nn_ops.hpp"

namespace avword {

template <typename T>
using ParamMap = std::map<std::string, ad::VarPtr<T>>;
template <typename T>
using BufMap = std::map<std::string, Tensor<T>*>;

template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct Conv3dLayer {
  ConvSpec spec;
  ad::VarPtr<T> w;
  ad::VarPtr<T> b;  // null when spec.bias_enabled is false

  static Conv3dLayer make(const ConvSpec& spec, Rng& rng) {
    spec.validate();
    Conv3dLayer l;
    l.spec = spec;
    const std::size_t fan_in =
        spec.in_channels * spec.kernel.t * spec.kernel.h * spec.kernel.w;
    l.w = ad::make_leaf<T>(
        uniform_init<T>({spec.out_channels, spec.in_channels, spec.kernel.t,
                         spec.kernel.h, spec.kernel.w},
                        fan_in, rng),
        true);
    if (spec.bias_enabled)
      l.b = ad::make_leaf<T>(uniform_init<T>({spec.out_channels}, fan_in, rng), true);
    return l;
  }

  ad::VarPtr<T> forward(const ad::VarPtr<T>& x) const {
    return ad::conv3d(x, spec, w, b);
  }

  void collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs) {
    params[prefix + ".w"] = w;
    if (b) params[prefix + ".b"] = b;
    (void)bufs;
  }
};

template <typename T>
struct BatchNormLayer {
  ad::BatchNormState<T> state;
  bool conv_layout = true;

  static BatchNormLayer make(std::size_t features, bool conv_layout) {
    BatchNormLayer l;
    l.state = ad::BatchNormState<T>::make(features);
    l.conv_layout = conv_layout;
    return l;
  }

  ad::VarPtr<T> forward(const ad::VarPtr<T>& x) {
    return conv_layout ? ad::batchnorm_conv(x, state) : ad::batchnorm_seq(x, state);
  }

  void set_mode(Mode m) { state.mode = m; }

  void collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs) {
    params[prefix + ".gamma"] = state.gamma;
    params[prefix + ".beta"] = state.beta;
    bufs[prefix + ".running_mean"] = &state.running_mean;
    bufs[prefix + ".running_var"] = &state.running_var;
  }
};

template <typename T>
struct LinearLayer {
  ad::VarPtr<T> w;  // [out x in]
  ad::VarPtr<T> b;  // null when bias disabled

  static LinearLayer make(std::size_t in, std::size_t out, Rng& rng, bool bias = true) {
    LinearLayer l;
    l.w = ad::make_leaf<T>(uniform_init<T>({out, in}, in, rng), true);
    if (bias) l.b = ad::make_leaf<T>(uniform_init<T>({out}, in, rng), true);
    return l;
  }

  ad::VarPtr<T> forward(const ad::VarPtr<T>& x) const { return ad::linear(x, w, b); }

  void collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs) {
    params[prefix + ".w"] = w;
    if (b) params[prefix + ".b"] = b;
    (void)bufs;
  }
};

}  // namespace avword
