#include "avword/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "avword/parallel.hpp"
#include "simd_kernels.hpp"

namespace avword {

void ConvSpec::validate() const {
  AVW_CHECK(out_channels >= 1 && in_channels >= 1, "conv channels must be >= 1");
  AVW_CHECK(kernel.t >= 1 && kernel.h >= 1 && kernel.w >= 1, "conv kernel extents must be >= 1");
  AVW_CHECK(stride.t >= 1 && stride.h >= 1 && stride.w >= 1, "conv stride extents must be >= 1");
  AVW_CHECK(padding.t < kernel.t, "conv padding must be < kernel on axis t");
  AVW_CHECK(padding.h < kernel.h, "conv padding must be < kernel on axis h");
  AVW_CHECK(padding.w < kernel.w, "conv padding must be < kernel on axis w");
}

Dims3 ConvSpec::output_extent(const Dims3& in) const {
  auto one = [](std::size_t L, std::size_t p, std::size_t k, std::size_t s, const char* axis) {
    AVW_CHECK(L + 2 * p >= k, "conv input too small on axis " << axis << ": extent " << L
                                                              << " with padding " << p
                                                              << " < kernel " << k);
    return (L + 2 * p - k) / s + 1;
  };
  return {one(in.t, padding.t, kernel.t, stride.t, "t"),
          one(in.h, padding.h, kernel.h, stride.h, "h"),
          one(in.w, padding.w, kernel.w, stride.w, "w")};
}

namespace ad {

namespace {

// im2col: one sample, row per output position, column per (ci,kt,kh,kw)
template <typename T>
void build_col(const T* in, std::size_t Ci, const Dims3& id, const Dims3& od,
               const ConvSpec& spec, T* col) {
  const std::size_t Kt = spec.kernel.t, Kh = spec.kernel.h, Kw = spec.kernel.w;
  const std::size_t D = Ci * Kt * Kh * Kw;
  const std::size_t in_hw = id.h * id.w;
  const std::size_t in_thw = id.t * in_hw;
  for (std::size_t to = 0; to < od.t; ++to) {
    const std::ptrdiff_t ti0 = static_cast<std::ptrdiff_t>(to * spec.stride.t) -
                               static_cast<std::ptrdiff_t>(spec.padding.t);
    for (std::size_t ho = 0; ho < od.h; ++ho) {
      const std::ptrdiff_t hi0 = static_cast<std::ptrdiff_t>(ho * spec.stride.h) -
                                 static_cast<std::ptrdiff_t>(spec.padding.h);
      for (std::size_t wo = 0; wo < od.w; ++wo) {
        const std::ptrdiff_t wi0 = static_cast<std::ptrdiff_t>(wo * spec.stride.w) -
                                   static_cast<std::ptrdiff_t>(spec.padding.w);
        T* dst = col + ((to * od.h + ho) * od.w + wo) * D;
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          const T* inc = in + ci * in_thw;
          for (std::size_t kt = 0; kt < Kt; ++kt) {
            const std::ptrdiff_t ti = ti0 + static_cast<std::ptrdiff_t>(kt);
            if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(id.t)) {
              std::fill_n(dst, Kh * Kw, T(0));
              dst += Kh * Kw;
              continue;
            }
            for (std::size_t kh = 0; kh < Kh; ++kh) {
              const std::ptrdiff_t hi = hi0 + static_cast<std::ptrdiff_t>(kh);
              if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(id.h)) {
                std::fill_n(dst, Kw, T(0));
                dst += Kw;
                continue;
              }
              const T* irow = inc + (static_cast<std::size_t>(ti) * id.h +
                                     static_cast<std::size_t>(hi)) * id.w;
              for (std::size_t kw = 0; kw < Kw; ++kw) {
                const std::ptrdiff_t wi = wi0 + static_cast<std::ptrdiff_t>(kw);
                *dst++ = (wi >= 0 && wi < static_cast<std::ptrdiff_t>(id.w))
                             ? irow[static_cast<std::size_t>(wi)]
                             : T(0);
              }
            }
          }
        }
      }
    }
  }
}

// scatter-add of a column-space gradient back into one sample's input gradient
template <typename T>
void col2im_add(const T* gcol, std::size_t Ci, const Dims3& id, const Dims3& od,
                const ConvSpec& spec, T* gin) {
  const std::size_t Kt = spec.kernel.t, Kh = spec.kernel.h, Kw = spec.kernel.w;
  const std::size_t D = Ci * Kt * Kh * Kw;
  const std::size_t in_hw = id.h * id.w;
  const std::size_t in_thw = id.t * in_hw;
  for (std::size_t to = 0; to < od.t; ++to) {
    const std::ptrdiff_t ti0 = static_cast<std::ptrdiff_t>(to * spec.stride.t) -
                               static_cast<std::ptrdiff_t>(spec.padding.t);
    for (std::size_t ho = 0; ho < od.h; ++ho) {
      const std::ptrdiff_t hi0 = static_cast<std::ptrdiff_t>(ho * spec.stride.h) -
                                 static_cast<std::ptrdiff_t>(spec.padding.h);
      for (std::size_t wo = 0; wo < od.w; ++wo) {
        const std::ptrdiff_t wi0 = static_cast<std::ptrdiff_t>(wo * spec.stride.w) -
                                   static_cast<std::ptrdiff_t>(spec.padding.w);
        const T* src = gcol + ((to * od.h + ho) * od.w + wo) * D;
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          T* ginc = gin + ci * in_thw;
          for (std::size_t kt = 0; kt < Kt; ++kt) {
            const std::ptrdiff_t ti = ti0 + static_cast<std::ptrdiff_t>(kt);
            if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(id.t)) {
              src += Kh * Kw;
              continue;
            }
            for (std::size_t kh = 0; kh < Kh; ++kh) {
              const std::ptrdiff_t hi = hi0 + static_cast<std::ptrdiff_t>(kh);
              if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(id.h)) {
                src += Kw;
                continue;
              }
              T* grow = ginc + (static_cast<std::size_t>(ti) * id.h +
                                static_cast<std::size_t>(hi)) * id.w;
              for (std::size_t kw = 0; kw < Kw; ++kw) {
                const std::ptrdiff_t wi = wi0 + static_cast<std::ptrdiff_t>(kw);
                if (wi >= 0 && wi < static_cast<std::ptrdiff_t>(id.w))
                  grow[static_cast<std::size_t>(wi)] += *src;
                ++src;
              }
            }
          }
        }
      }
    }
  }
}

using simd::axpy;
using simd::dot;

}  // namespace

template <typename T>
VarPtr<T> conv3d(const VarPtr<T>& input, const ConvSpec& spec, const VarPtr<T>& weights,
                 const VarPtr<T>& bias) {
  spec.validate();
  const Shape& is = input->shape();
  AVW_CHECK(is.size() == 5, "conv3d input must be [N,C,T,H,W], got " << shape_str(is));
  AVW_CHECK(is[1] == spec.in_channels, "conv3d: input channel axis has extent "
                                           << is[1] << ", spec expects "
                                           << spec.in_channels);
  const Shape ws_want = {spec.out_channels, spec.in_channels, spec.kernel.t,
                         spec.kernel.h, spec.kernel.w};
  AVW_CHECK(weights->shape() == ws_want, "conv3d: weights shaped "
                                             << shape_str(weights->shape()) << ", want "
                                             << shape_str(ws_want));
  if (bias) {
    AVW_CHECK(spec.bias_enabled, "conv3d: bias passed but spec disables it");
    AVW_CHECK(bias->shape() == Shape{spec.out_channels}, "conv3d: bias shape mismatch");
  } else {
    AVW_CHECK(!spec.bias_enabled, "conv3d: spec enables bias but none passed");
  }
  check_finite(input->value, "conv3d input");

  const std::size_t N = is[0], Ci = is[1];
  const Dims3 id{is[2], is[3], is[4]};
  const Dims3 od = spec.output_extent(id);
  const std::size_t Co = spec.out_channels;
  const std::size_t P = od.t * od.h * od.w;
  const std::size_t D = Ci * spec.kernel.t * spec.kernel.h * spec.kernel.w;

  Tensor<T> out({N, Co, od.t, od.h, od.w});
  const T* W = weights->value.data();
  const T* B = bias ? bias->value.data() : nullptr;

  // position tiles keep a col slab cache-resident while the weight rows sweep
  const std::size_t tile = std::max<std::size_t>(16, std::min<std::size_t>(96, 262144 / (D + 1)));
  auto gemm_rows = [&](const T* col, T* on, std::size_t cb, std::size_t ce) {
    for (std::size_t p0 = 0; p0 < P; p0 += tile) {
      const std::size_t p1 = std::min(P, p0 + tile);
      for (std::size_t co = cb; co < ce; ++co) {
        const T* wrow = W + co * D;
        const T base = B ? B[co] : T(0);
        T* orow = on + co * P;
        for (std::size_t pos = p0; pos < p1; ++pos)
          orow[pos] = base + dot(wrow, col + pos * D, D);
      }
    }
  };

  if (N >= 2 * worker_count()) {
    parallel_for_chunked(N, [&](std::size_t b, std::size_t e) {
      std::vector<T> col(P * D);
      for (std::size_t n = b; n < e; ++n) {
        build_col(input->value.data() + n * Ci * id.t * id.h * id.w, Ci, id, od, spec,
                  col.data());
        gemm_rows(col.data(), out.data() + n * Co * P, 0, Co);
      }
    });
  } else {
    std::vector<T> col(P * D);
    for (std::size_t n = 0; n < N; ++n) {
      build_col(input->value.data() + n * Ci * id.t * id.h * id.w, Ci, id, od, spec,
                col.data());
      T* on = out.data() + n * Co * P;
      parallel_for_chunked(Co, [&](std::size_t cb, std::size_t ce) {
        gemm_rows(col.data(), on, cb, ce);
      });
    }
  }

  auto in_v = input;
  auto w_v = weights;
  auto b_v = bias;
  return make_node<T>(std::move(out), {input, weights, bias},
                      [in_v, w_v, b_v, spec, id, od, N, Ci, Co, P, D](Var<T>& self) {
    const T* g = self.grad.data();
    const std::size_t in_sz = Ci * id.t * id.h * id.w;

    const std::size_t tile =
        std::max<std::size_t>(16, std::min<std::size_t>(96, 262144 / (D + 1)));

    if (in_v->requires_grad) {
      T* gin = in_v->grad_ref().data();
      const T* W = w_v->value.data();
      parallel_for_chunked(N, [&](std::size_t b, std::size_t e) {
        std::vector<T> gcol(P * D);
        for (std::size_t n = b; n < e; ++n) {
          std::fill(gcol.begin(), gcol.end(), T(0));
          const T* gn = g + n * Co * P;
          for (std::size_t p0 = 0; p0 < P; p0 += tile) {
            const std::size_t p1 = std::min(P, p0 + tile);
            for (std::size_t co = 0; co < Co; ++co) {
              const T* wrow = W + co * D;
              const T* grow = gn + co * P;
              for (std::size_t pos = p0; pos < p1; ++pos) {
                const T f = grow[pos];
                if (f != T(0)) axpy(f, wrow, gcol.data() + pos * D, D);
              }
            }
          }
          col2im_add(gcol.data(), Ci, id, od, spec, gin + n * in_sz);
        }
      });
    }

    if (w_v->requires_grad) {
      T* gw = w_v->grad_ref().data();
      std::vector<T> col(P * D);
      for (std::size_t n = 0; n < N; ++n) {  // sequential: fixed reduction order
        build_col(in_v->value.data() + n * in_sz, Ci, id, od, spec, col.data());
        const T* gn = g + n * Co * P;
        parallel_for_chunked(Co, [&](std::size_t cb, std::size_t ce) {
          for (std::size_t p0 = 0; p0 < P; p0 += tile) {
            const std::size_t p1 = std::min(P, p0 + tile);
            for (std::size_t co = cb; co < ce; ++co) {
              const T* grow = gn + co * P;
              T* gwrow = gw + co * D;
              for (std::size_t pos = p0; pos < p1; ++pos) {
                const T f = grow[pos];
                if (f != T(0)) axpy(f, col.data() + pos * D, gwrow, D);
              }
            }
          }
        });
      }
    }

    if (b_v && b_v->requires_grad) {
      T* gb = b_v->grad_ref().data();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Co; ++co) {
          const T* grow = g + (n * Co + co) * P;
          T acc = T(0);
          for (std::size_t pos = 0; pos < P; ++pos) acc += grow[pos];
          gb[co] += acc;
        }
    }
  });
}

template <typename T>
VarPtr<T> maxpool3d(const VarPtr<T>& input, Dims3 kernel, Dims3 stride, Dims3 padding) {
  const Shape& is = input->shape();
  AVW_CHECK(is.size() == 5, "maxpool3d input must be [N,C,T,H,W]");
  AVW_CHECK(padding.t < kernel.t && padding.h < kernel.h && padding.w < kernel.w,
            "maxpool3d padding must be < kernel");
  const Dims3 id{is[2], is[3], is[4]};
  AVW_CHECK(kernel.t <= id.t + 2 * padding.t, "maxpool3d kernel larger than input axis t");
  AVW_CHECK(kernel.h <= id.h + 2 * padding.h, "maxpool3d kernel larger than input axis h");
  AVW_CHECK(kernel.w <= id.w + 2 * padding.w, "maxpool3d kernel larger than input axis w");
  const std::size_t N = is[0], C = is[1];
  ConvSpec tmp;
  tmp.kernel = kernel;
  tmp.stride = stride;
  tmp.padding = padding;
  const Dims3 od = tmp.output_extent(id);

  Tensor<T> out({N, C, od.t, od.h, od.w});
  const std::size_t P = od.t * od.h * od.w;
  const std::size_t S = id.t * id.h * id.w;
  // argmax, flat within each (n,c) volume
  auto arg = std::make_shared<std::vector<std::uint32_t>>(N * C * P);

  parallel_for(N * C, [&](std::size_t nc) {
    const T* in = input->value.data() + nc * S;
    T* op = out.data() + nc * P;
    std::uint32_t* ap = arg->data() + nc * P;
    std::size_t pos = 0;
    for (std::size_t to = 0; to < od.t; ++to)
      for (std::size_t ho = 0; ho < od.h; ++ho)
        for (std::size_t wo = 0; wo < od.w; ++wo, ++pos) {
          const std::ptrdiff_t t0 = static_cast<std::ptrdiff_t>(to * stride.t) -
                                    static_cast<std::ptrdiff_t>(padding.t);
          const std::ptrdiff_t h0 = static_cast<std::ptrdiff_t>(ho * stride.h) -
                                    static_cast<std::ptrdiff_t>(padding.h);
          const std::ptrdiff_t w0 = static_cast<std::ptrdiff_t>(wo * stride.w) -
                                    static_cast<std::ptrdiff_t>(padding.w);
          T best = T(0);
          std::uint32_t besti = 0;
          bool first = true;
          for (std::size_t kt = 0; kt < kernel.t; ++kt) {
            const std::ptrdiff_t ti = t0 + static_cast<std::ptrdiff_t>(kt);
            if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(id.t)) continue;
            for (std::size_t kh = 0; kh < kernel.h; ++kh) {
              const std::ptrdiff_t hi = h0 + static_cast<std::ptrdiff_t>(kh);
              if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(id.h)) continue;
              for (std::size_t kw = 0; kw < kernel.w; ++kw) {
                const std::ptrdiff_t wi = w0 + static_cast<std::ptrdiff_t>(kw);
                if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(id.w)) continue;
                const std::size_t idx = (static_cast<std::size_t>(ti) * id.h +
                                         static_cast<std::size_t>(hi)) * id.w +
                                        static_cast<std::size_t>(wi);
                const T v = in[idx];
                if (first || v > best) {  // first-index tie-break in scan order
                  best = v;
                  besti = static_cast<std::uint32_t>(idx);
                  first = false;
                }
              }
            }
          }
          op[pos] = best;
          ap[pos] = besti;
        }
  });

  auto in_v = input;
  return make_node<T>(std::move(out), {input}, [in_v, arg, P, S, N, C](Var<T>& self) {
    if (!in_v->requires_grad) return;
    T* gin = in_v->grad_ref().data();
    const T* g = self.grad.data();
    parallel_for(N * C, [&](std::size_t nc) {
      const std::uint32_t* ap = arg->data() + nc * P;
      const T* gp = g + nc * P;
      T* gi = gin + nc * S;
      for (std::size_t pos = 0; pos < P; ++pos) gi[ap[pos]] += gp[pos];
    });
  });
}

template <typename T>
VarPtr<T> linear(const VarPtr<T>& x, const VarPtr<T>& weights, const VarPtr<T>& bias) {
  const Shape& xs = x->shape();
  AVW_CHECK(!xs.empty(), "linear on scalar");
  const Shape& ws = weights->shape();
  AVW_CHECK(ws.size() == 2, "linear weights must be [D' x D]");
  const std::size_t Din = xs.back();
  AVW_CHECK(Din == ws[1], "linear: trailing extent " << Din << " does not match weight input dim "
                                                     << ws[1]);
  const std::size_t Dout = ws[0];
  if (bias) AVW_CHECK(bias->shape() == Shape{Dout}, "linear: bias shape mismatch");
  const std::size_t R = x->numel() / Din;

  Shape os = xs;
  os.back() = Dout;
  Tensor<T> out(os);
  const T* W = weights->value.data();
  const T* B = bias ? bias->value.data() : nullptr;
  const bool par = R * Dout * Din > 100000;
  auto fwd = [&](std::size_t rb, std::size_t re) {
    for (std::size_t r = rb; r < re; ++r) {
      const T* xr = x->value.data() + r * Din;
      T* orow = out.data() + r * Dout;
      for (std::size_t j = 0; j < Dout; ++j)
        orow[j] = (B ? B[j] : T(0)) + dot(W + j * Din, xr, Din);
    }
  };
  if (par) parallel_for_chunked(R, fwd);
  else fwd(0, R);

  auto xv = x;
  auto wv = weights;
  auto bv = bias;
  return make_node<T>(std::move(out), {x, weights, bias},
                      [xv, wv, bv, R, Din, Dout](Var<T>& self) {
    const T* g = self.grad.data();
    const bool par = R * Dout * Din > 100000;
    if (xv->requires_grad) {
      T* gx = xv->grad_ref().data();
      const T* W = wv->value.data();
      auto run = [&](std::size_t rb, std::size_t re) {
        for (std::size_t r = rb; r < re; ++r) {
          const T* grow = g + r * Dout;
          T* gxr = gx + r * Din;
          for (std::size_t j = 0; j < Dout; ++j)
            if (grow[j] != T(0)) axpy(grow[j], W + j * Din, gxr, Din);
        }
      };
      if (par) parallel_for_chunked(R, run);
      else run(0, R);
    }
    if (wv->requires_grad) {
      T* gw = wv->grad_ref().data();
      const T* X = xv->value.data();
      auto run = [&](std::size_t jb, std::size_t je) {
        for (std::size_t j = jb; j < je; ++j) {
          T* gwr = gw + j * Din;
          for (std::size_t r = 0; r < R; ++r) {
            const T f = g[r * Dout + j];
            if (f != T(0)) axpy(f, X + r * Din, gwr, Din);
          }
        }
      };
      if (par) parallel_for_chunked(Dout, run);
      else run(0, Dout);
    }
    if (bv && bv->requires_grad) {
      T* gb = bv->grad_ref().data();
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < Dout; ++j) gb[j] += g[r * Dout + j];
    }
  });
}

template <typename T>
VarPtr<T> conv_to_time_major(const VarPtr<T>& x) {
  const Shape& s = x->shape();
  AVW_CHECK(s.size() == 5, "conv_to_time_major expects [N,C,T,H,W]");
  const std::size_t N = s[0], C = s[1], Tt = s[2], HW = s[3] * s[4];
  Tensor<T> out({Tt, N, C * HW});
  const T* src = x->value.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < Tt; ++t)
        std::copy_n(src + ((n * C + c) * Tt + t) * HW, HW,
                    out.data() + (t * N + n) * C * HW + c * HW);
  auto xv = x;
  return make_node<T>(std::move(out), {x}, [xv, N, C, Tt, HW](Var<T>& self) {
    if (!xv->requires_grad) return;
    T* gx = xv->grad_ref().data();
    const T* g = self.grad.data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < Tt; ++t) {
          const T* grow = g + (t * N + n) * C * HW + c * HW;
          T* gxr = gx + ((n * C + c) * Tt + t) * HW;
          for (std::size_t i = 0; i < HW; ++i) gxr[i] += grow[i];
        }
  });
}

template <typename T>
VarPtr<T> seq_to_conv5d(const VarPtr<T>& x) {
  const Shape& s = x->shape();
  AVW_CHECK(s.size() == 3, "seq_to_conv5d expects [T,N,C]");
  const std::size_t Tt = s[0], N = s[1], C = s[2];
  Tensor<T> out({N, C, Tt, 1, 1});
  for (std::size_t t = 0; t < Tt; ++t)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        out[(n * C + c) * Tt + t] = x->value[(t * N + n) * C + c];
  auto xv = x;
  return make_node<T>(std::move(out), {x}, [xv, Tt, N, C](Var<T>& self) {
    if (!xv->requires_grad) return;
    T* gx = xv->grad_ref().data();
    const T* g = self.grad.data();
    for (std::size_t t = 0; t < Tt; ++t)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          gx[(t * N + n) * C + c] += g[(n * C + c) * Tt + t];
  });
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

template <typename T>
BatchNormState<T> BatchNormState<T>::make(std::size_t features) {
  BatchNormState<T> st;
  st.feature_count = features;
  st.gamma = make_leaf<T>(Tensor<T>::full({features}, T(1)), true);
  st.beta = make_leaf<T>(Tensor<T>({features}), true);
  st.running_mean = Tensor<T>({features});
  st.running_var = Tensor<T>::full({features}, T(1));
  return st;
}

template struct BatchNormState<float>;
template struct BatchNormState<double>;

namespace {

// Generic BN given a feature-indexed view: the caller provides loops that map
// (reduce-index r, feature f) -> flat offset.
// conv layout: feature stride S contiguous per (n,c); seq layout: row-wise.

template <typename T>
struct BnCommon {
  std::vector<T> mean, invstd;
};

}  // namespace

template <typename T>
static VarPtr<T> batchnorm_impl(const VarPtr<T>& x, BatchNormState<T>& state, bool conv_layout) {
  const Shape& s = x->shape();
  std::size_t C, m;  // features, reduce count
  if (conv_layout) {
    AVW_CHECK(s.size() == 5, "batchnorm_conv expects [N,C,T,H,W]");
    C = s[1];
    m = s[0] * s[2] * s[3] * s[4];
  } else {
    AVW_CHECK(s.size() == 3, "batchnorm_seq expects [T,N,D]");
    C = s[2];
    m = s[0] * s[1];
  }
  AVW_CHECK(C == state.feature_count, "batchnorm: feature axis extent "
                                          << C << " does not match state feature_count "
                                          << state.feature_count);

  const std::size_t N = conv_layout ? s[0] : 0;
  const std::size_t S = conv_layout ? s[2] * s[3] * s[4] : 0;  // per (n,c) block
  const std::size_t R = conv_layout ? 0 : s[0] * s[1];         // seq rows

  auto mean = std::make_shared<std::vector<T>>(C, T(0));
  auto invstd = std::make_shared<std::vector<T>>(C, T(0));
  const bool train = state.mode == Mode::train;

  if (train) {
    if (conv_layout) {
      parallel_for(C, [&](std::size_t c) {
        T acc = T(0);
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = x->value.data() + (n * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) acc += p[i];
        }
        const T mu = acc / static_cast<T>(m);
        T v = T(0);
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = x->value.data() + (n * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) {
            const T d = p[i] - mu;
            v += d * d;
          }
        }
        (*mean)[c] = mu;
        (*invstd)[c] = T(1) / std::sqrt(v / static_cast<T>(m) + state.epsilon);
      });
    } else {
      std::vector<T>& mu = *mean;
      std::vector<T> var(C, T(0));
      for (std::size_t r = 0; r < R; ++r) {
        const T* p = x->value.data() + r * C;
        for (std::size_t c = 0; c < C; ++c) mu[c] += p[c];
      }
      for (std::size_t c = 0; c < C; ++c) mu[c] /= static_cast<T>(m);
      for (std::size_t r = 0; r < R; ++r) {
        const T* p = x->value.data() + r * C;
        for (std::size_t c = 0; c < C; ++c) {
          const T d = p[c] - mu[c];
          var[c] += d * d;
        }
      }
      for (std::size_t c = 0; c < C; ++c)
        (*invstd)[c] = T(1) / std::sqrt(var[c] / static_cast<T>(m) + state.epsilon);
    }
    // running-stat update (momentum), biased batch variance
    for (std::size_t c = 0; c < C; ++c) {
      const T bv = T(1) / ((*invstd)[c] * (*invstd)[c]) - state.epsilon;
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] +
                              state.momentum * (*mean)[c];
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] +
                             state.momentum * (bv < T(0) ? T(0) : bv);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      (*mean)[c] = state.running_mean[c];
      (*invstd)[c] = T(1) / std::sqrt(state.running_var[c] + state.epsilon);
    }
  }

  Tensor<T> out(s);
  const T* gam = state.gamma->value.data();
  const T* bet = state.beta->value.data();
  if (conv_layout) {
    parallel_for(N * C, [&](std::size_t nc) {
      const std::size_t c = nc % C;
      const T* p = x->value.data() + nc * S;
      T* o = out.data() + nc * S;
      const T mu = (*mean)[c], is = (*invstd)[c], ga = gam[c], be = bet[c];
      for (std::size_t i = 0; i < S; ++i) o[i] = (p[i] - mu) * is * ga + be;
    });
  } else {
    for (std::size_t r = 0; r < R; ++r) {
      const T* p = x->value.data() + r * C;
      T* o = out.data() + r * C;
      for (std::size_t c = 0; c < C; ++c)
        o[c] = (p[c] - (*mean)[c]) * (*invstd)[c] * gam[c] + bet[c];
    }
  }

  auto xv = x;
  auto gv = state.gamma;
  auto bv = state.beta;
  return make_node<T>(
      std::move(out), {x, state.gamma, state.beta},
      [xv, gv, bv, mean, invstd, conv_layout, C, N, S, R, m, train](Var<T>& self) {
        const T* g = self.grad.data();
        const T* X = xv->value.data();
        const T* gam = gv->value.data();
        // per-feature sums of g and g*xhat
        std::vector<T> sg(C, T(0)), sgx(C, T(0));
        if (conv_layout) {
          parallel_for(C, [&](std::size_t c) {
            T a = T(0), b = T(0);
            const T mu = (*mean)[c], is = (*invstd)[c];
            for (std::size_t n = 0; n < N; ++n) {
              const T* gp = g + (n * C + c) * S;
              const T* xp = X + (n * C + c) * S;
              for (std::size_t i = 0; i < S; ++i) {
                a += gp[i];
                b += gp[i] * (xp[i] - mu) * is;
              }
            }
            sg[c] = a;
            sgx[c] = b;
          });
        } else {
          for (std::size_t r = 0; r < R; ++r) {
            const T* gp = g + r * C;
            const T* xp = X + r * C;
            for (std::size_t c = 0; c < C; ++c) {
              sg[c] += gp[c];
              sgx[c] += gp[c] * (xp[c] - (*mean)[c]) * (*invstd)[c];
            }
          }
        }
        if (bv->requires_grad) {
          T* gb = bv->grad_ref().data();
          for (std::size_t c = 0; c < C; ++c) gb[c] += sg[c];
        }
        if (gv->requires_grad) {
          T* gg = gv->grad_ref().data();
          for (std::size_t c = 0; c < C; ++c) gg[c] += sgx[c];
        }
        if (!xv->requires_grad) return;
        T* gx = xv->grad_ref().data();
        const T invm = T(1) / static_cast<T>(m);
        if (conv_layout) {
          parallel_for(N * C, [&](std::size_t nc) {
            const std::size_t c = nc % C;
            const T mu = (*mean)[c], is = (*invstd)[c];
            const T k = gam[c] * is;
            const T* gp = g + nc * S;
            const T* xp = X + nc * S;
            T* gxp = gx + nc * S;
            if (train) {
              const T c1 = sg[c] * invm, c2 = sgx[c] * invm;
              for (std::size_t i = 0; i < S; ++i)
                gxp[i] += k * (gp[i] - c1 - (xp[i] - mu) * is * c2);
            } else {
              for (std::size_t i = 0; i < S; ++i) gxp[i] += k * gp[i];
            }
          });
        } else {
          for (std::size_t r = 0; r < R; ++r) {
            const T* gp = g + r * C;
            const T* xp = X + r * C;
            T* gxp = gx + r * C;
            for (std::size_t c = 0; c < C; ++c) {
              const T k = gam[c] * (*invstd)[c];
              if (train) {
                gxp[c] += k * (gp[c] - sg[c] * invm -
                               (xp[c] - (*mean)[c]) * (*invstd)[c] * sgx[c] * invm);
              } else {
                gxp[c] += k * gp[c];
              }
            }
          }
        }
      });
}

template <typename T>
VarPtr<T> batchnorm_conv(const VarPtr<T>& x, BatchNormState<T>& state) {
  return batchnorm_impl(x, state, true);
}

template <typename T>
VarPtr<T> batchnorm_seq(const VarPtr<T>& x, BatchNormState<T>& state) {
  return batchnorm_impl(x, state, false);
}

// ---------------------------------------------------------------------------
// softmax cross entropy
// ---------------------------------------------------------------------------

template <typename T>
SoftmaxCEOut<T> softmax_cross_entropy(const VarPtr<T>& logits,
                                      const std::vector<std::size_t>& labels) {
  const Shape& s = logits->shape();
  std::size_t N, K;
  if (s.size() == 1) {
    N = 1;
    K = s[0];
  } else {
    AVW_CHECK(s.size() == 2, "softmax_cross_entropy expects [N,K] logits");
    N = s[0];
    K = s[1];
  }
  AVW_CHECK(labels.size() == N, "softmax_cross_entropy: " << labels.size()
                                                          << " labels for " << N << " rows");
  for (std::size_t lbl : labels)
    AVW_CHECK(lbl < K, "label " << lbl << " out of range [0," << K << ")");
  check_finite(logits->value, "softmax_cross_entropy logits");

  Tensor<T> post({N, K});
  T loss = T(0);
  for (std::size_t r = 0; r < N; ++r) {
    const T* row = logits->value.data() + r * K;
    T mx = row[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    T sum = T(0);
    T* prow = post.data() + r * K;
    for (std::size_t k = 0; k < K; ++k) {
      prow[k] = std::exp(row[k] - mx);
      sum += prow[k];
    }
    const T inv = T(1) / sum;
    for (std::size_t k = 0; k < K; ++k) prow[k] *= inv;
    loss += std::log(sum) - (row[labels[r]] - mx);
  }
  loss /= static_cast<T>(N);

  auto lv = logits;
  auto post_copy = std::make_shared<Tensor<T>>(post);
  auto labels_copy = labels;
  SoftmaxCEOut<T> out;
  out.posteriors = std::move(post);
  out.loss = make_node<T>(Tensor<T>::scalar(loss), {logits},
                          [lv, post_copy, labels_copy, N, K](Var<T>& self) {
                            if (!lv->requires_grad) return;
                            T* gl = lv->grad_ref().data();
                            const T gs = self.grad[0] / static_cast<T>(N);
                            const T* p = post_copy->data();
                            for (std::size_t r = 0; r < N; ++r) {
                              for (std::size_t k = 0; k < K; ++k)
                                gl[r * K + k] += gs * p[r * K + k];
                              gl[r * K + labels_copy[r]] -= gs;
                            }
                          });
  return out;
}

// ---------------------------------------------------------------------------
// shared-mask dropout
// ---------------------------------------------------------------------------

template <typename T>
VarPtr<T> dropout_shared_mask(const VarPtr<T>& seq, double p, Rng& rng, Mode mode) {
  AVW_CHECK(p >= 0.0 && p < 1.0, "dropout probability must be in [0,1), got " << p);
  const Shape& s = seq->shape();
  AVW_CHECK(s.size() == 2 || s.size() == 3, "dropout_shared_mask expects [T,D] or [T,N,D]");
  if (mode == Mode::eval || p == 0.0) return seq;

  const std::size_t Tt = s[0];
  const std::size_t N = s.size() == 3 ? s[1] : 1;
  const std::size_t D = s.back();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask({N, D});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d)
      mask[n * D + d] = rng.bernoulli(1.0 - p) ? keep_scale : T(0);

  Tensor<T> out(s);
  for (std::size_t t = 0; t < Tt; ++t)
    for (std::size_t n = 0; n < N; ++n) {
      const T* src = seq->value.data() + (t * N + n) * D;
      const T* mk = mask.data() + n * D;
      T* dst = out.data() + (t * N + n) * D;
      for (std::size_t d = 0; d < D; ++d) dst[d] = src[d] * mk[d];
    }
  auto sv = seq;
  return make_node<T>(std::move(out), {seq}, [sv, mask = std::move(mask), Tt, N, D](Var<T>& self) {
    if (!sv->requires_grad) return;
    T* gx = sv->grad_ref().data();
    const T* g = self.grad.data();
    for (std::size_t t = 0; t < Tt; ++t)
      for (std::size_t n = 0; n < N; ++n) {
        const T* mk = mask.data() + n * D;
        for (std::size_t d = 0; d < D; ++d)
          gx[(t * N + n) * D + d] += g[(t * N + n) * D + d] * mk[d];
      }
  });
}

#define AVW_INSTANTIATE(T)                                                             \
  template VarPtr<T> conv3d<T>(const VarPtr<T>&, const ConvSpec&, const VarPtr<T>&,    \
                               const VarPtr<T>&);                                      \
  template VarPtr<T> maxpool3d<T>(const VarPtr<T>&, Dims3, Dims3, Dims3);              \
  template VarPtr<T> linear<T>(const VarPtr<T>&, const VarPtr<T>&, const VarPtr<T>&);  \
  template VarPtr<T> conv_to_time_major<T>(const VarPtr<T>&);                          \
  template VarPtr<T> seq_to_conv5d<T>(const VarPtr<T>&);                               \
  template VarPtr<T> batchnorm_conv<T>(const VarPtr<T>&, BatchNormState<T>&);          \
  template VarPtr<T> batchnorm_seq<T>(const VarPtr<T>&, BatchNormState<T>&);           \
  template SoftmaxCEOut<T> softmax_cross_entropy<T>(const VarPtr<T>&,                  \
                                                    const std::vector<std::size_t>&);  \
  template VarPtr<T> dropout_shared_mask<T>(const VarPtr<T>&, double, Rng&, Mode);

AVW_INSTANTIATE(float)
AVW_INSTANTIATE(double)
#undef AVW_INSTANTIATE

}  // namespace ad

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const Shape& s = logits.shape();
  const std::size_t K = s.back();
  const std::size_t N = logits.numel() / K;
  Tensor<T> post(s);
  for (std::size_t r = 0; r < N; ++r) {
    const T* row = logits.data() + r * K;
    T* prow = post.data() + r * K;
    T mx = row[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    T sum = T(0);
    for (std::size_t k = 0; k < K; ++k) {
      prow[k] = std::exp(row[k] - mx);
      sum += prow[k];
    }
    const T inv = T(1) / sum;
    for (std::size_t k = 0; k < K; ++k) prow[k] *= inv;
  }
  return post;
}

template Tensor<float> softmax_rows<float>(const Tensor<float>&);
template Tensor<double> softmax_rows<double>(const Tensor<double>&);

}  // namespace avword
