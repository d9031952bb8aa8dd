#include "avword/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace avword::ad {

namespace {
std::atomic<std::uint64_t> g_node_counter{1};
thread_local bool g_grad_enabled = true;
}  // namespace

std::uint64_t next_node_id() {
  return g_node_counter.fetch_add(1, std::memory_order_relaxed);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

template <typename T>
void backward(const VarPtr<T>& root, const Tensor<T>* seed) {
  AVW_CHECK(root && root->requires_grad, "backward through a non-differentiable root");
  if (seed) {
    AVW_CHECK(seed->shape() == root->value.shape(), "backward seed shape mismatch");
    Tensor<T>& g = root->grad_ref();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += (*seed)[i];
  } else {
    AVW_CHECK(root->numel() == 1, "backward without seed requires a scalar root");
    root->grad_ref()[0] += T(1);
  }

  // collect the reachable differentiable subgraph
  std::vector<Var<T>*> order;
  std::unordered_set<Var<T>*> seen;
  std::vector<Var<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Var<T>* v = stack.back();
    stack.pop_back();
    order.push_back(v);
    for (const auto& p : v->parents)
      if (p && p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
  }
  // reverse creation order == reverse topological order
  std::sort(order.begin(), order.end(),
            [](const Var<T>* a, const Var<T>* b) { return a->id > b->id; });
  for (Var<T>* v : order)
    if (v->backward_fn && v->grad.numel() != 0) v->backward_fn(*v);
}

template void backward<float>(const VarPtr<float>&, const Tensor<float>*);
template void backward<double>(const VarPtr<double>&, const Tensor<double>*);

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
VarPtr<T> add(const VarPtr<T>& a, const VarPtr<T>& b) {
  AVW_CHECK(a->value.same_shape(b->value), "add: shape mismatch "
                                               << shape_str(a->shape()) << " vs "
                                               << shape_str(b->shape()));
  Tensor<T> out(a->shape());
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  auto pa_var = a;
  auto pb_var = b;
  return make_node<T>(std::move(out), {a, b}, [pa_var, pb_var](Var<T>& self) {
    const T* g = self.grad.data();
    if (pa_var->requires_grad) {
      T* ga = pa_var->grad_ref().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i];
    }
    if (pb_var->requires_grad) {
      T* gb = pb_var->grad_ref().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) gb[i] += g[i];
    }
  });
}

template <typename T>
VarPtr<T> sub(const VarPtr<T>& a, const VarPtr<T>& b) {
  AVW_CHECK(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
  auto av = a, bv = b;
  return make_node<T>(std::move(out), {a, b}, [av, bv](Var<T>& self) {
    const T* g = self.grad.data();
    if (av->requires_grad) {
      T* ga = av->grad_ref().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i];
    }
    if (bv->requires_grad) {
      T* gb = bv->grad_ref().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
VarPtr<T> mul(const VarPtr<T>& a, const VarPtr<T>& b) {
  AVW_CHECK(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
  auto av = a, bv = b;
  return make_node<T>(std::move(out), {a, b}, [av, bv](Var<T>& self) {
    const T* g = self.grad.data();
    if (av->requires_grad) {
      T* ga = av->grad_ref().data();
      const T* pb = bv->value.data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i] * pb[i];
    }
    if (bv->requires_grad) {
      T* gb = bv->grad_ref().data();
      const T* pa = av->value.data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) gb[i] += g[i] * pa[i];
    }
  });
}

template <typename T>
VarPtr<T> scale(const VarPtr<T>& a, T c) {
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * c;
  auto av = a;
  return make_node<T>(std::move(out), {a}, [av, c](Var<T>& self) {
    if (!av->requires_grad) return;
    T* ga = av->grad_ref().data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i] * c;
  });
}

template <typename T>
VarPtr<T> relu(const VarPtr<T>& a) {
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = a->value[i] > T(0) ? a->value[i] : T(0);
  auto av = a;
  return make_node<T>(std::move(out), {a}, [av](Var<T>& self) {
    if (!av->requires_grad) return;
    T* ga = av->grad_ref().data();
    const T* g = self.grad.data();
    const T* x = av->value.data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i)
      if (x[i] > T(0)) ga[i] += g[i];
  });
}

template <typename T>
VarPtr<T> sigmoid(const VarPtr<T>& a) {
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-a->value[i]));
  auto av = a;
  return make_node<T>(std::move(out), {a}, [av](Var<T>& self) {
    if (!av->requires_grad) return;
    T* ga = av->grad_ref().data();
    const T* g = self.grad.data();
    const T* y = self.value.data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i)
      ga[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
VarPtr<T> tanh_op(const VarPtr<T>& a) {
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a->value[i]);
  auto av = a;
  return make_node<T>(std::move(out), {a}, [av](Var<T>& self) {
    if (!av->requires_grad) return;
    T* ga = av->grad_ref().data();
    const T* g = self.grad.data();
    const T* y = self.value.data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i)
      ga[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

template <typename T>
VarPtr<T> slice_cols(const VarPtr<T>& a, std::size_t from, std::size_t to) {
  const Shape& s = a->shape();
  AVW_CHECK(!s.empty(), "slice_cols on scalar");
  const std::size_t cols = s.back();
  AVW_CHECK(from < to && to <= cols,
            "slice_cols [" << from << "," << to << ") out of " << cols);
  const std::size_t rows = a->numel() / cols;
  const std::size_t w = to - from;
  Shape os = s;
  os.back() = w;
  Tensor<T> out(os);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a->value.data() + r * cols + from, w, out.data() + r * w);
  auto av = a;
  return make_node<T>(std::move(out), {a}, [av, from, cols, w](Var<T>& self) {
    if (!av->requires_grad) return;
    T* ga = av->grad_ref().data();
    const T* g = self.grad.data();
    const std::size_t rows = self.grad.numel() / w;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) ga[r * cols + from + j] += g[r * w + j];
  });
}

template <typename T>
VarPtr<T> concat_cols(const std::vector<VarPtr<T>>& parts) {
  AVW_CHECK(!parts.empty(), "concat_cols of nothing");
  Shape lead = parts[0]->shape();
  AVW_CHECK(!lead.empty(), "concat_cols on scalars");
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape ls = p->shape();
    AVW_CHECK(!ls.empty(), "concat_cols on scalars");
    std::size_t w = ls.back();
    ls.pop_back();
    AVW_CHECK(ls == lead, "concat_cols: leading shape mismatch");
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = shape_numel(lead);
  Shape os = lead;
  os.push_back(total);
  Tensor<T> out(os);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = widths[k];
    const T* src = parts[k]->value.data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src + r * w, w, out.data() + r * total + off);
    off += w;
  }
  std::vector<VarPtr<T>> parents(parts.begin(), parts.end());
  auto widths_c = widths;
  auto parts_c = parts;
  return make_node<T>(std::move(out), std::move(parents),
                      [parts_c, widths_c, total, rows](Var<T>& self) {
                        const T* g = self.grad.data();
                        std::size_t off = 0;
                        for (std::size_t k = 0; k < parts_c.size(); ++k) {
                          const std::size_t w = widths_c[k];
                          if (parts_c[k]->requires_grad) {
                            T* gp = parts_c[k]->grad_ref().data();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < w; ++j)
                                gp[r * w + j] += g[r * total + off + j];
                          }
                          off += w;
                        }
                      });
}

template <typename T>
VarPtr<T> gather_rows(const VarPtr<T>& a, std::vector<std::size_t> rows) {
  const Shape& s = a->shape();
  AVW_CHECK(!s.empty(), "gather_rows on scalar");
  AVW_CHECK(!rows.empty(), "gather_rows with empty index set");
  const std::size_t nrows = s[0];
  const std::size_t stride = a->numel() / nrows;
  for (std::size_t r : rows) AVW_CHECK(r < nrows, "row index " << r << " out of " << nrows);
  Shape os = s;
  os[0] = rows.size();
  Tensor<T> out(os);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(a->value.data() + rows[i] * stride, stride, out.data() + i * stride);
  auto av = a;
  return make_node<T>(std::move(out), {a}, [av, rows = std::move(rows), stride](Var<T>& self) {
    if (!av->requires_grad) return;
    T* ga = av->grad_ref().data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < stride; ++j) ga[rows[i] * stride + j] += g[i * stride + j];
  });
}

template <typename T>
VarPtr<T> slice_rows(const VarPtr<T>& a, std::size_t from, std::size_t to) {
  AVW_CHECK(from < to && to <= a->shape()[0],
            "slice_rows [" << from << "," << to << ") out of " << a->shape()[0]);
  std::vector<std::size_t> idx(to - from);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = from + i;
  return gather_rows(a, std::move(idx));
}

template <typename T>
VarPtr<T> stack_rows(const std::vector<VarPtr<T>>& parts) {
  AVW_CHECK(!parts.empty(), "stack_rows of nothing");
  const Shape inner = parts[0]->shape();
  const std::size_t stride = parts[0]->numel();
  for (const auto& p : parts)
    AVW_CHECK(p->shape() == inner, "stack_rows: shape mismatch");
  Shape os;
  os.push_back(parts.size());
  os.insert(os.end(), inner.begin(), inner.end());
  Tensor<T> out(os);
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy_n(parts[i]->value.data(), stride, out.data() + i * stride);
  std::vector<VarPtr<T>> parents(parts.begin(), parts.end());
  auto parts_c = parts;
  return make_node<T>(std::move(out), std::move(parents), [parts_c, stride](Var<T>& self) {
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < parts_c.size(); ++i) {
      if (!parts_c[i]->requires_grad) continue;
      T* gp = parts_c[i]->grad_ref().data();
      for (std::size_t j = 0; j < stride; ++j) gp[j] += g[i * stride + j];
    }
  });
}

template <typename T>
VarPtr<T> reshape(const VarPtr<T>& a, Shape s) {
  Tensor<T> out = a->value.reshaped(std::move(s));
  auto av = a;
  return make_node<T>(std::move(out), {a}, [av](Var<T>& self) {
    if (!av->requires_grad) return;
    T* ga = av->grad_ref().data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i];
  });
}

template <typename T>
VarPtr<T> transpose01(const VarPtr<T>& a) {
  const Shape& s = a->shape();
  AVW_CHECK(s.size() >= 2, "transpose01 needs >= 2 dims");
  const std::size_t d0 = s[0], d1 = s[1];
  const std::size_t inner = a->numel() / (d0 * d1);
  Shape os = s;
  std::swap(os[0], os[1]);
  Tensor<T> out(os);
  for (std::size_t i = 0; i < d0; ++i)
    for (std::size_t j = 0; j < d1; ++j)
      std::copy_n(a->value.data() + (i * d1 + j) * inner, inner,
                  out.data() + (j * d0 + i) * inner);
  auto av = a;
  return make_node<T>(std::move(out), {a}, [av, d0, d1, inner](Var<T>& self) {
    if (!av->requires_grad) return;
    T* ga = av->grad_ref().data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < d0; ++i)
      for (std::size_t j = 0; j < d1; ++j) {
        const T* src = g + (j * d0 + i) * inner;
        T* dst = ga + (i * d1 + j) * inner;
        for (std::size_t k = 0; k < inner; ++k) dst[k] += src[k];
      }
  });
}

template <typename T>
VarPtr<T> mean_axis0(const VarPtr<T>& a) {
  const Shape& s = a->shape();
  AVW_CHECK(s.size() >= 2, "mean_axis0 needs >= 2 dims");
  const std::size_t rows = s[0];
  const std::size_t stride = a->numel() / rows;
  Shape os(s.begin() + 1, s.end());
  Tensor<T> out(os);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = a->value.data() + r * stride;
    for (std::size_t j = 0; j < stride; ++j) out[j] += src[j];
  }
  const T inv = T(1) / static_cast<T>(rows);
  for (std::size_t j = 0; j < stride; ++j) out[j] *= inv;
  auto av = a;
  return make_node<T>(std::move(out), {a}, [av, rows, stride, inv](Var<T>& self) {
    if (!av->requires_grad) return;
    T* ga = av->grad_ref().data();
    const T* g = self.grad.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < stride; ++j) ga[r * stride + j] += g[j] * inv;
  });
}

template <typename T>
VarPtr<T> weighted_sum(const VarPtr<T>& a, Tensor<T> weights) {
  AVW_CHECK(weights.numel() == a->numel(), "weighted_sum size mismatch");
  T acc = T(0);
  for (std::size_t i = 0; i < a->numel(); ++i) acc += a->value[i] * weights[i];
  auto av = a;
  return make_node<T>(Tensor<T>::scalar(acc), {a},
                      [av, w = std::move(weights)](Var<T>& self) {
                        if (!av->requires_grad) return;
                        T* ga = av->grad_ref().data();
                        const T g = self.grad[0];
                        for (std::size_t i = 0; i < w.numel(); ++i) ga[i] += g * w[i];
                      });
}

template <typename T>
VarPtr<T> pair_concat_time(const VarPtr<T>& a) {
  const Shape& s = a->shape();
  AVW_CHECK(s.size() == 3, "pair_concat_time expects [T,N,D]");
  const std::size_t tlen = s[0], n = s[1], d = s[2];
  AVW_CHECK(tlen >= 2, "pair_concat_time needs at least 2 time steps, got " << tlen);
  const std::size_t tout = tlen / 2;
  Tensor<T> out({tout, n, 2 * d});
  for (std::size_t t = 0; t < tout; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(a->value.data() + ((2 * t) * n + i) * d, d,
                  out.data() + (t * n + i) * 2 * d);
      std::copy_n(a->value.data() + ((2 * t + 1) * n + i) * d, d,
                  out.data() + (t * n + i) * 2 * d + d);
    }
  auto av = a;
  return make_node<T>(std::move(out), {a}, [av, tout, n, d](Var<T>& self) {
    if (!av->requires_grad) return;
    T* ga = av->grad_ref().data();
    const T* g = self.grad.data();
    for (std::size_t t = 0; t < tout; ++t)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 2 * d; ++j) {
          const std::size_t tin = 2 * t + (j >= d ? 1 : 0);
          ga[(tin * n + i) * d + (j % d)] += g[(t * n + i) * 2 * d + j];
        }
  });
}

template <typename T>
VarPtr<T> scale_per_sample(const VarPtr<T>& a, Tensor<T> k) {
  const Shape& s = a->shape();
  AVW_CHECK(s.size() == 3, "scale_per_sample expects [T,N,D]");
  AVW_CHECK(k.numel() == s[1], "scale_per_sample: factor count mismatch");
  const std::size_t tlen = s[0], n = s[1], d = s[2];
  Tensor<T> out(s);
  for (std::size_t t = 0; t < tlen; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      const T f = k[i];
      const T* src = a->value.data() + (t * n + i) * d;
      T* dst = out.data() + (t * n + i) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] * f;
    }
  auto av = a;
  return make_node<T>(std::move(out), {a}, [av, k = std::move(k), tlen, n, d](Var<T>& self) {
    if (!av->requires_grad) return;
    T* ga = av->grad_ref().data();
    const T* g = self.grad.data();
    for (std::size_t t = 0; t < tlen; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        const T f = k[i];
        for (std::size_t j = 0; j < d; ++j)
          ga[(t * n + i) * d + j] += g[(t * n + i) * d + j] * f;
      }
  });
}

#define AVW_INSTANTIATE(T)                                                         \
  template VarPtr<T> add<T>(const VarPtr<T>&, const VarPtr<T>&);                   \
  template VarPtr<T> sub<T>(const VarPtr<T>&, const VarPtr<T>&);                   \
  template VarPtr<T> mul<T>(const VarPtr<T>&, const VarPtr<T>&);                   \
  template VarPtr<T> scale<T>(const VarPtr<T>&, T);                                \
  template VarPtr<T> relu<T>(const VarPtr<T>&);                                    \
  template VarPtr<T> sigmoid<T>(const VarPtr<T>&);                                 \
  template VarPtr<T> tanh_op<T>(const VarPtr<T>&);                                 \
  template VarPtr<T> slice_cols<T>(const VarPtr<T>&, std::size_t, std::size_t);    \
  template VarPtr<T> concat_cols<T>(const std::vector<VarPtr<T>>&);                \
  template VarPtr<T> gather_rows<T>(const VarPtr<T>&, std::vector<std::size_t>);   \
  template VarPtr<T> slice_rows<T>(const VarPtr<T>&, std::size_t, std::size_t);    \
  template VarPtr<T> stack_rows<T>(const std::vector<VarPtr<T>>&);                 \
  template VarPtr<T> reshape<T>(const VarPtr<T>&, Shape);                          \
  template VarPtr<T> transpose01<T>(const VarPtr<T>&);                             \
  template VarPtr<T> mean_axis0<T>(const VarPtr<T>&);                              \
  template VarPtr<T> weighted_sum<T>(const VarPtr<T>&, Tensor<T>);                 \
  template VarPtr<T> pair_concat_time<T>(const VarPtr<T>&);                        \
  template VarPtr<T> scale_per_sample<T>(const VarPtr<T>&, Tensor<T>);

AVW_INSTANTIATE(float)
AVW_INSTANTIATE(double)
#undef AVW_INSTANTIATE

}  // namespace avword::ad
