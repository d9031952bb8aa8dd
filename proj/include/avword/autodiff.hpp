// Reverse-mode automatic differentiation on dense tensors.
//
// A Var is one node of a dynamically built tape: a value, an optional
// gradient accumulator, and a closure that routes the node's gradient to its
// parents. backward() replays the tape in reverse creation order, which makes
// gradient accumulation order fixed and runs bitwise reproducible.
//
// Sequence convention used across the recurrent code: time-major [T x N x D].
// A [T x D] tensor is the N == 1 case (identical memory layout).
#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "avword/tensor.hpp"

namespace avword::ad {

template <typename T>
struct Var;

template <typename T>
using VarPtr = std::shared_ptr<Var<T>>;

template <typename T>
struct Var {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first use; same shape as value
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<VarPtr<T>> parents;
  std::function<void(Var<T>&)> backward_fn;

  Tensor<T>& grad_ref() {
    if (grad.numel() == 0) grad = Tensor<T>(value.shape());
    return grad;
  }
  const Shape& shape() const { return value.shape(); }
  std::size_t numel() const { return value.numel(); }
};

std::uint64_t next_node_id();

// Graph recording can be suspended (eval-mode forward passes); nodes created
// under NoGradGuard carry no parents and cannot be differentiated.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
VarPtr<T> make_leaf(Tensor<T> value, bool requires_grad = false) {
  auto v = std::make_shared<Var<T>>();
  v->value = std::move(value);
  v->requires_grad = requires_grad && grad_enabled();
  v->id = next_node_id();
  return v;
}

template <typename T>
VarPtr<T> make_node(Tensor<T> value, std::vector<VarPtr<T>> parents,
                    std::function<void(Var<T>&)> backward_fn) {
  auto v = std::make_shared<Var<T>>();
  v->value = std::move(value);
  v->id = next_node_id();
  if (grad_enabled()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        v->requires_grad = true;
        break;
      }
  }
  if (v->requires_grad) {
    v->parents = std::move(parents);
    v->backward_fn = std::move(backward_fn);
  }
  return v;
}

// Runs reverse-mode accumulation from a scalar root (or with an explicit seed
// of the root's shape). Existing .grad contents of leaves are accumulated into.
template <typename T>
void backward(const VarPtr<T>& root, const Tensor<T>* seed = nullptr);

// ---- elementwise ----
template <typename T> VarPtr<T> add(const VarPtr<T>& a, const VarPtr<T>& b);
template <typename T> VarPtr<T> sub(const VarPtr<T>& a, const VarPtr<T>& b);
template <typename T> VarPtr<T> mul(const VarPtr<T>& a, const VarPtr<T>& b);
template <typename T> VarPtr<T> scale(const VarPtr<T>& a, T c);
template <typename T> VarPtr<T> relu(const VarPtr<T>& a);
template <typename T> VarPtr<T> sigmoid(const VarPtr<T>& a);
template <typename T> VarPtr<T> tanh_op(const VarPtr<T>& a);

// ---- structure ----
// Last-axis column slice: [.., C] -> [.., to-from)
template <typename T> VarPtr<T> slice_cols(const VarPtr<T>& a, std::size_t from, std::size_t to);
// Last-axis concatenation of equal-leading-shape parts.
template <typename T> VarPtr<T> concat_cols(const std::vector<VarPtr<T>>& parts);
// First-axis row gather; rows may repeat. Backward scatter-adds.
template <typename T> VarPtr<T> gather_rows(const VarPtr<T>& a, std::vector<std::size_t> rows);
template <typename T> VarPtr<T> slice_rows(const VarPtr<T>& a, std::size_t from, std::size_t to);
// Stacks k same-shape tensors along a new leading axis.
template <typename T> VarPtr<T> stack_rows(const std::vector<VarPtr<T>>& parts);
template <typename T> VarPtr<T> reshape(const VarPtr<T>& a, Shape s);
// Swap the first two axes.
template <typename T> VarPtr<T> transpose01(const VarPtr<T>& a);
// Mean over the leading axis: [T, rest] -> [rest]
template <typename T> VarPtr<T> mean_axis0(const VarPtr<T>& a);
// sum_i weights[i] * a[i] -> scalar (weights constant)
template <typename T> VarPtr<T> weighted_sum(const VarPtr<T>& a, Tensor<T> weights);
// Pairs consecutive time steps: [T,N,D] -> [floor(T/2),N,2D], row t = [x_{2t}|x_{2t+1}]
template <typename T> VarPtr<T> pair_concat_time(const VarPtr<T>& a);
// Per-sample scaling of a time-major sequence: out[t,n,:] = a[t,n,:]*k[n]
template <typename T> VarPtr<T> scale_per_sample(const VarPtr<T>& a, Tensor<T> k);

}  // namespace avword::ad
