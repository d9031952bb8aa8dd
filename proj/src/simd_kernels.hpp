// Vectorized inner kernels for the dense ops.
//
// Reductions use a fixed expression tree (two wide accumulators, lane sum in
// index order), so results are bitwise deterministic per binary regardless of
// thread count. GCC vector extensions compile to plain scalar code where wide
// registers are unavailable.
//
// noinline pins one codegen per kernel program-wide: inlining would let the
// compiler contract or specialize differently per call site, and padded-width
// versus compact calls over the same data could then disagree in the last bit
// (several equality contracts rely on that agreement).
#pragma once

#include <cstddef>
#include <cstring>

namespace avword::simd {

template <typename T>
struct VecTraits;

template <>
struct VecTraits<float> {
  typedef float vec __attribute__((vector_size(64)));
  static constexpr std::size_t lanes = 16;
};
template <>
struct VecTraits<double> {
  typedef double vec __attribute__((vector_size(64)));
  static constexpr std::size_t lanes = 8;
};

template <typename T>
__attribute__((noinline)) T dot(const T* __restrict a, const T* __restrict b,
                                std::size_t n) {
  using V = typename VecTraits<T>::vec;
  constexpr std::size_t L = VecTraits<T>::lanes;
  V acc0 = {}, acc1 = {};
  std::size_t i = 0;
  for (; i + 2 * L <= n; i += 2 * L) {
    V a0, b0, a1, b1;
    std::memcpy(&a0, a + i, sizeof(V));
    std::memcpy(&b0, b + i, sizeof(V));
    std::memcpy(&a1, a + i + L, sizeof(V));
    std::memcpy(&b1, b + i + L, sizeof(V));
    acc0 += a0 * b0;
    acc1 += a1 * b1;
  }
  for (; i + L <= n; i += L) {
    V a0, b0;
    std::memcpy(&a0, a + i, sizeof(V));
    std::memcpy(&b0, b + i, sizeof(V));
    acc0 += a0 * b0;
  }
  if (i < n) {
    // zero-padded tail through the same vector-FMA shape: every length takes
    // one code path, so padded and compact calls round identically
    V a0 = {}, b0 = {};
    std::memcpy(&a0, a + i, (n - i) * sizeof(T));
    std::memcpy(&b0, b + i, (n - i) * sizeof(T));
    acc0 += a0 * b0;
  }
  const V acc = acc0 + acc1;
  T s = T(0);
  for (std::size_t l = 0; l < L; ++l) s += acc[l];
  return s;
}

template <typename T>
__attribute__((noinline)) void axpy(T f, const T* __restrict x, T* __restrict y,
                                    std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += f * x[i];
}

}  // namespace avword::simd
