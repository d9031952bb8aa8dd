// LSTM cells, directional runners and the concat-at-end bidirectional wiring.
//
// Directions never mix before the final concatenation: a directional stack is
// a self-contained chain of layers, and bidirectional_concat is the only
// place forward and backward outputs meet.
#pragma once

#include <optional>
#include <vector>

#include "avword/layers.hpp"

namespace avword {

enum class Direction { forward, backward };

// How a layer reduces the frame rate of its input (Eq.-style pairing,
// plain even-index subsampling, or none).
enum class PyramidalMode { none, pair_concat, keep_even };

template <typename T>
struct LstmCell {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  // gate order along the 4H axis: input, forget, cell, output
  ad::VarPtr<T> W;  // [4H x D]
  ad::VarPtr<T> U;  // [4H x H]
  ad::VarPtr<T> b;  // [4H], forget-gate slice initialized to 1

  static LstmCell make(std::size_t input_size, std::size_t hidden_size, Rng& rng);
  void collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs);
};

template <typename T>
struct LstmState {
  ad::VarPtr<T> h;  // [N x H]
  ad::VarPtr<T> c;  // [N x H]
};

template <typename T>
LstmState<T> lstm_zero_state(std::size_t batch, std::size_t hidden);

// One gate update: i,f,o = sigmoid, g = tanh, c' = f.c + i.g, h' = o.tanh(c')
template <typename T>
LstmState<T> lstm_step(const LstmCell<T>& cell, const LstmState<T>& state,
                       const ad::VarPtr<T>& x);

template <typename T>
struct LstmLayerSpec {
  LstmCell<T> cell;
  PyramidalMode pyramidal = PyramidalMode::none;
  double input_dropout_p = 0.0;
  std::optional<BatchNormLayer<T>> input_bn;  // audio frontend normalizes layer inputs
};

template <typename T>
struct DirectionalStack {
  Direction direction = Direction::forward;
  std::vector<LstmLayerSpec<T>> layers;

  void set_mode(Mode m) {
    for (auto& l : layers)
      if (l.input_bn) l.input_bn->set_mode(m);
  }
  void collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs);
};

// Runs a stack over a time-major sequence [T,N,D] -> [T',N,H]. A pyramidal
// layer consumes concatenated pairs of its input rows (input_size == 2 x the
// feed width); odd tails are truncated. The backward direction consumes the
// sequence reversed and emits outputs re-indexed to input time order.
template <typename T>
ad::VarPtr<T> run_direction(DirectionalStack<T>& stack, ad::VarPtr<T> seq, Rng& rng,
                            Mode mode);

// [T,N,H] -> [floor(T/2),N,2H]; also accepts [T,H]. Drops an odd final row.
template <typename T>
ad::VarPtr<T> pyramidal_pair_concat(const ad::VarPtr<T>& seq);

// Row-wise [fwd | bwd] with bwd already in input time order.
template <typename T>
ad::VarPtr<T> bidirectional_concat(const ad::VarPtr<T>& fwd, const ad::VarPtr<T>& bwd);

}  // namespace avword
