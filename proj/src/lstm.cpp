#include "avword/lstm.hpp"

namespace avword {

template <typename T>
LstmCell<T> LstmCell<T>::make(std::size_t input_size, std::size_t hidden_size, Rng& rng) {
  LstmCell<T> c;
  c.input_size = input_size;
  c.hidden_size = hidden_size;
  c.W = ad::make_leaf<T>(uniform_init<T>({4 * hidden_size, input_size}, input_size, rng), true);
  c.U = ad::make_leaf<T>(uniform_init<T>({4 * hidden_size, hidden_size}, hidden_size, rng), true);
  Tensor<T> bias({4 * hidden_size});
  for (std::size_t i = hidden_size; i < 2 * hidden_size; ++i) bias[i] = T(1);  // forget gate
  c.b = ad::make_leaf<T>(std::move(bias), true);
  return c;
}

template <typename T>
void LstmCell<T>::collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs) {
  params[prefix + ".W"] = W;
  params[prefix + ".U"] = U;
  params[prefix + ".b"] = b;
  (void)bufs;
}

template <typename T>
LstmState<T> lstm_zero_state(std::size_t batch, std::size_t hidden) {
  return {ad::make_leaf<T>(Tensor<T>({batch, hidden})),
          ad::make_leaf<T>(Tensor<T>({batch, hidden}))};
}

template <typename T>
LstmState<T> lstm_step(const LstmCell<T>& cell, const LstmState<T>& state,
                       const ad::VarPtr<T>& x) {
  const std::size_t H = cell.hidden_size;
  AVW_CHECK(x->shape().back() == cell.input_size,
            "lstm_step: input width " << x->shape().back() << " != cell input_size "
                                      << cell.input_size);
  auto z = ad::add(ad::linear(x, cell.W, cell.b), ad::linear(state.h, cell.U, {}));
  auto gi = ad::sigmoid(ad::slice_cols(z, 0, H));
  auto gf = ad::sigmoid(ad::slice_cols(z, H, 2 * H));
  auto gg = ad::tanh_op(ad::slice_cols(z, 2 * H, 3 * H));
  auto go = ad::sigmoid(ad::slice_cols(z, 3 * H, 4 * H));
  auto c_new = ad::add(ad::mul(gf, state.c), ad::mul(gi, gg));
  auto h_new = ad::mul(go, ad::tanh_op(c_new));
  return {h_new, c_new};
}

template <typename T>
void DirectionalStack<T>::collect(const std::string& prefix, ParamMap<T>& params,
                                  BufMap<T>& bufs) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string lp = prefix + ".layer" + std::to_string(i);
    layers[i].cell.collect(lp + ".lstm", params, bufs);
    if (layers[i].input_bn) layers[i].input_bn->collect(lp + ".bn", params, bufs);
  }
}

namespace {

template <typename T>
ad::VarPtr<T> truncate_to_even(const ad::VarPtr<T>& seq) {
  const std::size_t tlen = seq->shape()[0];
  AVW_CHECK(tlen >= 2, "sequence too short for frame-rate reduction (T=" << tlen << ")");
  if (tlen % 2 == 0) return seq;
  return ad::slice_rows(seq, 0, tlen - 1);
}

}  // namespace

template <typename T>
ad::VarPtr<T> pyramidal_pair_concat(const ad::VarPtr<T>& seq) {
  if (seq->shape().size() == 2) {  // [T,H] == [T,1,H]
    const std::size_t tlen = seq->shape()[0], h = seq->shape()[1];
    auto r = ad::reshape(seq, {tlen, 1, h});
    auto p = ad::pair_concat_time(truncate_to_even(r));
    return ad::reshape(p, {p->shape()[0], 2 * h});
  }
  AVW_CHECK(seq->shape().size() == 3, "pyramidal_pair_concat expects [T,H] or [T,N,H]");
  return ad::pair_concat_time(truncate_to_even(seq));
}

template <typename T>
ad::VarPtr<T> bidirectional_concat(const ad::VarPtr<T>& fwd, const ad::VarPtr<T>& bwd) {
  AVW_CHECK(fwd->shape() == bwd->shape(),
            "bidirectional_concat: direction outputs differ, " << shape_str(fwd->shape())
                                                               << " vs "
                                                               << shape_str(bwd->shape()));
  return ad::concat_cols<T>({fwd, bwd});
}

template <typename T>
ad::VarPtr<T> run_direction(DirectionalStack<T>& stack, ad::VarPtr<T> seq, Rng& rng,
                            Mode mode) {
  AVW_CHECK(seq->shape().size() == 3, "run_direction expects a [T,N,D] sequence");
  for (std::size_t li = 0; li < stack.layers.size(); ++li) {
    auto& layer = stack.layers[li];
    switch (layer.pyramidal) {
      case PyramidalMode::none:
        break;
      case PyramidalMode::pair_concat:
        seq = ad::pair_concat_time(truncate_to_even(seq));
        break;
      case PyramidalMode::keep_even: {
        auto even = truncate_to_even(seq);
        std::vector<std::size_t> idx;
        for (std::size_t t = 0; t < even->shape()[0]; t += 2) idx.push_back(t);
        seq = ad::gather_rows(even, std::move(idx));
        break;
      }
    }
    AVW_CHECK(seq->shape()[0] >= 1, "run_direction: sequence length reached 0");
    if (layer.input_bn) {
      layer.input_bn->set_mode(mode);
      seq = layer.input_bn->forward(seq);
    }
    if (layer.input_dropout_p > 0.0)
      seq = ad::dropout_shared_mask(seq, layer.input_dropout_p, rng, mode);

    const std::size_t tlen = seq->shape()[0];
    const std::size_t n = seq->shape()[1];
    const std::size_t d = seq->shape()[2];
    AVW_CHECK(d == layer.cell.input_size, "run_direction: layer " << li << " feed width " << d
                                                                  << " != cell input_size "
                                                                  << layer.cell.input_size);
    auto state = lstm_zero_state<T>(n, layer.cell.hidden_size);
    std::vector<ad::VarPtr<T>> outs(tlen);
    for (std::size_t k = 0; k < tlen; ++k) {
      const std::size_t t = stack.direction == Direction::forward ? k : tlen - 1 - k;
      auto x = ad::reshape(ad::slice_rows(seq, t, t + 1), {n, d});
      state = lstm_step(layer.cell, state, x);
      outs[t] = state.h;  // outputs indexed by input time
    }
    seq = ad::stack_rows(outs);
  }
  return seq;
}

#define AVW_INSTANTIATE(T)                                                          \
  template struct LstmCell<T>;                                                      \
  template struct DirectionalStack<T>;                                              \
  template LstmState<T> lstm_zero_state<T>(std::size_t, std::size_t);               \
  template LstmState<T> lstm_step<T>(const LstmCell<T>&, const LstmState<T>&,       \
                                     const ad::VarPtr<T>&);                         \
  template ad::VarPtr<T> run_direction<T>(DirectionalStack<T>&, ad::VarPtr<T>,      \
                                          Rng&, Mode);                              \
  template ad::VarPtr<T> pyramidal_pair_concat<T>(const ad::VarPtr<T>&);            \
  template ad::VarPtr<T> bidirectional_concat<T>(const ad::VarPtr<T>&,              \
                                                 const ad::VarPtr<T>&);

AVW_INSTANTIATE(float)
AVW_INSTANTIATE(double)
#undef AVW_INSTANTIATE

}  // namespace avword
