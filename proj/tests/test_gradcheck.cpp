#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avword/gradcheck.hpp"
#include "avword/lstm.hpp"
#include "avword/nn_ops.hpp"
#include "avword/rng.hpp"

using namespace avword;
using ad::VarPtr;

namespace {

Tensor<double> rnd(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

Tensor<double> coef_for(std::size_t n, Rng& rng) {
  Tensor<double> c({n});
  for (std::size_t i = 0; i < n; ++i) c[i] = rng.uniform(-1.0, 1.0);
  return c;
}

// scalarize an arbitrary output with fixed random weights
VarPtr<double> reduce(const VarPtr<double>& y, Tensor<double> coef) {
  return ad::weighted_sum(ad::reshape(y, {y->numel()}), std::move(coef));
}

}  // namespace

TEST_CASE("gradcheck: conv3d over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    ConvSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 2;
    spec.kernel = {1 + rng.next_below(2), 1 + rng.next_below(3), 1 + rng.next_below(3)};
    spec.stride = {1, 1 + rng.next_below(2), 1};
    spec.padding = {0, rng.next_below(spec.kernel.h), rng.next_below(spec.kernel.w)};
    spec.bias_enabled = true;
    auto x = ad::make_leaf<double>(rnd({1, 2, spec.kernel.t + 2, 4, 4}, rng), true);
    auto w = ad::make_leaf<double>(
        rnd({2, 2, spec.kernel.t, spec.kernel.h, spec.kernel.w}, rng), true);
    auto b = ad::make_leaf<double>(rnd({2}, rng), true);
    Rng crng(seed + 1000);
    auto probe = ad::conv3d<double>(x, spec, w, b);
    Tensor<double> coef = coef_for(probe->numel(), crng);
    auto res = finite_diff_check(
        [&] { return reduce(ad::conv3d<double>(x, spec, w, b), coef); }, {x, w, b});
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradcheck: maxpool3d over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(50 + seed);
    // well-separated values keep the argmax stable under the probe step
    Tensor<double> xt({1, 2, 2, 4, 4});
    std::vector<std::size_t> perm(xt.numel());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[rng.next_below(i)]);
    for (std::size_t i = 0; i < xt.numel(); ++i)
      xt[i] = static_cast<double>(perm[i]) * 0.1 + rng.uniform(0.0, 0.01);
    auto x = ad::make_leaf<double>(xt, true);
    Rng crng(seed + 2000);
    auto probe = ad::maxpool3d<double>(x, {2, 2, 2}, {1, 2, 2}, {0, 1, 1});
    Tensor<double> coef = coef_for(probe->numel(), crng);
    auto res = finite_diff_check(
        [&] { return reduce(ad::maxpool3d<double>(x, {2, 2, 2}, {1, 2, 2}, {0, 1, 1}), coef); },
        {x});
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradcheck: batchnorm train and eval over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    auto st = ad::BatchNormState<double>::make(3);
    st.mode = seed % 2 == 0 ? Mode::train : Mode::eval;
    for (std::size_t i = 0; i < 3; ++i) {
      st.gamma->value[i] = rng.uniform(0.5, 1.5);
      st.beta->value[i] = rng.uniform(-0.5, 0.5);
      st.running_mean[i] = rng.uniform(-0.5, 0.5);
      st.running_var[i] = rng.uniform(0.5, 1.5);
    }
    auto x = ad::make_leaf<double>(rnd({4, 2, 3}, rng), true);
    Rng crng(seed + 3000);
    Tensor<double> coef = coef_for(4 * 2 * 3, crng);
    auto res = finite_diff_check(
        [&] { return reduce(ad::batchnorm_seq<double>(x, st), coef); },
        {x, st.gamma, st.beta});
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradcheck: linear is exact to roundoff") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(200 + seed);
    auto x = ad::make_leaf<double>(rnd({3, 5}, rng), true);
    auto w = ad::make_leaf<double>(rnd({4, 5}, rng), true);
    auto b = ad::make_leaf<double>(rnd({4}, rng), true);
    Rng crng(seed + 4000);
    Tensor<double> coef = coef_for(12, crng);
    auto res = finite_diff_check([&] { return reduce(ad::linear<double>(x, w, b), coef); },
                                 {x, w, b});
    CHECK(res.max_rel_error < 1e-7);
  }
}

TEST_CASE("gradcheck: softmax cross entropy over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    auto x = ad::make_leaf<double>(rnd({3, 6}, rng, 2.0), true);
    std::vector<std::size_t> labels{rng.next_below(6), rng.next_below(6), rng.next_below(6)};
    auto res = finite_diff_check(
        [&] { return ad::softmax_cross_entropy<double>(x, labels).loss; }, {x});
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradcheck: dropout under a fixed seed") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(400 + seed);
    auto x = ad::make_leaf<double>(rnd({4, 1, 6}, rng), true);
    Rng crng(seed + 5000);
    Tensor<double> coef = coef_for(24, crng);
    auto res = finite_diff_check(
        [&] {
          Rng drng(seed);  // identical stream on every rebuild
          return reduce(ad::dropout_shared_mask<double>(x, 0.3, drng, Mode::train), coef);
        },
        {x});
    CHECK(res.max_rel_error < 1e-7);
  }
}

TEST_CASE("gradcheck: full LSTM step over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(500 + seed);
    auto cell = LstmCell<double>::make(3, 4, rng);
    auto x = ad::make_leaf<double>(rnd({2, 3}, rng), true);
    auto h = ad::make_leaf<double>(rnd({2, 4}, rng, 0.5), true);
    auto c = ad::make_leaf<double>(rnd({2, 4}, rng, 0.5), true);
    Rng crng(seed + 6000);
    Tensor<double> coef_h = coef_for(8, crng);
    Tensor<double> coef_c = coef_for(8, crng);
    auto res = finite_diff_check(
        [&] {
          auto st = lstm_step<double>(cell, {h, c}, x);
          return ad::add(ad::weighted_sum(ad::reshape(st.h, {8}), coef_h),
                         ad::weighted_sum(ad::reshape(st.c, {8}), coef_c));
        },
        {x, h, c, cell.W, cell.U, cell.b});
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradcheck: two-layer bidirectional run with aggregation head") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(600 + seed);
    DirectionalStack<double> fwd, bwd;
    fwd.direction = Direction::forward;
    bwd.direction = Direction::backward;
    for (int l = 0; l < 2; ++l) {
      LstmLayerSpec<double> lf, lb;
      lf.cell = LstmCell<double>::make(l == 0 ? 3 : 4, 4, rng);
      lb.cell = LstmCell<double>::make(l == 0 ? 3 : 4, 4, rng);
      fwd.layers.push_back(std::move(lf));
      bwd.layers.push_back(std::move(lb));
    }
    auto head = LinearLayer<double>::make(8, 5, rng);
    auto x = ad::make_leaf<double>(rnd({4, 2, 3}, rng), true);
    std::vector<std::size_t> labels{rng.next_below(5), rng.next_below(5)};

    std::vector<VarPtr<double>> inputs{x, head.w, head.b};
    for (auto* stk : {&fwd, &bwd})
      for (auto& l : stk->layers) {
        inputs.push_back(l.cell.W);
        inputs.push_back(l.cell.U);
        inputs.push_back(l.cell.b);
      }
    auto res = finite_diff_check(
        [&] {
          Rng drng(seed);
          auto of = run_direction(fwd, x, drng, Mode::eval);
          auto ob = run_direction(bwd, x, drng, Mode::eval);
          auto cat = bidirectional_concat(of, ob);
          auto pooled = ad::mean_axis0(cat);
          auto logits = head.forward(pooled);
          return ad::softmax_cross_entropy<double>(logits, labels).loss;
        },
        inputs, 2e-3, 4);  // five-point stencil: fp noise floor sits near 1e-8-scale
                           // gradients of the deep composite at two-point steps
    CHECK(res.max_rel_error < 1e-4);
  }
}
