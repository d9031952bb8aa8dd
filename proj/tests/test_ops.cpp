#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avword/nn_ops.hpp"
#include "avword/rng.hpp"

using namespace avword;
using ad::VarPtr;

namespace {

template <typename T>
VarPtr<T> leaf(Tensor<T> t, bool grad = false) {
  return ad::make_leaf<T>(std::move(t), grad);
}

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(s));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.normal() * scale);
  return t;
}

// Independent 5-nested-loop correlation oracle, written before the im2col
// kernel and kept deliberately dumb.
Tensor<double> conv3d_oracle(const Tensor<double>& in, const Tensor<double>& w,
                             const Tensor<double>* bias, const ConvSpec& spec) {
  const std::size_t N = in.dim(0), Ci = in.dim(1);
  const Dims3 id{in.dim(2), in.dim(3), in.dim(4)};
  const Dims3 od = spec.output_extent(id);
  const std::size_t Co = spec.out_channels;
  Tensor<double> out({N, Co, od.t, od.h, od.w});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t to = 0; to < od.t; ++to)
        for (std::size_t ho = 0; ho < od.h; ++ho)
          for (std::size_t wo = 0; wo < od.w; ++wo) {
            double acc = bias ? (*bias)[co] : 0.0;
            for (std::size_t ci = 0; ci < Ci; ++ci)
              for (std::size_t kt = 0; kt < spec.kernel.t; ++kt)
                for (std::size_t kh = 0; kh < spec.kernel.h; ++kh)
                  for (std::size_t kw = 0; kw < spec.kernel.w; ++kw) {
                    const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * spec.stride.t + kt) -
                                              static_cast<std::ptrdiff_t>(spec.padding.t);
                    const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(ho * spec.stride.h + kh) -
                                              static_cast<std::ptrdiff_t>(spec.padding.h);
                    const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(wo * spec.stride.w + kw) -
                                              static_cast<std::ptrdiff_t>(spec.padding.w);
                    if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(id.t)) continue;
                    if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(id.h)) continue;
                    if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(id.w)) continue;
                    acc += in[(((n * Ci + ci) * id.t + static_cast<std::size_t>(ti)) * id.h +
                               static_cast<std::size_t>(hi)) * id.w + static_cast<std::size_t>(wi)] *
                           w[(((co * Ci + ci) * spec.kernel.t + kt) * spec.kernel.h + kh) *
                                 spec.kernel.w + kw];
                  }
            out[(((n * Co + co) * od.t + to) * od.h + ho) * od.w + wo] = acc;
          }
  return out;
}

}  // namespace

TEST_CASE("conv3d reproduces the published stem shape") {
  ConvSpec spec;
  spec.out_channels = 64;
  spec.in_channels = 1;
  spec.kernel = {5, 7, 7};
  spec.stride = {1, 2, 2};
  spec.padding = {2, 3, 3};
  spec.bias_enabled = false;
  Rng rng(1);
  auto x = leaf<float>(random_tensor<float>({1, 1, 29, 112, 112}, rng, 0.1));
  auto w = leaf<float>(random_tensor<float>({64, 1, 5, 7, 7}, rng, 0.01));
  auto y = ad::conv3d<float>(x, spec, w, {});
  CHECK(y->shape() == Shape{1, 64, 29, 56, 56});
}

TEST_CASE("conv3d with zero weights is zero") {
  ConvSpec spec;
  spec.out_channels = 2;
  spec.in_channels = 3;
  spec.kernel = {2, 3, 3};
  spec.stride = {1, 1, 1};
  spec.padding = {1, 1, 1};
  spec.bias_enabled = true;
  Rng rng(2);
  auto x = leaf<float>(random_tensor<float>({2, 3, 4, 5, 5}, rng));
  auto w = leaf<float>(Tensor<float>({2, 3, 2, 3, 3}));
  auto b = leaf<float>(Tensor<float>({2}));
  auto y = ad::conv3d<float>(x, spec, w, b);
  for (std::size_t i = 0; i < y->numel(); ++i) CHECK(y->value[i] == 0.0f);
}

TEST_CASE("conv3d matches the nested-loop correlation oracle") {
  // the spec's fixed case first
  {
    ConvSpec spec;
    spec.out_channels = 2;
    spec.in_channels = 2;
    spec.kernel = {1, 3, 3};
    spec.stride = {1, 1, 1};
    spec.padding = {0, 0, 0};
    spec.bias_enabled = false;
    Rng rng(3);
    auto xt = random_tensor<double>({1, 2, 3, 5, 5}, rng);
    auto wt = random_tensor<double>({2, 2, 1, 3, 3}, rng);
    auto y = ad::conv3d<double>(leaf(xt), spec, leaf(wt), {});
    auto ref = conv3d_oracle(xt, wt, nullptr, spec);
    REQUIRE(y->shape() == ref.shape());
    for (std::size_t i = 0; i < ref.numel(); ++i)
      CHECK(std::fabs(y->value[i] - ref[i]) < 1e-6);
  }
  // randomized shapes, outputs capped at 1e4 elements
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    Rng rng(900 + seed);
    ConvSpec spec;
    spec.in_channels = 1 + rng.next_below(3);
    spec.out_channels = 1 + rng.next_below(3);
    spec.kernel = {1 + rng.next_below(3), 1 + rng.next_below(3), 1 + rng.next_below(3)};
    spec.stride = {1 + rng.next_below(2), 1 + rng.next_below(2), 1 + rng.next_below(2)};
    spec.padding = {rng.next_below(spec.kernel.t), rng.next_below(spec.kernel.h),
                    rng.next_below(spec.kernel.w)};
    spec.bias_enabled = (seed % 2) == 0;
    const std::size_t N = 1 + rng.next_below(2);
    Dims3 id{spec.kernel.t + rng.next_below(4), spec.kernel.h + rng.next_below(5),
             spec.kernel.w + rng.next_below(5)};
    auto xt = random_tensor<double>({N, spec.in_channels, id.t, id.h, id.w}, rng);
    auto wt = random_tensor<double>({spec.out_channels, spec.in_channels, spec.kernel.t,
                                     spec.kernel.h, spec.kernel.w}, rng);
    Tensor<double> bt;
    VarPtr<double> bv;
    if (spec.bias_enabled) {
      bt = random_tensor<double>({spec.out_channels}, rng);
      bv = leaf(bt);
    }
    auto y = ad::conv3d<double>(leaf(xt), spec, leaf(wt), bv);
    auto ref = conv3d_oracle(xt, wt, spec.bias_enabled ? &bt : nullptr, spec);
    REQUIRE(y->numel() <= 10000);
    REQUIRE(y->shape() == ref.shape());
    for (std::size_t i = 0; i < ref.numel(); ++i)
      CHECK(std::fabs(y->value[i] - ref[i]) < 1e-6);
  }
}

TEST_CASE("conv3d errors name the offending axis") {
  ConvSpec spec;
  spec.out_channels = 1;
  spec.in_channels = 2;
  spec.kernel = {1, 3, 3};
  spec.padding = {0, 1, 1};
  spec.bias_enabled = false;
  Rng rng(4);
  auto x = leaf<float>(random_tensor<float>({1, 1, 2, 4, 4}, rng));
  auto w = leaf<float>(random_tensor<float>({1, 2, 1, 3, 3}, rng));
  CHECK_THROWS_WITH_AS(ad::conv3d<float>(x, spec, w, {}),
                       doctest::Contains("channel axis"), Error);

  ConvSpec tall = spec;
  tall.in_channels = 1;
  tall.kernel = {5, 3, 3};
  tall.padding = {1, 1, 1};
  auto w2 = leaf<float>(random_tensor<float>({1, 1, 5, 3, 3}, rng));
  CHECK_THROWS_WITH_AS(ad::conv3d<float>(x, tall, w2, {}), doctest::Contains("axis t"),
                       Error);

  auto xinf = random_tensor<float>({1, 1, 2, 4, 4}, rng);
  xinf[3] = std::numeric_limits<float>::quiet_NaN();
  ConvSpec ok = spec;
  ok.in_channels = 1;
  auto w3 = leaf<float>(random_tensor<float>({1, 1, 1, 3, 3}, rng));
  CHECK_THROWS_AS(ad::conv3d<float>(leaf(xinf), ok, w3, {}), Error);
}

TEST_CASE("maxpool3d published chain and hand-enumerated windows") {
  Rng rng(5);
  auto x = leaf<float>(random_tensor<float>({1, 64, 29, 56, 56}, rng));
  auto y = ad::maxpool3d<float>(x, {1, 3, 3}, {1, 2, 2}, {0, 1, 1});
  CHECK(y->shape() == Shape{1, 64, 29, 28, 28});

  auto c = leaf<float>(Tensor<float>::full({1, 2, 2, 4, 4}, 3.5f));
  auto yc = ad::maxpool3d<float>(c, {1, 2, 2}, {1, 2, 2});
  for (std::size_t i = 0; i < yc->numel(); ++i) CHECK(yc->value[i] == 3.5f);

  Tensor<float> ramp({1, 1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<float>(i + 1);
  auto yr = ad::maxpool3d<float>(leaf(ramp), {1, 2, 2}, {1, 2, 2});
  REQUIRE(yr->shape() == Shape{1, 1, 1, 2, 2});
  CHECK(yr->value[0] == 6.0f);
  CHECK(yr->value[1] == 8.0f);
  CHECK(yr->value[2] == 14.0f);
  CHECK(yr->value[3] == 16.0f);

  CHECK_THROWS_WITH_AS(ad::maxpool3d<float>(leaf(ramp), {1, 5, 5}, {1, 1, 1}),
                       doctest::Contains("larger than input"), Error);
}

TEST_CASE("maxpool3d backward routes to the first argmax") {
  Tensor<double> x({1, 1, 1, 1, 4});
  x[0] = 2.0; x[1] = 2.0; x[2] = 1.0; x[3] = 2.0;  // tie between index 0 and 1 and 3
  auto xv = ad::make_leaf<double>(x, true);
  auto y = ad::maxpool3d<double>(xv, {1, 1, 4}, {1, 1, 1});
  REQUIRE(y->numel() == 1);
  ad::backward(y);
  CHECK(xv->grad[0] == 1.0);  // first index in scan order wins
  CHECK(xv->grad[1] == 0.0);
  CHECK(xv->grad[3] == 0.0);
}

TEST_CASE("batchnorm train normalizes and eval uses running stats") {
  auto st = ad::BatchNormState<float>::make(3);
  st.mode = Mode::train;
  Rng rng(6);
  auto x = leaf<float>(random_tensor<float>({7, 4, 3}, rng, 2.0));
  auto y = ad::batchnorm_seq<float>(x, st);
  // per-feature mean ~0, var ~1 over T x N
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (std::size_t r = 0; r < 28; ++r) mean += y->value[r * 3 + c];
    mean /= 28;
    for (std::size_t r = 0; r < 28; ++r) {
      double d = y->value[r * 3 + c] - mean;
      var += d * d;
    }
    var /= 28;
    CHECK(std::fabs(mean) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-4);
  }

  auto st2 = ad::BatchNormState<float>::make(3);
  st2.mode = Mode::eval;  // running mean 0, var 1, gamma 1, beta 0
  auto y2 = ad::batchnorm_seq<float>(x, st2);
  for (std::size_t i = 0; i < x->numel(); ++i)
    CHECK(y2->value[i] == doctest::Approx(x->value[i]).epsilon(1e-4));

  // batch of two single-feature values {1,3} -> {-1,+1}
  auto st3 = ad::BatchNormState<float>::make(1);
  st3.mode = Mode::train;
  auto xb = leaf<float>(Tensor<float>({1, 2, 1}, {1.0f, 3.0f}));
  auto yb = ad::batchnorm_seq<float>(xb, st3);
  CHECK(yb->value[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(yb->value[1] == doctest::Approx(1.0).epsilon(1e-4));

  auto bad = leaf<float>(random_tensor<float>({2, 2, 4}, rng));
  CHECK_THROWS_WITH_AS(ad::batchnorm_seq<float>(bad, st),
                       doctest::Contains("feature_count"), Error);
}

TEST_CASE("batchnorm conv layout matches seq layout statistics") {
  Rng rng(7);
  auto st = ad::BatchNormState<float>::make(2);
  st.mode = Mode::train;
  auto x = leaf<float>(random_tensor<float>({2, 2, 3, 4, 4}, rng, 1.5));
  auto y = ad::batchnorm_conv<float>(x, st);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, var = 0;
    std::size_t m = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t s = 0; s < 48; ++s, ++m)
        mean += y->value[(n * 2 + c) * 48 + s];
    mean /= static_cast<double>(m);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t s = 0; s < 48; ++s) {
        double d = y->value[(n * 2 + c) * 48 + s] - mean;
        var += d * d;
      }
    var /= static_cast<double>(m);
    CHECK(std::fabs(mean) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("linear examples") {
  // identity
  Tensor<float> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[static_cast<std::size_t>(i * 3 + i)] = 1.0f;
  Rng rng(8);
  auto x = leaf<float>(random_tensor<float>({5, 3}, rng));
  auto y = ad::linear<float>(x, leaf(eye), leaf<float>(Tensor<float>({3})));
  for (std::size_t i = 0; i < x->numel(); ++i) CHECK(y->value[i] == x->value[i]);

  // 8192 -> 256 head shape
  auto xf = leaf<float>(random_tensor<float>({8192}, rng, 0.01f));
  auto wf = leaf<float>(random_tensor<float>({256, 8192}, rng, 0.01f));
  auto bf = leaf<float>(random_tensor<float>({256}, rng));
  CHECK(ad::linear<float>(xf, wf, bf)->shape() == Shape{256});

  // hand matrix multiply
  auto xv = leaf<float>(Tensor<float>({2}, {1.0f, 2.0f}));
  auto wv = leaf<float>(Tensor<float>({2, 2}, {1.0f, 1.0f, 0.0f, 1.0f}));
  auto bv = leaf<float>(Tensor<float>({2}, {0.0f, 1.0f}));
  auto yv = ad::linear<float>(xv, wv, bv);
  CHECK(yv->value[0] == 3.0f);
  CHECK(yv->value[1] == 3.0f);

  CHECK_THROWS_AS(ad::linear<float>(xv, wf, bf), Error);
}

TEST_CASE("softmax cross entropy examples") {
  // uniform logits, K = 500
  auto x = leaf<float>(Tensor<float>({1, 500}));
  auto r = ad::softmax_cross_entropy<float>(x, {7});
  CHECK(r.loss->value[0] == doctest::Approx(std::log(500.0)).epsilon(1e-6));
  double sum = 0;
  for (std::size_t k = 0; k < 500; ++k) sum += r.posteriors[k];
  CHECK(std::fabs(sum - 1.0) < 1e-6);

  // saturated logit at the label
  Tensor<float> big({1, 4});
  big[2] = 1000.0f;
  auto r2 = ad::softmax_cross_entropy<float>(leaf(big), {2});
  CHECK(r2.loss->value[0] == doctest::Approx(0.0).epsilon(1e-6));

  // logits (1,2): direct evaluation gives ln(1+e) for label 0 and
  // ln(1+e) - 1 ~ 0.3133 for label 1
  auto r3 = ad::softmax_cross_entropy<float>(
      leaf(Tensor<float>({2}, {1.0f, 2.0f})), {0});
  CHECK(r3.loss->value[0] == doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-6));
  auto r4 = ad::softmax_cross_entropy<float>(
      leaf(Tensor<float>({2}, {1.0f, 2.0f})), {1});
  CHECK(r4.loss->value[0] == doctest::Approx(std::log(1.0 + std::exp(1.0)) - 1.0).epsilon(1e-6));
  CHECK(r4.loss->value[0] == doctest::Approx(0.313262).epsilon(1e-5));

  CHECK_THROWS_WITH_AS(ad::softmax_cross_entropy<float>(leaf(big), {4}),
                       doctest::Contains("out of range"), Error);
}

TEST_CASE("softmax posteriors sum to one for wild logits") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    Tensor<float> logits({4, 17});
    for (std::size_t i = 0; i < logits.numel(); ++i)
      logits[i] = static_cast<float>(rng.uniform(-50.0, 50.0));
    auto r = ad::softmax_cross_entropy<float>(leaf(logits), {0, 5, 11, 16});
    for (std::size_t row = 0; row < 4; ++row) {
      double sum = 0;
      for (std::size_t k = 0; k < 17; ++k) sum += r.posteriors[row * 17 + k];
      CHECK(std::fabs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("dropout shared mask constancy across time") {
  Rng rng(9);
  auto x = leaf<float>(Tensor<float>::full({6, 2, 16}, 1.0f));

  // p = 0: identity in both modes
  Rng r0(1);
  CHECK(ad::dropout_shared_mask<float>(x, 0.0, r0, Mode::train).get() == x.get());
  CHECK(ad::dropout_shared_mask<float>(x, 0.0, r0, Mode::eval).get() == x.get());

  Rng r1(2);
  auto y = ad::dropout_shared_mask<float>(x, 0.30, r1, Mode::train);
  // the zeroed feature set is identical at every t (bitwise)
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t d = 0; d < 16; ++d) {
      const float v0 = y->value[(0 * 2 + n) * 16 + d];
      for (std::size_t t = 1; t < 6; ++t)
        CHECK(y->value[(t * 2 + n) * 16 + d] == v0);
      CHECK((v0 == 0.0f || v0 == doctest::Approx(1.0f / 0.7f)));
    }

  // eval mode is bitwise identity
  Rng r2(3);
  CHECK(ad::dropout_shared_mask<float>(x, 0.30, r2, Mode::eval).get() == x.get());

  CHECK_THROWS_AS(ad::dropout_shared_mask<float>(x, 1.0, r1, Mode::train), Error);
}

TEST_CASE("dropout empirical rate over 1e5 seeded draws") {
  const double p = 0.30;
  const std::size_t D = 8;
  std::vector<std::size_t> dropped(D, 0);
  Rng rng(31337);
  auto x = leaf<float>(Tensor<float>::full({1, 1, D}, 1.0f));
  const std::size_t draws = 100000;
  for (std::size_t i = 0; i < draws; ++i) {
    auto y = ad::dropout_shared_mask<float>(x, p, rng, Mode::train);
    for (std::size_t d = 0; d < D; ++d)
      if (y->value[d] == 0.0f) ++dropped[d];
  }
  for (std::size_t d = 0; d < D; ++d) {
    const double rate = static_cast<double>(dropped[d]) / static_cast<double>(draws);
    CHECK(rate >= 0.295);
    CHECK(rate <= 0.305);
  }
}

TEST_CASE("fixed seed gives bitwise-identical forward and backward") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    ConvSpec spec;
    spec.out_channels = 3;
    spec.in_channels = 2;
    spec.kernel = {1, 3, 3};
    spec.padding = {0, 1, 1};
    spec.bias_enabled = false;
    auto x = ad::make_leaf<float>(random_tensor<float>({2, 2, 2, 6, 6}, rng), true);
    auto w = ad::make_leaf<float>(random_tensor<float>({3, 2, 1, 3, 3}, rng), true);
    auto y = ad::conv3d<float>(x, spec, w, {});
    auto flat = ad::reshape(y, {y->numel()});
    Tensor<float> coef({y->numel()});
    for (std::size_t i = 0; i < coef.numel(); ++i)
      coef[i] = static_cast<float>(rng.uniform(-1, 1));
    auto s = ad::weighted_sum(flat, coef);
    ad::backward(s);
    std::vector<float> out;
    out.push_back(s->value[0]);
    out.insert(out.end(), x->grad.vec().begin(), x->grad.vec().end());
    out.insert(out.end(), w->grad.vec().begin(), w->grad.vec().end());
    return out;
  };
  auto a = run(77), b = run(77);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
