#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avword/resnet.hpp"

using namespace avword;

namespace {

Tensor<float> rndf(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<float> t(std::move(s));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.normal() * scale);
  return t;
}

std::size_t param_count(ParamMap<float>& params) {
  std::size_t n = 0;
  for (auto& [name, p] : params) n += p->numel();
  return n;
}

}  // namespace

TEST_CASE("published 112 shape chain and desk-scale 32 chain") {
  ResNetConfig cfg;
  auto chain = shape_chain_report(cfg, 112);
  CHECK(chain.str() ==
        "1x112x112 -> 64x28x28 -> 128x14x14 -> 256x7x7 -> 512x4x4 -> 8192 -> 256");

  auto desk = shape_chain_report(cfg, 32);
  CHECK(desk.str() == "1x32x32 -> 64x8x8 -> 128x4x4 -> 256x2x2 -> 512x1x1 -> 512 -> 256");

  // depth changes repetition, not extents
  ResNetConfig deep = cfg;
  deep.depth = 34;
  CHECK(shape_chain_report(deep, 112).str() == chain.str());

  CHECK_THROWS_WITH_AS(shape_chain_report(cfg, 30), doctest::Contains("minimum legal size"),
                       Error);
}

TEST_CASE("2D stem differs only by the stem temporal extent") {
  ResNetConfig cfg3;
  cfg3.input_spatial = 32;
  ResNetConfig cfg2 = cfg3;
  cfg2.stem_mode = StemMode::spatial;
  cfg2.stem_temporal_kernel = 1;

  Rng r1(5), r2(5);
  ResNet<float> net3(cfg3, r1);
  ResNet<float> net2(cfg2, r2);
  ParamMap<float> p3, p2;
  BufMap<float> b3, b2;
  net3.collect("v", p3, b3);
  net2.collect("v", p2, b2);
  // 64 x 1 x (5-1) x 7 x 7 extra stem weights
  CHECK(param_count(p3) - param_count(p2) == 64ull * 1 * 4 * 7 * 7);
}

TEST_CASE("temporal extent is preserved through the frontend") {
  ResNetConfig cfg;
  cfg.input_spatial = 32;
  Rng rng(7);
  ResNet<float> net(cfg, rng);
  net.set_mode(Mode::eval);
  ad::NoGradGuard guard;
  for (std::size_t t : {5, 29}) {
    auto out = net.forward(ad::make_leaf<float>(rndf({1, 1, t, 32, 32}, rng)));
    CHECK(out->shape() == Shape{t, 1, 256});
  }
  auto vf = visual_forward(net, ad::make_leaf<float>(rndf({2, 1, 29, 32, 32}, rng)),
                           Mode::eval);
  CHECK(vf->shape() == Shape{2, 29, 256});

  CHECK_THROWS_WITH_AS(net.forward(ad::make_leaf<float>(rndf({1, 3, 4, 32, 32}, rng))),
                       doctest::Contains("grayscale"), Error);
}

TEST_CASE("eval determinism: duplicated batch entries get identical rows") {
  ResNetConfig cfg;
  cfg.input_spatial = 32;
  Rng rng(9);
  ResNet<float> net(cfg, rng);
  net.set_mode(Mode::eval);
  ad::NoGradGuard guard;
  auto one = rndf({1, 1, 3, 32, 32}, rng);
  Tensor<float> two({2, 1, 3, 32, 32});
  std::copy_n(one.data(), one.numel(), two.data());
  std::copy_n(one.data(), one.numel(), two.data() + one.numel());
  auto out = net.forward(ad::make_leaf<float>(two));  // [T,2,256]
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t f = 0; f < 256; ++f)
      CHECK(out->value[(t * 2 + 0) * 256 + f] == out->value[(t * 2 + 1) * 256 + f]);
}

TEST_CASE("zeroed residual block collapses to the identity") {
  Rng rng(11);
  auto block = BasicBlock<float>::make(8, 8, 1, rng);
  block.conv1.w->value.fill(0.0f);
  block.conv2.w->value.fill(0.0f);
  block.set_mode(Mode::eval);  // default running stats: BN(0) = 0
  auto x = rndf({1, 8, 2, 4, 4}, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = std::fabs(x[i]);  // stay in relu range
  auto y = block.forward(ad::make_leaf<float>(x));
  REQUIRE(y->shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(y->value[i] == doctest::Approx(x[i]).epsilon(1e-6));
}

TEST_CASE("constant-zero video matches the bias-propagation oracle") {
  // with fresh BN state (running mean 0, var 1, beta 0) every conv/BN/pool
  // layer maps zero to zero, so the only bias the zero video can pick up is
  // the FC head's: output rows must equal fc.b exactly
  ResNetConfig cfg;
  cfg.input_spatial = 32;
  Rng rng(13);
  ResNet<float> net(cfg, rng);
  net.set_mode(Mode::eval);
  ParamMap<float> params;
  BufMap<float> bufs;
  net.collect("v", params, bufs);
  const auto& fc_bias = params.at("v.fc.b")->value;

  ad::NoGradGuard guard;
  auto out = net.forward(ad::make_leaf<float>(Tensor<float>({1, 1, 3, 32, 32})));
  REQUIRE(out->shape() == Shape{3, 1, 256});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t f = 0; f < 256; ++f)
      CHECK(out->value[t * 256 + f] == doctest::Approx(fc_bias[f]).epsilon(1e-6));
}

TEST_CASE("frontend features are translation sensitive") {
  ResNetConfig cfg;
  cfg.input_spatial = 32;
  Rng rng(15);
  ResNet<float> net(cfg, rng);
  net.set_mode(Mode::eval);
  ad::NoGradGuard guard;
  // a bright blob, then the same blob shifted by 4 pixels
  auto render = [&](std::size_t off) {
    Tensor<float> v({1, 1, 3, 32, 32});
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t y = 8; y < 14; ++y)
        for (std::size_t x = 8 + off; x < 14 + off; ++x)
          v[(t * 32 + y) * 32 + x] = 1.0f;
    return v;
  };
  auto a = net.forward(ad::make_leaf<float>(render(0)));
  auto b = net.forward(ad::make_leaf<float>(render(4)));
  double delta = 0;
  for (std::size_t i = 0; i < a->numel(); ++i)
    delta += std::fabs(a->value[i] - b->value[i]);
  CHECK(delta > 1e-3);
}
