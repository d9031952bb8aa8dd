#include "avword/checks.hpp"

#include <chrono>
#include <cmath>

#include "avword/backend.hpp"
#include "avword/gradcheck.hpp"
#include "avword/resnet.hpp"

namespace avword {

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

ad::VarPtr<double> reduce(const ad::VarPtr<double>& y, Tensor<double> coef) {
  return ad::weighted_sum(ad::reshape(y, {y->numel()}), std::move(coef));
}

}  // namespace

ShapeCheckResult run_shape_checks(std::ostream& os, bool run_full_forward) {
  ShapeCheckResult res;

  ResNetConfig cfg;  // depth 18, 112x112, 3D stem, feature 256
  const ShapeChain chain = shape_chain_report(cfg, 112);
  os << "visual frontend chain (T=29 preserved): " << chain.str() << "\n";
  const std::vector<std::array<std::size_t, 3>> want_stages{
      {1, 112, 112}, {64, 28, 28}, {128, 14, 14}, {256, 7, 7}, {512, 4, 4}};
  bool ok = chain.stages == want_stages && chain.flattened == 8192 &&
            chain.feature_dim == 256;

  // block outputs at t-extents {29, 15, 7, 4, 1}: published points are
  // 29x256 -> 7x512 -> 1x1024, then the 1024 -> 256 -> 500 bottleneck
  const auto tchain = TConvBackend<float>::t_chain(29);
  const std::vector<std::size_t> want_t{29, 15, 7, 4, 1};
  ok = ok && tchain == want_t;
  os << "temporal backend chain (time x channels): 29x256 -> " << tchain[2] << "x512 -> "
     << tchain[4] << "x1024 -> 256 -> 500\n";

  if (run_full_forward) {
    Rng rng(12345);
    ResNet<float> net(cfg, rng);
    net.set_mode(Mode::eval);
    Tensor<float> frames({1, 1, 29, 112, 112});
    Rng fr(1);
    for (std::size_t i = 0; i < frames.numel(); ++i)
      frames[i] = static_cast<float>(fr.normal());
    const auto t0 = std::chrono::steady_clock::now();
    ad::NoGradGuard guard;
    auto feat = net.forward(ad::make_leaf<float>(std::move(frames)));
    res.forward_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ok = ok && feat->shape() == Shape{29, 1, 256};
    os << "full 112x112 forward (batch 1, T=29): output " << shape_str(feat->shape())
       << " in " << res.forward_seconds << " s\n";
  }

  res.ok = ok;
  os << (ok ? "shape checks passed\n" : "shape checks FAILED\n");
  return res;
}

GradCheckSummary run_gradient_battery(std::ostream& os) {
  GradCheckSummary sum;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  bool ok = true;

  auto record = [&](const char* name, double err, double gate) {
    worst = std::max(worst, err);
    const bool pass = err < gate;
    ok = ok && pass;
    os << "  " << name << ": max rel err " << err << (pass ? "  ok" : "  FAIL") << "\n";
  };

  {
    double w = 0;
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
      auto wv = ad::make_leaf<double>(
          rnd({2, 2, spec.kernel.t, spec.kernel.h, spec.kernel.w}, rng), true);
      auto b = ad::make_leaf<double>(rnd({2}, rng), true);
      Rng crng(seed + 1000);
      Tensor<double> coef = coef_for(ad::conv3d<double>(x, spec, wv, b)->numel(), crng);
      w = std::max(w, finite_diff_check(
                          [&] { return reduce(ad::conv3d<double>(x, spec, wv, b), coef); },
                          {x, wv, b})
                          .max_rel_error);
    }
    record("conv3d", w, 1e-4);
  }

  {
    double w = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(50 + seed);
      Tensor<double> xt({1, 2, 2, 4, 4});
      std::vector<std::size_t> perm(xt.numel());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[rng.next_below(i)]);
      for (std::size_t i = 0; i < xt.numel(); ++i)
        xt[i] = static_cast<double>(perm[i]) * 0.1 + rng.uniform(0.0, 0.01);
      auto x = ad::make_leaf<double>(xt, true);
      Rng crng(seed + 2000);
      Tensor<double> coef =
          coef_for(ad::maxpool3d<double>(x, {2, 2, 2}, {1, 2, 2}, {0, 1, 1})->numel(), crng);
      w = std::max(
          w, finite_diff_check(
                 [&] {
                   return reduce(ad::maxpool3d<double>(x, {2, 2, 2}, {1, 2, 2}, {0, 1, 1}),
                                 coef);
                 },
                 {x})
                 .max_rel_error);
    }
    record("maxpool3d", w, 1e-4);
  }

  {
    double w = 0;
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
      Tensor<double> coef = coef_for(24, crng);
      w = std::max(w,
                   finite_diff_check(
                       [&] { return reduce(ad::batchnorm_seq<double>(x, st), coef); },
                       {x, st.gamma, st.beta})
                       .max_rel_error);
    }
    record("batchnorm", w, 1e-4);
  }

  {
    double w = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(200 + seed);
      auto x = ad::make_leaf<double>(rnd({3, 5}, rng), true);
      auto wv = ad::make_leaf<double>(rnd({4, 5}, rng), true);
      auto b = ad::make_leaf<double>(rnd({4}, rng), true);
      Rng crng(seed + 4000);
      Tensor<double> coef = coef_for(12, crng);
      w = std::max(w, finite_diff_check(
                          [&] { return reduce(ad::linear<double>(x, wv, b), coef); },
                          {x, wv, b})
                          .max_rel_error);
    }
    record("linear", w, 1e-4);
  }

  {
    double w = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(300 + seed);
      auto x = ad::make_leaf<double>(rnd({3, 6}, rng, 2.0), true);
      std::vector<std::size_t> labels{rng.next_below(6), rng.next_below(6),
                                      rng.next_below(6)};
      w = std::max(w, finite_diff_check(
                          [&] { return ad::softmax_cross_entropy<double>(x, labels).loss; },
                          {x})
                          .max_rel_error);
    }
    record("softmax_cross_entropy", w, 1e-4);
  }

  {
    double w = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(500 + seed);
      auto cell = LstmCell<double>::make(3, 4, rng);
      auto x = ad::make_leaf<double>(rnd({2, 3}, rng), true);
      auto h = ad::make_leaf<double>(rnd({2, 4}, rng, 0.5), true);
      auto c = ad::make_leaf<double>(rnd({2, 4}, rng, 0.5), true);
      Rng crng(seed + 6000);
      Tensor<double> coef_h = coef_for(8, crng);
      Tensor<double> coef_c = coef_for(8, crng);
      w = std::max(w, finite_diff_check(
                          [&] {
                            auto st = lstm_step<double>(cell, {h, c}, x);
                            return ad::add(
                                ad::weighted_sum(ad::reshape(st.h, {8}), coef_h),
                                ad::weighted_sum(ad::reshape(st.c, {8}), coef_c));
                          },
                          {x, h, c, cell.W, cell.U, cell.b})
                          .max_rel_error);
    }
    record("lstm_step", w, 1e-4);
  }

  {
    double w = 0;
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
      std::vector<ad::VarPtr<double>> inputs{x, head.w, head.b};
      for (auto* stk : {&fwd, &bwd})
        for (auto& l : stk->layers) {
          inputs.push_back(l.cell.W);
          inputs.push_back(l.cell.U);
          inputs.push_back(l.cell.b);
        }
      // five-point stencil at a wider step: the composite's smallest gradients
      // sit near the 1e-8 denominator floor where two-point probes are noise
      w = std::max(w, finite_diff_check(
                          [&] {
                            Rng drng(seed);
                            auto of = run_direction(fwd, x, drng, Mode::eval);
                            auto ob = run_direction(bwd, x, drng, Mode::eval);
                            auto cat = bidirectional_concat(of, ob);
                            auto pooled = ad::mean_axis0(cat);
                            return ad::softmax_cross_entropy<double>(head.forward(pooled),
                                                                     labels)
                                .loss;
                          },
                          inputs, 2e-3, 4)
                          .max_rel_error);
    }
    record("bidirectional_backend", w, 1e-4);
  }

  sum.worst = worst;
  sum.ok = ok;
  sum.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  os << (ok ? "gradient battery passed" : "gradient battery FAILED") << " in "
     << sum.seconds << " s\n";
  return sum;
}

}  // namespace avword
