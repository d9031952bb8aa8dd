#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avword/model.hpp"

using namespace avword;

namespace {

Tensor<float> posterior(std::initializer_list<float> vals) {
  Tensor<float> p({vals.size()});
  std::size_t i = 0;
  for (float v : vals) p[i++] = v;
  return p;
}

Tensor<float> random_posterior(std::size_t k, Rng& rng) {
  Tensor<float> p({k});
  double sum = 0;
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = static_cast<float>(rng.uniform(0.01, 1.0));
    sum += p[i];
  }
  for (std::size_t i = 0; i < k; ++i) p[i] = static_cast<float>(p[i] / sum);
  // renormalize exactly in float
  float fsum = 0;
  for (std::size_t i = 0; i < k; ++i) fsum += p[i];
  p[k - 1] += 1.0f - fsum;
  return p;
}

std::size_t argmax(const Tensor<float>& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.numel(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

}  // namespace

TEST_CASE("backend input widths per model kind") {
  ModelSpec spec;
  spec.kind = ModelKind::visual;
  spec.boundary_mode = BoundaryMode::indicator;
  CHECK(spec.backend_input_dim() == 257);

  spec.kind = ModelKind::audiovisual;
  CHECK(spec.backend_input_dim() == 513);  // 256 visual + 256 audio + 1 indicator

  spec.kind = ModelKind::audio;
  CHECK(spec.backend_input_dim() == 256);  // boundaries entered at the spectra (162-wide)

  spec.kind = ModelKind::visual;
  spec.boundary_mode = BoundaryMode::unused;
  CHECK(spec.backend_input_dim() == 256);
}

TEST_CASE("audio-only network consumes 162-wide spectra with indicators") {
  ModelSpec spec;
  spec.kind = ModelKind::audio;
  spec.boundary_mode = BoundaryMode::indicator;
  spec.audio_frontend.hidden = 8;
  spec.backend.hidden = 8;
  spec.backend.dropout = false;
  spec.backend.batch_norm = false;
  spec.vocab_size = 4;
  Model m(spec, Rng(1));
  CHECK(m.spec().audio_frontend.input_dim == 162);  // 161 bins + indicator column

  ModelSpec plain = spec;
  plain.boundary_mode = BoundaryMode::unused;
  Model m2(plain, Rng(1));
  CHECK(m2.spec().audio_frontend.input_dim == 161);
}

TEST_CASE("multimodal mask law") {
  MultimodalDropConfig cfg;
  Rng rng(42);
  std::size_t both = 0, audio_only = 0, video_only = 0, neither = 0, no_bounds = 0;
  const std::size_t draws = 100000;
  for (std::size_t i = 0; i < draws; ++i) {
    auto m = multimodal_mask_sample(cfg, rng, Mode::train);
    if (m.use_audio && m.use_video) ++both;
    else if (m.use_audio) ++video_only;  // video dropped
    else if (m.use_video) ++audio_only;  // audio dropped
    else ++neither;
    if (!m.use_boundaries) ++no_bounds;
  }
  const double p_both = static_cast<double>(both) / draws;
  CHECK(p_both >= 0.49);
  CHECK(p_both <= 0.51);
  CHECK(neither == 0);  // exactly never
  CHECK(static_cast<double>(audio_only) / draws == doctest::Approx(0.25).epsilon(0.05));
  CHECK(static_cast<double>(video_only) / draws == doctest::Approx(0.25).epsilon(0.05));
  CHECK(static_cast<double>(no_bounds) / draws == doctest::Approx(0.25).epsilon(0.05));

  CHECK_THROWS_AS(multimodal_mask_sample(cfg, rng, Mode::eval), Error);

  MultimodalDropConfig keep = cfg;
  keep.p_drop_boundaries = 0.0;
  for (int i = 0; i < 1000; ++i)
    CHECK(multimodal_mask_sample(keep, rng, Mode::train).use_boundaries);
}

TEST_CASE("late fusion degeneracies") {
  FusionConfig g0;
  g0.gamma = 0.0;
  FusionConfig g1;
  g1.gamma = 1.0;
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto pv = random_posterior(9, rng);
    auto pa = random_posterior(9, rng);
    auto fa = late_fuse(pv, pa, g0);
    auto fv = late_fuse(pv, pa, g1);
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(std::fabs(fa[i] - pa[i]) < 1e-6);
      CHECK(std::fabs(fv[i] - pv[i]) < 1e-6);
    }
  }
}

TEST_CASE("late fusion worked example flips the argmax") {
  FusionConfig cfg;
  cfg.gamma = 0.4;
  auto out = late_fuse(posterior({0.8f, 0.2f}), posterior({0.3f, 0.7f}), cfg);
  // oracle: w0 = 0.8^0.4 * 0.3^0.6 = 0.444134..., w1 = 0.2^0.4 * 0.7^0.6
  CHECK(out[0] == doctest::Approx(0.511537).epsilon(1e-4));
  CHECK(out[1] == doctest::Approx(0.488463).epsilon(1e-4));
  CHECK(argmax(out) == 0);  // audio favored class 1, fusion flips to 0
}

TEST_CASE("fusion argmax invariance to positive posterior rescaling") {
  FusionConfig cfg;
  cfg.gamma = 0.4;
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    auto pv = random_posterior(6, rng);
    auto pa = random_posterior(6, rng);
    const auto base_arg = argmax(late_fuse(pv, pa, cfg));
    // scale then renormalize: the argmax may not move
    const float s = static_cast<float>(rng.uniform(0.05, 20.0));
    Tensor<float> pv2 = pv;
    float sum = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      pv2[i] *= s;
      sum += pv2[i];
    }
    for (std::size_t i = 0; i < 6; ++i) pv2[i] /= sum;
    float fix = 0;
    for (std::size_t i = 0; i < 6; ++i) fix += pv2[i];
    pv2[5] += 1.0f - fix;
    CHECK(argmax(late_fuse(pv2, pa, cfg)) == base_arg);
  }
}

TEST_CASE("fusion log odds interpolate linearly in gamma") {
  Rng rng(11);
  auto pv = random_posterior(5, rng);
  auto pa = random_posterior(5, rng);
  auto log_odds = [](const Tensor<float>& p, std::size_t a, std::size_t b) {
    return std::log(static_cast<double>(p[a])) - std::log(static_cast<double>(p[b]));
  };
  const double la = log_odds(pa, 2, 4);
  const double lv = log_odds(pv, 2, 4);
  for (double gamma : {0.1, 0.3, 0.5, 0.9}) {
    FusionConfig cfg;
    cfg.gamma = gamma;
    auto f = late_fuse(pv, pa, cfg);
    CHECK(log_odds(f, 2, 4) ==
          doctest::Approx(gamma * lv + (1.0 - gamma) * la).epsilon(1e-4));
  }
}

TEST_CASE("uniform visual posterior preserves the audio ranking") {
  Rng rng(13);
  auto pa = random_posterior(8, rng);
  Tensor<float> uniform({8});
  for (std::size_t i = 0; i < 8; ++i) uniform[i] = 0.125f;
  FusionConfig cfg;
  cfg.gamma = 0.4;
  auto f = late_fuse(uniform, pa, cfg);
  std::vector<std::size_t> rank_a(8), rank_f(8);
  for (std::size_t i = 0; i < 8; ++i) rank_a[i] = rank_f[i] = i;
  std::sort(rank_a.begin(), rank_a.end(), [&](auto x, auto y) { return pa[x] > pa[y]; });
  std::sort(rank_f.begin(), rank_f.end(), [&](auto x, auto y) { return f[x] > f[y]; });
  CHECK(rank_a == rank_f);
}

TEST_CASE("fusion floors zero cells instead of diverging") {
  auto pv = posterior({1.0f, 0.0f});
  auto pa = posterior({0.5f, 0.5f});
  FusionConfig cfg;
  cfg.gamma = 0.4;
  auto f = late_fuse(pv, pa, cfg);
  CHECK(std::isfinite(f[0]));
  CHECK(std::isfinite(f[1]));
  CHECK(f[0] > f[1]);

  CHECK_THROWS_AS(late_fuse(posterior({0.7f, 0.7f}), pa, cfg), Error);
  FusionConfig bad;
  bad.gamma = 1.5;
  CHECK_THROWS_AS(late_fuse(pv, pa, bad), Error);
}

TEST_CASE("assembled model widths and graceful modality degradation") {
  // zero-filled dropped modality with zero first-layer weights for that slice
  // behaves like a never-built path: verified through the AV forward
  ModelSpec spec;
  spec.kind = ModelKind::audiovisual;
  spec.boundary_mode = BoundaryMode::indicator;
  spec.resnet.input_spatial = 16;
  spec.resnet.feature_dim = 8;
  spec.audio_frontend.hidden = 8;
  spec.audio_frontend.input_dropout_p = 0.0;
  spec.backend.hidden = 8;
  spec.backend.dropout = false;
  spec.backend.batch_norm = false;
  spec.vocab_size = 4;
  Model model(spec, Rng(3));
  CHECK(model.spec().backend_input_dim() == 17);  // 8 + 8 + 1

  Batch batch;
  Rng rng(5);
  batch.frames = Tensor<float>({1, 1, 8, 16, 16});
  for (std::size_t i = 0; i < batch.frames.numel(); ++i)
    batch.frames[i] = static_cast<float>(rng.normal());
  batch.spectra = Tensor<float>({32, 1, kSpectralBins});
  for (std::size_t i = 0; i < batch.spectra.numel(); ++i)
    batch.spectra[i] = static_cast<float>(rng.normal());
  batch.bounds = {{2, 6}};
  batch.labels = {1};
  Rng frng(7);
  auto out = model.forward(batch, Mode::eval, frng);
  CHECK(out.posteriors.shape() == Shape{1, 4});
  double sum = 0;
  for (std::size_t k = 0; k < 4; ++k) sum += out.posteriors[k];
  CHECK(std::fabs(sum - 1.0) < 1e-6);
  CHECK(std::isfinite(out.loss->value[0]));
}
