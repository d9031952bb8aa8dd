#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "avword/backend.hpp"
#include "avword/nn_ops.hpp"

using namespace avword;

namespace {

Tensor<float> rndf(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<float> t(std::move(s));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.normal() * scale);
  return t;
}

}  // namespace

TEST_CASE("boundary indicator column") {
  Rng rng(1);
  auto feat = ad::make_leaf<float>(rndf({29, 1, 4}, rng));
  std::vector<BoundarySpec> specs{{10, 18}};
  auto aug = boundary_augment<float>(feat, specs, BoundaryMode::indicator);
  REQUIRE(aug->shape() == Shape{29, 1, 5});
  for (std::size_t t = 0; t < 29; ++t) {
    // original columns bitwise intact
    for (std::size_t d = 0; d < 4; ++d)
      CHECK(aug->value[t * 5 + d] == feat->value[t * 4 + d]);
    CHECK(aug->value[t * 5 + 4] == ((t >= 10 && t < 18) ? 1.0f : 0.0f));
  }

  // unused mode is the same node (bitwise identity)
  CHECK(boundary_augment<float>(feat, specs, BoundaryMode::unused).get() == feat.get());
}

TEST_CASE("boundary removal modes partition the rows") {
  Rng rng(2);
  auto feat = ad::make_leaf<float>(rndf({12, 1, 3}, rng));
  std::vector<BoundarySpec> specs{{4, 9}};
  auto inside = boundary_augment<float>(feat, specs, BoundaryMode::remove_outside);
  auto outside = boundary_augment<float>(feat, specs, BoundaryMode::remove_inside);
  CHECK(inside->shape() == Shape{5, 1, 3});
  CHECK(outside->shape() == Shape{7, 1, 3});

  // the two row multisets disjointly union to the original rows
  std::multiset<float> merged, original;
  for (std::size_t i = 0; i < inside->numel(); ++i) merged.insert(inside->value[i]);
  for (std::size_t i = 0; i < outside->numel(); ++i) merged.insert(outside->value[i]);
  for (std::size_t i = 0; i < feat->numel(); ++i) original.insert(feat->value[i]);
  CHECK(merged == original);

  // full-interval remove_outside keeps every row
  std::vector<BoundarySpec> full{{0, 12}};
  auto kept = boundary_augment<float>(feat, full, BoundaryMode::remove_outside);
  CHECK(kept->shape() == Shape{12, 1, 3});
  for (std::size_t i = 0; i < feat->numel(); ++i)
    CHECK(kept->value[i] == feat->value[i]);
  CHECK_THROWS_AS(boundary_augment<float>(feat, full, BoundaryMode::remove_inside), Error);

  std::vector<BoundarySpec> bad{{9, 14}};
  CHECK_THROWS_AS(boundary_augment<float>(feat, bad, BoundaryMode::indicator), Error);
}

TEST_CASE("per-sample boundaries in one batch") {
  Rng rng(3);
  auto feat = ad::make_leaf<float>(rndf({10, 2, 2}, rng));
  std::vector<BoundarySpec> specs{{2, 6}, {5, 9}};
  auto inside = boundary_augment<float>(feat, specs, BoundaryMode::remove_outside);
  REQUIRE(inside->shape() == Shape{4, 2, 2});
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t d = 0; d < 2; ++d) {
      CHECK(inside->value[(k * 2 + 0) * 2 + d] == feat->value[((k + 2) * 2 + 0) * 2 + d]);
      CHECK(inside->value[(k * 2 + 1) * 2 + d] == feat->value[((k + 5) * 2 + 1) * 2 + d]);
    }

  // ragged kept lengths are rejected
  std::vector<BoundarySpec> ragged{{2, 6}, {5, 8}};
  CHECK_THROWS_WITH_AS(boundary_augment<float>(feat, ragged, BoundaryMode::remove_outside),
                       doctest::Contains("ragged"), Error);
}

TEST_CASE("backend II posteriors and aggregation") {
  BilstmBackendConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 8;
  cfg.n_classes = 7;
  cfg.batch_norm = false;
  cfg.dropout = false;
  Rng rng(4);
  auto backend = BilstmBackend<float>::make(5, cfg, rng);
  backend.set_mode(Mode::eval);
  Rng drng(0);
  auto feat = ad::make_leaf<float>(rndf({6, 3, 5}, rng));
  auto logits = backend.forward(feat, feat, drng, Mode::eval);
  REQUIRE(logits->shape() == Shape{3, 7});
  auto post = softmax_rows(logits->value);
  for (std::size_t n = 0; n < 3; ++n) {
    double sum = 0;
    for (std::size_t k = 0; k < 7; ++k) sum += post[n * 7 + k];
    CHECK(std::fabs(sum - 1.0) < 1e-6);
  }

  // zero LSTM weights: average and last aggregation see all-zero sequences
  auto zero_lstms = [&](BilstmBackend<float>& b) {
    for (auto* stack : {&b.fwd, &b.bwd})
      for (auto& l : stack->layers) {
        l.cell.W->value.fill(0.0f);
        l.cell.U->value.fill(0.0f);
        l.cell.b->value.fill(0.0f);
      }
  };
  BilstmBackendConfig avg_cfg = cfg;
  Rng r1(9);
  auto avg_b = BilstmBackend<float>::make(5, avg_cfg, r1);
  BilstmBackendConfig last_cfg = cfg;
  last_cfg.aggregate = Aggregation::last;
  Rng r2(9);
  auto last_b = BilstmBackend<float>::make(5, last_cfg, r2);  // same init stream
  zero_lstms(avg_b);
  zero_lstms(last_b);
  auto la = avg_b.forward(feat, feat, drng, Mode::eval);
  auto ll = last_b.forward(feat, feat, drng, Mode::eval);
  for (std::size_t i = 0; i < la->numel(); ++i) CHECK(la->value[i] == ll->value[i]);
}

TEST_CASE("zeroed indicator weights reproduce the unused-mode network") {
  // Backend weights for the indicator column set to zero: output must equal
  // the same backend run in unused mode (identical remaining parameters).
  BilstmBackendConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 6;
  cfg.n_classes = 4;
  cfg.batch_norm = false;
  cfg.dropout = false;
  Rng rng(5);
  auto with_col = BilstmBackend<float>::make(5, cfg, rng);   // 4 features + indicator
  Rng rng2(6);
  auto without = BilstmBackend<float>::make(4, cfg, rng2);
  // copy parameters: first-layer W of `with_col` = [W_without | 0]
  for (auto pair : {std::make_pair(&with_col.fwd, &without.fwd),
                    std::make_pair(&with_col.bwd, &without.bwd)}) {
    auto& cw = pair.first->layers[0].cell;
    auto& co = pair.second->layers[0].cell;
    cw.W->value.fill(0.0f);
    for (std::size_t r = 0; r < 24; ++r)
      for (std::size_t d = 0; d < 4; ++d)
        cw.W->value[r * 5 + d] = co.W->value[r * 4 + d];
    cw.U->value = co.U->value;
    cw.b->value = co.b->value;
  }
  with_col.head.w->value = without.head.w->value;
  with_col.head.b->value = without.head.b->value;

  Rng drng(0);
  auto feat = ad::make_leaf<float>(rndf({8, 1, 4}, rng));
  std::vector<BoundarySpec> specs{{2, 6}};
  auto aug = boundary_augment<float>(feat, specs, BoundaryMode::indicator);
  auto plain = boundary_augment<float>(feat, specs, BoundaryMode::unused);
  auto la = with_col.forward(aug, aug, drng, Mode::eval);
  auto lp = without.forward(plain, plain, drng, Mode::eval);
  for (std::size_t i = 0; i < la->numel(); ++i) CHECK(la->value[i] == lp->value[i]);
}

TEST_CASE("zero-filled dropped modality equals a never-built audio path") {
  // audiovisual per-direction rows are [visual 4 | audio 3 | b 1]; zeroing the
  // audio stream and the weights of its slice must reproduce a 5-wide
  // visual-plus-boundary backend bitwise
  BilstmBackendConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 6;
  cfg.n_classes = 4;
  cfg.batch_norm = false;
  cfg.dropout = false;
  Rng rng(41);
  auto av = BilstmBackend<float>::make(8, cfg, rng);
  Rng rng2(42);
  auto vo = BilstmBackend<float>::make(5, cfg, rng2);
  for (auto pair : {std::make_pair(&av.fwd, &vo.fwd), std::make_pair(&av.bwd, &vo.bwd)}) {
    auto& ca = pair.first->layers[0].cell;
    auto& cv = pair.second->layers[0].cell;
    ca.W->value.fill(0.0f);
    for (std::size_t r = 0; r < 24; ++r) {
      for (std::size_t d = 0; d < 4; ++d)
        ca.W->value[r * 8 + d] = cv.W->value[r * 5 + d];       // visual slice
      ca.W->value[r * 8 + 7] = cv.W->value[r * 5 + 4];         // boundary column
    }
    ca.U->value = cv.U->value;
    ca.b->value = cv.b->value;
  }
  av.head.w->value = vo.head.w->value;
  av.head.b->value = vo.head.b->value;

  Rng vr(43), drng(0);
  auto xv = rndf({7, 1, 4}, vr);
  Tensor<float> with_audio({7, 1, 8});
  Tensor<float> visual_only({7, 1, 5});
  for (std::size_t t = 0; t < 7; ++t) {
    for (std::size_t d = 0; d < 4; ++d) {
      with_audio[t * 8 + d] = xv[t * 4 + d];
      visual_only[t * 5 + d] = xv[t * 4 + d];
    }
    // audio slice stays zero (dropped stream); boundary flag at t in [2,5)
    const float b = (t >= 2 && t < 5) ? 1.0f : 0.0f;
    with_audio[t * 8 + 7] = b;
    visual_only[t * 5 + 4] = b;
  }
  auto la = av.forward(ad::make_leaf<float>(with_audio), ad::make_leaf<float>(with_audio),
                       drng, Mode::eval);
  auto lv = vo.forward(ad::make_leaf<float>(visual_only), ad::make_leaf<float>(visual_only),
                       drng, Mode::eval);
  for (std::size_t i = 0; i < la->numel(); ++i) CHECK(la->value[i] == lv->value[i]);
}

TEST_CASE("table-variant configs differ only in the published knobs") {
  // V15: 2 layers, dropouts, batch norm, average pooling; V14: same with
  // last-step aggregation; V13: single layer
  BilstmBackendConfig v15;
  CHECK(v15.layers == 2);
  CHECK(v15.dropout);
  CHECK(v15.batch_norm);
  CHECK(v15.aggregate == Aggregation::average);
  BilstmBackendConfig v14 = v15;
  v14.aggregate = Aggregation::last;
  BilstmBackendConfig v13 = v15;
  v13.layers = 1;

  // the full regularized variant runs its train path (BN + both dropouts)
  Rng rng(51);
  auto b = BilstmBackend<float>::make(10, v15, rng);
  b.set_mode(Mode::train);
  Rng drng(7);
  auto feat = rndf({6, 4, 10}, rng);
  auto logits = b.forward(ad::make_leaf<float>(feat), ad::make_leaf<float>(feat), drng,
                          Mode::train);
  CHECK(logits->shape() == Shape{4, 500});
  for (std::size_t i = 0; i < logits->numel(); ++i)
    CHECK(std::isfinite(logits->value[i]));
}

TEST_CASE("backend I chain and degenerate input") {
  CHECK(TConvBackend<float>::t_chain(29) == std::vector<std::size_t>{29, 15, 7, 4, 1});
  CHECK_THROWS_AS(TConvBackend<float>::t_chain(4), Error);

  TConvBackendConfig cfg;
  cfg.in_channels = 16;
  cfg.bottleneck = 8;
  cfg.n_classes = 5;
  Rng rng(7);
  auto backend = TConvBackend<float>::make(cfg, rng);
  Rng vr(8);
  auto feat = ad::make_leaf<float>(rndf({29, 2, 16}, vr));
  auto logits = backend.forward(feat, Mode::eval);
  CHECK(logits->shape() == Shape{2, 5});

  // zero input, zero effective bias path: uniform posteriors
  backend.head.b->value.fill(0.0f);
  backend.bottleneck.b->value.fill(0.0f);
  auto zl = backend.forward(ad::make_leaf<float>(Tensor<float>({29, 1, 16})), Mode::eval);
  auto zpost = softmax_rows(zl->value);
  for (std::size_t k = 0; k < 5; ++k)
    CHECK(zpost[k] == doctest::Approx(0.2).epsilon(1e-5));

  CHECK_THROWS_AS(
      backend.forward(ad::make_leaf<float>(Tensor<float>({4, 1, 16})), Mode::eval), Error);
}

TEST_CASE("posterior argmax invariance under logit shifts and positive scaling") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> logits({1, 11});
    for (std::size_t i = 0; i < 11; ++i)
      logits[i] = static_cast<float>(rng.uniform(-5.0, 5.0));
    auto base = softmax_rows(logits);
    std::size_t arg0 = 0;
    for (std::size_t k = 1; k < 11; ++k)
      if (base[k] > base[arg0]) arg0 = k;

    Tensor<float> shifted({1, 11});
    const float c = static_cast<float>(rng.uniform(-10.0, 10.0));
    for (std::size_t i = 0; i < 11; ++i) shifted[i] = logits[i] + c;
    auto post = softmax_rows(shifted);
    std::size_t arg1 = 0;
    for (std::size_t k = 1; k < 11; ++k)
      if (post[k] > post[arg1]) arg1 = k;
    CHECK(arg0 == arg1);

    // positive rescaling of the posterior itself cannot move the argmax
    const float scale = static_cast<float>(rng.uniform(0.1, 9.0));
    std::size_t arg2 = 0;
    for (std::size_t k = 1; k < 11; ++k)
      if (base[k] * scale > base[arg2] * scale) arg2 = k;
    CHECK(arg2 == arg0);
  }
}
