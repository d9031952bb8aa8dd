#include "avword/backend.hpp"

namespace avword {

BoundaryMode boundary_mode_from_string(const std::string& s) {
  if (s == "indicator") return BoundaryMode::indicator;
  if (s == "remove_outside") return BoundaryMode::remove_outside;
  if (s == "remove_inside") return BoundaryMode::remove_inside;
  if (s == "unused") return BoundaryMode::unused;
  AVW_FAIL("unknown boundary mode '" << s
                                     << "' (expected indicator, remove_outside,"
                                        " remove_inside or unused)");
}

std::string boundary_mode_to_string(BoundaryMode m) {
  switch (m) {
    case BoundaryMode::indicator: return "indicator";
    case BoundaryMode::remove_outside: return "remove_outside";
    case BoundaryMode::remove_inside: return "remove_inside";
    case BoundaryMode::unused: return "unused";
  }
  AVW_FAIL("bad boundary mode value");
}

void Vocabulary::validate() const {
  AVW_CHECK(words.size() >= 2, "vocabulary needs at least 2 words");
  for (std::size_t i = 0; i < words.size(); ++i)
    for (std::size_t j = i + 1; j < words.size(); ++j)
      AVW_CHECK(words[i] != words[j], "duplicate vocabulary word '" << words[i] << "'");
}

Vocabulary Vocabulary::make_default(std::size_t n) {
  static const char* kNato[] = {"ALPHA",  "BRAVO",   "CHARLIE", "DELTA",  "ECHO",
                                "FOXTROT", "GOLF",    "HOTEL",   "INDIA",  "JULIET",
                                "KILO",    "LIMA",    "MIKE",    "NOVEMBER", "OSCAR",
                                "PAPA",    "QUEBEC",  "ROMEO",   "SIERRA", "TANGO",
                                "UNIFORM", "VICTOR",  "WHISKEY", "XRAY",   "YANKEE",
                                "ZULU"};
  Vocabulary v;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < std::size(kNato)) v.words.push_back(kNato[i]);
    else v.words.push_back("WORD" + std::to_string(i));
  }
  v.validate();
  return v;
}

std::size_t boundary_kept_rows(std::size_t t_total, const BoundarySpec& spec,
                               BoundaryMode mode) {
  spec.validate(t_total);
  switch (mode) {
    case BoundaryMode::indicator:
    case BoundaryMode::unused:
      return t_total;
    case BoundaryMode::remove_outside:
      return spec.width();
    case BoundaryMode::remove_inside:
      return t_total - spec.width();
  }
  AVW_FAIL("bad boundary mode value");
}

template <typename T>
ad::VarPtr<T> boundary_augment(const ad::VarPtr<T>& features,
                               const std::vector<BoundarySpec>& specs, BoundaryMode mode,
                               const std::vector<T>* indicator_scale) {
  const Shape& s = features->shape();
  AVW_CHECK(s.size() == 3, "boundary_augment expects [T,N,D]");
  const std::size_t t_total = s[0], n = s[1];
  AVW_CHECK(specs.size() == n, "boundary_augment: " << specs.size() << " specs for " << n
                                                    << " samples");
  for (const auto& sp : specs) sp.validate(t_total);

  if (mode == BoundaryMode::unused) return features;

  if (mode == BoundaryMode::indicator) {
    Tensor<T> col({t_total, n, 1});
    for (std::size_t i = 0; i < n; ++i) {
      const T v = indicator_scale ? (*indicator_scale)[i] : T(1);
      for (std::size_t t = specs[i].start_frame; t < specs[i].end_frame; ++t)
        col[t * n + i] = v;
    }
    return ad::concat_cols<T>({features, ad::make_leaf<T>(std::move(col))});
  }

  // remove modes: per-sample row selection through a flattened [T*N, D] gather
  const std::size_t kept = boundary_kept_rows(t_total, specs[0], mode);
  AVW_CHECK(kept > 0, "boundary removal would produce an empty sequence");
  std::vector<std::vector<std::size_t>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < t_total; ++t) {
      const bool inside = t >= specs[i].start_frame && t < specs[i].end_frame;
      if ((mode == BoundaryMode::remove_outside) == inside) rows[i].push_back(t);
    }
    AVW_CHECK(rows[i].size() == kept,
              "boundary removal yields ragged batch: sample 0 keeps "
                  << kept << " rows, sample " << i << " keeps " << rows[i].size());
  }
  std::vector<std::size_t> flat;
  flat.reserve(kept * n);
  for (std::size_t k = 0; k < kept; ++k)
    for (std::size_t i = 0; i < n; ++i) flat.push_back(rows[i][k] * n + i);
  auto flat_feat = ad::reshape(features, {t_total * n, s[2]});
  auto picked = ad::gather_rows(flat_feat, std::move(flat));
  return ad::reshape(picked, {kept, n, s[2]});
}

template ad::VarPtr<float> boundary_augment<float>(const ad::VarPtr<float>&,
                                                   const std::vector<BoundarySpec>&,
                                                   BoundaryMode,
                                                   const std::vector<float>*);
template ad::VarPtr<double> boundary_augment<double>(const ad::VarPtr<double>&,
                                                     const std::vector<BoundarySpec>&,
                                                     BoundaryMode,
                                                     const std::vector<double>*);

// ---------------------------------------------------------------------------
// Backend II: bidirectional LSTM
// ---------------------------------------------------------------------------

template <typename T>
BilstmBackend<T> BilstmBackend<T>::make(std::size_t input_dim,
                                        const BilstmBackendConfig& cfg, Rng& rng) {
  AVW_CHECK(cfg.layers == 1 || cfg.layers == 2, "Backend II supports 1 or 2 BiLSTM layers");
  BilstmBackend<T> b;
  b.cfg = cfg;
  for (Direction dir : {Direction::forward, Direction::backward}) {
    DirectionalStack<T> stack;
    stack.direction = dir;
    std::size_t feed = input_dim;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      LstmLayerSpec<T> layer;
      layer.cell = LstmCell<T>::make(feed, cfg.hidden, rng);
      layer.input_dropout_p = cfg.dropout ? cfg.input_dropout_p : 0.0;
      stack.layers.push_back(std::move(layer));
      feed = cfg.hidden;
    }
    (dir == Direction::forward ? b.fwd : b.bwd) = std::move(stack);
  }
  b.head_bn = BatchNormLayer<T>::make(2 * cfg.hidden, false);
  b.head = LinearLayer<T>::make(2 * cfg.hidden, cfg.n_classes, rng);
  return b;
}

template <typename T>
ad::VarPtr<T> BilstmBackend<T>::forward(const ad::VarPtr<T>& feat_fwd,
                                        const ad::VarPtr<T>& feat_bwd, Rng& rng,
                                        Mode mode) {
  AVW_CHECK(feat_fwd->shape().size() == 3 && feat_bwd->shape().size() == 3,
            "Backend II expects [T,N,D] per-direction inputs");
  AVW_CHECK(feat_fwd->shape()[0] >= 1, "Backend II given an empty sequence");
  auto of = run_direction(fwd, feat_fwd, rng, mode);
  auto ob = run_direction(bwd, feat_bwd, rng, mode);
  auto cat = bidirectional_concat(of, ob);  // [T,N,2H]
  const std::size_t tlen = cat->shape()[0];
  const std::size_t n = cat->shape()[1];
  const std::size_t w = cat->shape()[2];
  ad::VarPtr<T> agg;
  if (cfg.aggregate == Aggregation::average) {
    agg = ad::mean_axis0(cat);  // [N,2H]
  } else {
    agg = ad::reshape(ad::slice_rows(cat, tlen - 1, tlen), {n, w});
  }
  auto row = ad::reshape(agg, {std::size_t(1), n, w});  // [1,N,2H] for seq-style BN/dropout
  if (cfg.batch_norm) {
    head_bn.set_mode(mode);
    row = head_bn.forward(row);
  }
  if (cfg.dropout) row = ad::dropout_shared_mask(row, cfg.head_dropout_p, rng, mode);
  return head.forward(ad::reshape(row, {n, w}));
}

template <typename T>
void BilstmBackend<T>::set_mode(Mode m) {
  fwd.set_mode(m);
  bwd.set_mode(m);
  head_bn.set_mode(m);
}

template <typename T>
void BilstmBackend<T>::collect(const std::string& prefix, ParamMap<T>& params,
                               BufMap<T>& bufs) {
  fwd.collect(prefix + ".fwd", params, bufs);
  bwd.collect(prefix + ".bwd", params, bufs);
  if (cfg.batch_norm) head_bn.collect(prefix + ".head_bn", params, bufs);
  head.collect(prefix + ".head", params, bufs);
}

template struct BilstmBackend<float>;
template struct BilstmBackend<double>;

// ---------------------------------------------------------------------------
// Backend I: temporal convolutional
// ---------------------------------------------------------------------------

namespace {

std::size_t conv_t_out(std::size_t t) { return (t + 2 - 3) / 2 + 1; }  // k3 s2 p1
std::size_t pool_t_out(std::size_t t) {
  AVW_CHECK(t >= 3, "temporal extent " << t << " too short for the k=3 pooling stage");
  return (t - 3) / 2 + 1;  // k3 s2 p0
}

}  // namespace

template <typename T>
std::vector<std::size_t> TConvBackend<T>::t_chain(std::size_t t_in) {
  AVW_CHECK(t_in >= 5, "Backend I needs at least 5 frames for two x4 reductions, got " << t_in);
  std::vector<std::size_t> chain{t_in};
  std::size_t t = t_in;
  for (int block = 0; block < 2; ++block) {
    t = conv_t_out(t);
    chain.push_back(t);
    t = pool_t_out(t);
    chain.push_back(t);
  }
  if (t > 1) {
    chain.push_back(1);  // global pool over the remaining steps
  }
  return chain;
}

template <typename T>
TConvBackend<T> TConvBackend<T>::make(const TConvBackendConfig& cfg, Rng& rng) {
  TConvBackend<T> b;
  b.cfg = cfg;
  ConvSpec c1;
  c1.in_channels = cfg.in_channels;
  c1.out_channels = 2 * cfg.in_channels;
  c1.kernel = {3, 1, 1};
  c1.stride = {2, 1, 1};
  c1.padding = {1, 0, 0};
  c1.bias_enabled = false;
  b.conv1 = Conv3dLayer<T>::make(c1, rng);
  b.bn1 = BatchNormLayer<T>::make(c1.out_channels, true);
  ConvSpec c2 = c1;
  c2.in_channels = c1.out_channels;
  c2.out_channels = 2 * c1.out_channels;
  b.conv2 = Conv3dLayer<T>::make(c2, rng);
  b.bn2 = BatchNormLayer<T>::make(c2.out_channels, true);
  b.bottleneck = LinearLayer<T>::make(c2.out_channels, cfg.bottleneck, rng);
  b.head = LinearLayer<T>::make(cfg.bottleneck, cfg.n_classes, rng);
  return b;
}

template <typename T>
ad::VarPtr<T> TConvBackend<T>::forward(const ad::VarPtr<T>& feat, Mode mode) {
  set_mode(mode);
  const Shape& s = feat->shape();
  AVW_CHECK(s.size() == 3, "Backend I expects [T,N,C]");
  AVW_CHECK(s[2] == cfg.in_channels, "Backend I expects " << cfg.in_channels
                                                          << " channels, got " << s[2]);
  t_chain(s[0]);  // validates the reduction arithmetic
  auto x = ad::seq_to_conv5d(feat);  // [N,C,T,1,1]
  x = ad::relu(bn1.forward(conv1.forward(x)));
  x = ad::maxpool3d<T>(x, {3, 1, 1}, {2, 1, 1});
  x = ad::relu(bn2.forward(conv2.forward(x)));
  x = ad::maxpool3d<T>(x, {3, 1, 1}, {2, 1, 1});
  if (x->shape()[2] > 1)
    x = ad::maxpool3d<T>(x, {x->shape()[2], 1, 1}, {1, 1, 1});
  auto seq = ad::conv_to_time_major(x);  // [1,N,1024]
  auto flat = ad::reshape(seq, {seq->shape()[1], seq->shape()[2]});
  return head.forward(bottleneck.forward(flat));
}

template <typename T>
void TConvBackend<T>::set_mode(Mode m) {
  bn1.set_mode(m);
  bn2.set_mode(m);
}

template <typename T>
void TConvBackend<T>::collect(const std::string& prefix, ParamMap<T>& params,
                              BufMap<T>& bufs) {
  conv1.collect(prefix + ".conv1", params, bufs);
  bn1.collect(prefix + ".bn1", params, bufs);
  conv2.collect(prefix + ".conv2", params, bufs);
  bn2.collect(prefix + ".bn2", params, bufs);
  bottleneck.collect(prefix + ".bottleneck", params, bufs);
  head.collect(prefix + ".head", params, bufs);
}

template struct TConvBackend<float>;

}  // namespace avword
