// Synthetic wordbank synthesis.
//
// Every sample is deterministic in (config seed, split, word, index). Three
// independent substreams drive it:
//   - the audio/boundary stream, shared between homophone-pair members so
//     their within-boundary waveforms are sample-identical;
//   - the visual stream (word-specific trajectory jitter, pixel noise);
//   - the context stream (bigram context draws and context rendering jitter).
#include <array>
#include <cmath>
#include <cstdio>

#include "avword/dataset.hpp"

namespace avword {

namespace {

constexpr double kTau = 6.283185307179586;
constexpr std::size_t kSamplesPerFrame = kWaveSamples / kVideoFrames;  // 640

std::size_t split_ordinal(const std::string& split) {
  if (split == "train") return 0;
  if (split == "val") return 1;
  if (split == "test") return 2;
  AVW_FAIL("unknown split '" << split << "'");
}

// homophone members share one audio identity
std::size_t audio_identity(const WordbankConfig& cfg, std::size_t word) {
  for (const auto& p : cfg.homophone_pairs)
    if (word == p.first || word == p.second) return std::min(p.first, p.second);
  return word;
}

struct VisualMotif {
  double fx, fy, phase_x, phase_y, radius, sigma, amp;
  int direction;
};

// Low trajectory frequencies keep the shape well-sampled at 10-15 boundary
// frames (a 29-frame clip leaves no room for fast cycles); identity comes from
// the mixed-radix attribute tuple, not from fine detail.
VisualMotif visual_motif(const WordbankConfig& cfg, std::size_t word) {
  VisualMotif m;
  std::size_t code = word;
  m.fx = 1.0 + static_cast<double>(code % 2);
  code /= 2;
  m.fy = 1.0 + static_cast<double>(code % 2);
  code /= 2;
  m.direction = code % 2 == 0 ? 1 : -1;
  code /= 2;
  const double tier = static_cast<double>(code % 2);
  code /= 2;
  const double quadrant = static_cast<double>(code % 4);
  const double s = static_cast<double>(cfg.frame_size);
  m.radius = s * (0.30 - 0.12 * tier);
  m.sigma = s * 0.09;
  m.amp = 0.9;
  m.phase_x = quadrant * kTau / 4.0;
  m.phase_y = quadrant * kTau / 4.0 + (m.fx == m.fy ? kTau / 8.0 : 0.0);
  return m;
}

struct AudioMotif {
  std::array<double, 4> freqs;
};

AudioMotif audio_motif(const WordbankConfig& cfg, std::size_t word) {
  const std::size_t ident = audio_identity(cfg, word);
  // evenly spaced base pitches under a seeded permutation keep words apart
  Rng perm_rng(derive_seed(cfg.seed, "freq-perm"));
  std::vector<std::size_t> perm(cfg.vocab_size);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[perm_rng.next_below(i)]);
  const double base =
      500.0 + static_cast<double>(perm[ident]) * (2800.0 / static_cast<double>(cfg.vocab_size));
  Rng rng(derive_seed(cfg.seed, "word-audio", ident));
  AudioMotif m;
  for (auto& f : m.freqs) f = base + rng.uniform(0.0, 120.0);
  return m;
}

struct SampleJitter {
  double freq_scale = 1.0;
  double audio_amp = 1.0;
};

struct RenderJitter {
  double phase = 0.0;
  double radius_scale = 1.0;
  double amp_scale = 1.0;
  double drift_x = 0.0;  // whole-trajectory offset, pixels
  double drift_y = 0.0;
};

// paints one word's moving dot over frames [t_begin, t_end)
void render_trajectory(std::vector<float>& canvas, const WordbankConfig& cfg,
                       const VisualMotif& m, const RenderJitter& jit, std::size_t t_begin,
                       std::size_t t_end) {
  const std::size_t s = cfg.frame_size;
  const double half = static_cast<double>(s) / 2.0;
  const double span = static_cast<double>(t_end - t_begin);
  for (std::size_t t = t_begin; t < t_end; ++t) {
    const double u = (static_cast<double>(t - t_begin) + 0.5) / span;
    const double ang_x = kTau * m.fx * u * m.direction + m.phase_x + jit.phase;
    const double ang_y = kTau * m.fy * u * m.direction + m.phase_y + jit.phase;
    const double cx = half + jit.drift_x + m.radius * jit.radius_scale * std::cos(ang_x);
    const double cy = half + jit.drift_y + m.radius * jit.radius_scale * std::sin(ang_y);
    const double amp = m.amp * jit.amp_scale;
    const double sig2 = 2.0 * m.sigma * m.sigma;
    const int lo_x = std::max(0, static_cast<int>(cx - 4 * m.sigma));
    const int hi_x = std::min(static_cast<int>(s) - 1, static_cast<int>(cx + 4 * m.sigma));
    const int lo_y = std::max(0, static_cast<int>(cy - 4 * m.sigma));
    const int hi_y = std::min(static_cast<int>(s) - 1, static_cast<int>(cy + 4 * m.sigma));
    float* frame = canvas.data() + t * s * s;
    for (int y = lo_y; y <= hi_y; ++y)
      for (int x = lo_x; x <= hi_x; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        frame[y * static_cast<int>(s) + x] +=
            static_cast<float>(amp * std::exp(-(dx * dx + dy * dy) / sig2));
      }
  }
}

// paints one word's tone sequence over samples [a, b)
void render_tones(std::vector<double>& wave, const AudioMotif& m, double freq_scale,
                  double amp, std::size_t a, std::size_t b) {
  const std::size_t len = b - a;
  const std::size_t seg = len / m.freqs.size();
  const std::size_t ramp = 80;  // 5 ms edges
  for (std::size_t j = 0; j < m.freqs.size(); ++j) {
    const std::size_t s0 = a + j * seg;
    const std::size_t s1 = j + 1 == m.freqs.size() ? b : s0 + seg;
    const double f = m.freqs[j] * freq_scale;
    for (std::size_t i = s0; i < s1; ++i) {
      double env = 1.0;
      const std::size_t into = i - s0, left = s1 - i;
      if (into < ramp) env = 0.5 - 0.5 * std::cos(kTau / 2.0 * static_cast<double>(into) / ramp);
      if (left <= ramp) env = std::min(env, 0.5 - 0.5 * std::cos(kTau / 2.0 * static_cast<double>(left) / ramp));
      wave[i] += amp * env * std::sin(kTau * f * static_cast<double>(i - s0) / 16000.0);
    }
  }
}

}  // namespace

void WordbankConfig::validate() const {
  AVW_CHECK(vocab_size >= 2, "wordbank vocab_size must be >= 2");
  AVW_CHECK(frame_size >= 16 && frame_size % 16 == 0,
            "frame_size must be a multiple of 16 (visual frontend contract)");
  AVW_CHECK(width_min >= 1 && width_min <= width_max && width_max <= 21,
            "boundary widths must satisfy 1 <= min <= max <= 21 (context frames on both"
            " sides)");
  AVW_CHECK(predictable_count * 2 <= vocab_size,
            "predictable_count too large: each predictable word needs a distinct"
            " context word outside the predictable set");
  for (const auto& p : homophone_pairs) {
    AVW_CHECK(p.first < vocab_size && p.second < vocab_size && p.first != p.second,
              "bad homophone pair (" << p.first << "," << p.second << ")");
    AVW_CHECK(p.first >= predictable_count && p.second >= predictable_count,
              "homophone pair (" << p.first << "," << p.second
                                 << ") overlaps the context-predictable subset; the pair"
                                    " would be separable through its deterministic context");
  }
  AVW_CHECK(context_visual_amp >= 0.0 && context_visual_amp <= 1.0,
            "context_visual_amp must lie in [0,1]");
  AVW_CHECK(train_per_word >= 1 && test_per_word >= 1, "per-split sample counts must be >= 1");
}

Sample synthesize_sample(const WordbankConfig& cfg, const Vocabulary& vocab,
                         const std::string& split, std::size_t word, std::size_t index) {
  cfg.validate();
  AVW_CHECK(word < cfg.vocab_size, "word index out of range");
  const std::size_t split_id = split_ordinal(split);
  const std::size_t audio_id = audio_identity(cfg, word);

  Rng rng_a(derive_seed(cfg.seed, "sample-audio", audio_id, split_id, index));
  Rng rng_v(derive_seed(cfg.seed, "sample-visual", word, split_id, index));
  Rng rng_c(derive_seed(cfg.seed, "sample-ctx", word, split_id, index));

  // boundary interval (shared within a homophone pair through rng_a)
  const std::size_t width = cfg.width_min + rng_a.next_below(cfg.width_max - cfg.width_min + 1);
  const std::size_t start = 4 + rng_a.next_below(kVideoFrames - width - 8 + 1);
  const std::size_t end = start + width;

  // bigram context: deterministic left context for the predictable subset
  std::size_t left_ctx;
  if (word < cfg.predictable_count) {
    left_ctx = cfg.predictable_count + word;
  } else {
    left_ctx = rng_c.next_below(cfg.vocab_size - 1);
    if (left_ctx >= word) ++left_ctx;  // exclude the target itself
  }
  std::size_t right_ctx = rng_c.next_below(cfg.vocab_size - 1);
  if (right_ctx >= word) ++right_ctx;

  const double drift = 0.05 * static_cast<double>(cfg.frame_size);
  SampleJitter jit;
  jit.freq_scale = 1.0 + rng_a.uniform(-0.004, 0.004);
  jit.audio_amp = 0.30 * (1.0 + rng_a.uniform(-0.08, 0.08));

  RenderJitter vjit;
  vjit.phase = rng_v.uniform(-0.15, 0.15);
  vjit.radius_scale = 1.0 + rng_v.uniform(-0.08, 0.08);
  vjit.amp_scale = 1.0 + rng_v.uniform(-0.10, 0.10);
  vjit.drift_x = rng_v.uniform(-drift, drift);
  vjit.drift_y = rng_v.uniform(-drift, drift);

  // ---- video ----
  const std::size_t s = cfg.frame_size;
  std::vector<float> canvas(kVideoFrames * s * s, 0.0f);
  render_trajectory(canvas, cfg, visual_motif(cfg, word), vjit, start, end);
  RenderJitter cjit;
  cjit.phase = rng_c.uniform(-0.15, 0.15);
  cjit.radius_scale = 1.0 + rng_c.uniform(-0.08, 0.08);
  cjit.amp_scale = cfg.context_visual_amp * (1.0 + rng_c.uniform(-0.10, 0.10));
  cjit.drift_x = rng_c.uniform(-drift, drift);
  cjit.drift_y = rng_c.uniform(-drift, drift);
  render_trajectory(canvas, cfg, visual_motif(cfg, left_ctx), cjit, 0, start);
  render_trajectory(canvas, cfg, visual_motif(cfg, right_ctx), cjit, end, kVideoFrames);

  Sample out;
  out.frames = Tensor<std::uint8_t>({kVideoFrames, 1, s, s});
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    const double noise = rng_v.uniform(0.0, 0.06);
    double v = canvas[i] + noise;
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    out.frames[i] = static_cast<std::uint8_t>(std::lrint(v * 255.0));
  }

  // ---- audio ----
  out.wave.sample_rate = 16000;
  out.wave.samples.assign(kWaveSamples, 0.0);
  render_tones(out.wave.samples, audio_motif(cfg, word), jit.freq_scale, jit.audio_amp,
               start * kSamplesPerFrame, end * kSamplesPerFrame);
  const double ctx_fscale = 1.0 + rng_c.uniform(-0.004, 0.004);
  const double ctx_aamp = 0.30 * (1.0 + rng_c.uniform(-0.08, 0.08));
  render_tones(out.wave.samples, audio_motif(cfg, left_ctx), ctx_fscale, ctx_aamp, 0,
               start * kSamplesPerFrame);
  render_tones(out.wave.samples, audio_motif(cfg, right_ctx), ctx_fscale, ctx_aamp,
               end * kSamplesPerFrame, kWaveSamples);
  quantize_to_pcm16(out.wave);

  out.bounds = {start, end};
  out.meta.label = word;
  out.meta.word = vocab.words[word];
  out.meta.boundary_start = start;
  out.meta.boundary_end = end;
  out.meta.split = split;
  char idbuf[32];
  std::snprintf(idbuf, sizeof idbuf, "%03zu", index);
  out.meta.id = vocab.words[word] + "_" + split + "_" + idbuf;
  return out;
}

}  // namespace avword
