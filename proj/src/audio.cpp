#include "avword/audio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace avword {

namespace {

std::uint32_t rd_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t rd_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  AVW_CHECK(in.good(), "cannot open WAV file " << path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  AVW_CHECK(bytes.size() >= 44, "WAV file " << path << " too short for a RIFF header");
  AVW_CHECK(std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
                std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
            "not a RIFF/WAVE file: " << path);

  std::size_t off = 12;
  bool got_fmt = false;
  std::size_t data_off = 0, data_len = 0;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (off + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + off);
    const std::uint32_t len = rd_u32(bytes.data() + off + 4);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      AVW_CHECK(len >= 16 && off + 8 + len <= bytes.size(), "truncated fmt chunk in " << path);
      format = rd_u16(bytes.data() + off + 8);
      channels = rd_u16(bytes.data() + off + 10);
      rate = rd_u32(bytes.data() + off + 12);
      bits = rd_u16(bytes.data() + off + 22);
      got_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = off + 8;
      data_len = len;
    }
    off += 8 + len + (len & 1);  // chunks are word-aligned
  }
  AVW_CHECK(got_fmt && data_off != 0, "WAV file " << path << " missing fmt/data chunks");
  AVW_CHECK(format == 1, "WAV " << path << ": only PCM (format 1) is accepted, got format "
                                << format);
  AVW_CHECK(bits == 16, "WAV " << path << ": only 16-bit samples are accepted, got " << bits);
  AVW_CHECK(channels == 1, "WAV " << path << ": only mono is accepted, got " << channels
                                  << " channels");
  AVW_CHECK(rate == 16000, "WAV " << path << ": only 16 kHz is accepted, got " << rate);
  AVW_CHECK(data_off + data_len <= bytes.size(), "WAV " << path << ": truncated data chunk");

  Waveform w;
  w.sample_rate = rate;
  const std::size_t n = data_len / 2;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int16_t v = static_cast<std::int16_t>(
        bytes[data_off + 2 * i] | (bytes[data_off + 2 * i + 1] << 8));
    w.samples[i] = static_cast<double>(v) / 32767.0;
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& wave) {
  AVW_CHECK(wave.sample_rate == 16000, "write_wav expects 16 kHz audio");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  AVW_CHECK(out.good(), "cannot open " << path << " for writing");
  const std::uint32_t data_len = static_cast<std::uint32_t>(wave.samples.size() * 2);
  auto wr_u32 = [&](std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xff));
  };
  auto wr_u16 = [&](std::uint16_t v) {
    out.put(static_cast<char>(v & 0xff));
    out.put(static_cast<char>((v >> 8) & 0xff));
  };
  out.write("RIFF", 4);
  wr_u32(36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  wr_u32(16);
  wr_u16(1);   // PCM
  wr_u16(1);   // mono
  wr_u32(16000);
  wr_u32(16000 * 2);  // byte rate
  wr_u16(2);   // block align
  wr_u16(16);  // bits
  out.write("data", 4);
  wr_u32(data_len);
  for (double s : wave.samples) {
    double c = s < -1.0 ? -1.0 : (s > 1.0 ? 1.0 : s);
    const std::int16_t v = static_cast<std::int16_t>(std::lrint(c * 32767.0));
    wr_u16(static_cast<std::uint16_t>(v));
  }
  AVW_CHECK(out.good(), "short write to " << path);
}

void quantize_to_pcm16(Waveform& wave) {
  for (double& s : wave.samples) {
    double c = s < -1.0 ? -1.0 : (s > 1.0 ? 1.0 : s);
    s = static_cast<double>(static_cast<std::int16_t>(std::lrint(c * 32767.0))) / 32767.0;
  }
}

SpectralSeq stft_log_spectra(const Waveform& wave) {
  AVW_CHECK(wave.sample_rate == 16000,
            "stft_log_spectra expects 16 kHz input (20 ms window = 320 samples)");
  const std::size_t n = wave.samples.size();
  AVW_CHECK(n >= kStftWindow, "waveform shorter than one 20 ms analysis window ("
                                  << n << " < " << kStftWindow << " samples)");
  const std::size_t frames = n / kStftHop;

  // lazily built Hamming window and DFT tables
  static const std::vector<double> hamming = [] {
    std::vector<double> w(kStftWindow);
    for (std::size_t i = 0; i < kStftWindow; ++i)
      w[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                    static_cast<double>(kStftWindow - 1));
    return w;
  }();
  static const std::vector<double> cos_tab = [] {
    std::vector<double> t(kSpectralBins * kStftWindow);
    for (std::size_t k = 0; k < kSpectralBins; ++k)
      for (std::size_t i = 0; i < kStftWindow; ++i)
        t[k * kStftWindow + i] = std::cos(2.0 * M_PI * static_cast<double>(k * i) /
                                          static_cast<double>(kStftWindow));
    return t;
  }();
  static const std::vector<double> sin_tab = [] {
    std::vector<double> t(kSpectralBins * kStftWindow);
    for (std::size_t k = 0; k < kSpectralBins; ++k)
      for (std::size_t i = 0; i < kStftWindow; ++i)
        t[k * kStftWindow + i] = std::sin(2.0 * M_PI * static_cast<double>(k * i) /
                                          static_cast<double>(kStftWindow));
    return t;
  }();

  SpectralSeq out;
  out.frames = Tensor<float>({frames, kSpectralBins});
  std::vector<double> seg(kStftWindow);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t start = f * kStftHop;
    for (std::size_t i = 0; i < kStftWindow; ++i) {
      const std::size_t idx = start + i;
      seg[i] = idx < n ? wave.samples[idx] * hamming[i] : 0.0;  // zero-padded tail
    }
    for (std::size_t k = 0; k < kSpectralBins; ++k) {
      double re = 0.0, im = 0.0;
      const double* ct = cos_tab.data() + k * kStftWindow;
      const double* st = sin_tab.data() + k * kStftWindow;
      for (std::size_t i = 0; i < kStftWindow; ++i) {
        re += seg[i] * ct[i];
        im -= seg[i] * st[i];
      }
      out.frames[f * kSpectralBins + k] =
          static_cast<float>(std::log(std::sqrt(re * re + im * im) + 1e-6));
    }
  }
  return out;
}

SpectralSeq utterance_scalar_normalize(const SpectralSeq& seq) {
  AVW_CHECK(!seq.normalized, "spectral sequence is already normalized");
  const std::size_t n = seq.frames.numel();
  AVW_CHECK(n > 0, "empty spectral sequence");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += seq.frames[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = seq.frames[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  AVW_CHECK(var > 1e-30, "degenerate audio: spectral sequence has zero variance");
  const double inv = 1.0 / (std::sqrt(var) + 1e-8);

  SpectralSeq out;
  out.frames = Tensor<float>(seq.frames.shape());
  for (std::size_t i = 0; i < n; ++i)
    out.frames[i] = static_cast<float>((seq.frames[i] - mean) * inv);
  out.frame_rate = seq.frame_rate;
  out.normalized = true;
  return out;
}

std::pair<std::size_t, std::size_t> video_to_audio_interval(std::size_t start_frame,
                                                            std::size_t end_frame) {
  return {4 * start_frame, 4 * end_frame};
}

template <typename T>
AudioFrontend<T> AudioFrontend<T>::make(const AudioFrontendConfig& cfg, Rng& rng) {
  AudioFrontend<T> fe;
  fe.cfg = cfg;
  for (Direction dir : {Direction::forward, Direction::backward}) {
    DirectionalStack<T> stack;
    stack.direction = dir;
    std::size_t feed = cfg.input_dim;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      LstmLayerSpec<T> layer;
      layer.pyramidal = cfg.subsample;
      std::size_t cell_in = feed;
      if (cfg.subsample == PyramidalMode::pair_concat) cell_in = 2 * feed;
      if (cfg.batch_norm_inputs)
        layer.input_bn = BatchNormLayer<T>::make(cell_in, false);
      layer.input_dropout_p = cfg.input_dropout_p;
      layer.cell = LstmCell<T>::make(cell_in, cfg.hidden, rng);
      stack.layers.push_back(std::move(layer));
      feed = cfg.hidden;
    }
    (dir == Direction::forward ? fe.fwd : fe.bwd) = std::move(stack);
  }
  return fe;
}

template <typename T>
std::pair<ad::VarPtr<T>, ad::VarPtr<T>> AudioFrontend<T>::forward(const ad::VarPtr<T>& seq,
                                                                  Rng& rng, Mode mode) {
  AVW_CHECK(seq->shape().size() == 3, "audio frontend expects [T,N,D]");
  if (cfg.subsample != PyramidalMode::none) {
    const std::size_t needed = std::size_t(1) << cfg.layers;
    AVW_CHECK(seq->shape()[0] >= needed, "audio sequence too short: "
                                             << seq->shape()[0] << " frames < " << needed);
  }
  auto f = run_direction(fwd, seq, rng, mode);
  auto b = run_direction(bwd, seq, rng, mode);
  return {f, b};
}

template struct AudioFrontend<float>;
template struct AudioFrontend<double>;

}  // namespace avword
