// Audio path: WAV loading, 161-bin log-spectral features at 100 fps, scalar
// utterance normalization, and the 2-layer pyramidal bidirectional frontend
// that brings 100 fps down to the 25 fps video rate.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "avword/lstm.hpp"
#include "avword/tensor.hpp"

namespace avword {

struct Waveform {
  std::vector<double> samples;  // mono, in [-1, 1]
  std::size_t sample_rate = 16000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

// RIFF/PCM only: 16-bit little-endian, mono, 16 kHz. Everything else is
// rejected with a descriptive error.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& wave);

// Snaps samples onto the 16-bit PCM grid, so in-memory values equal the
// store -> load round trip exactly.
void quantize_to_pcm16(Waveform& wave);

inline constexpr std::size_t kSpectralBins = 161;   // 320-point transform, one-sided
inline constexpr std::size_t kStftWindow = 320;     // 20 ms at 16 kHz
inline constexpr std::size_t kStftHop = 160;        // 10 ms
inline constexpr double kAudioFps = 100.0;

struct SpectralSeq {
  Tensor<float> frames;  // [T_A x 161]
  double frame_rate = kAudioFps;
  bool normalized = false;
};

// Hamming-windowed magnitude spectra, log(mag + 1e-6), zero-padded tail.
SpectralSeq stft_log_spectra(const Waveform& wave);

// Single scalar mean/variance over all T_A x 161 cells (not per bin).
SpectralSeq utterance_scalar_normalize(const SpectralSeq& seq);

struct AudioFrontendConfig {
  std::size_t input_dim = kSpectralBins;  // 162 when boundary indicators enter here
  std::size_t hidden = 256;
  std::size_t layers = 2;
  PyramidalMode subsample = PyramidalMode::pair_concat;
  double input_dropout_p = 0.30;
  bool batch_norm_inputs = true;
};

template <typename T>
struct AudioFrontend {
  AudioFrontendConfig cfg;
  DirectionalStack<T> fwd;
  DirectionalStack<T> bwd;

  static AudioFrontend make(const AudioFrontendConfig& cfg, Rng& rng);

  // [T_A,N,D] -> per-direction [T_A/4,N,hidden]
  std::pair<ad::VarPtr<T>, ad::VarPtr<T>> forward(const ad::VarPtr<T>& seq, Rng& rng,
                                                  Mode mode);

  void set_mode(Mode m) {
    fwd.set_mode(m);
    bwd.set_mode(m);
  }
  void collect(const std::string& prefix, ParamMap<T>& params, BufMap<T>& bufs) {
    fwd.collect(prefix + ".fwd", params, bufs);
    bwd.collect(prefix + ".bwd", params, bufs);
  }
};

// Upsamples a video-frame boundary interval to the audio rate (x4: each video
// frame covers four audio frames).
std::pair<std::size_t, std::size_t> video_to_audio_interval(std::size_t start_frame,
                                                            std::size_t end_frame);

}  // namespace avword
