// Synthetic noise bank (DEMAND-style category structure) and exact-SNR
// waveform mixing. The bank is colored noise with category-distinct spectra;
// "public" is simulated babble built from summed tone voices. A directory of
// real WAV files with the same layout can be swapped in through load_wav_bank.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "avword/audio.hpp"
#include "avword/rng.hpp"

namespace avword {

inline constexpr std::array<const char*, 6> kNoiseCategories = {
    "domestic", "nature", "office", "public", "street", "transportation"};
inline constexpr std::size_t kTrainNoiseCategories = 4;  // first 4 train, all 6 test

struct NoiseBankConfig {
  std::uint64_t seed = 0;
  std::size_t files_per_category = 3;
  double file_seconds = 5.0;
};

class NoiseBank {
 public:
  explicit NoiseBank(const NoiseBankConfig& cfg);

  // Loads 16 kHz mono PCM WAVs from dir/<category>/*.wav instead of synthesizing.
  static NoiseBank load_wav_bank(const std::string& dir);

  std::size_t files_per_category() const { return files_[0].size(); }
  std::size_t file_length() const { return files_[0][0].size(); }
  const std::vector<double>& file(std::size_t category, std::size_t index) const;

 private:
  NoiseBank() = default;
  std::array<std::vector<std::vector<double>>, 6> files_;
};

// One noise draw: N_n source segments (summed raw) scaled as one signal.
struct NoiseSource {
  std::size_t category = 0;
  std::size_t file_index = 0;
  std::size_t offset = 0;
};

struct NoiseSpec {
  std::vector<NoiseSource> sources;  // empty <=> clean (N_n = 0)
  double snr_db = 0.0;               // ignored when clean

  std::size_t mixture_count() const { return sources.size(); }
  bool clean() const { return sources.empty(); }
};

// Training draw: N_n uniform on {0..3}, sources uniform over the first 4
// categories with uniform offsets, SNR uniform on [-12, 22] dB.
NoiseSpec draw_train_noise_spec(const NoiseBank& bank, std::size_t need_samples, Rng& rng);

// Sums the spec's source segments into one noise waveform (unscaled).
Waveform realize_noise(const NoiseBank& bank, const NoiseSpec& spec,
                       std::size_t need_samples);

// Scales noise so that 10*log10(P_signal / P_scaled_noise) == snr_db exactly,
// then adds. A +infinity snr is the clean sentinel and returns the signal
// bit-for-bit.
Waveform mix_at_snr(const Waveform& signal, const Waveform& noise, double snr_db);

double measured_snr_db(const Waveform& signal, const Waveform& scaled_noise);

// Applies a full noise spec to a clean waveform (identity when spec.clean()).
Waveform apply_noise(const NoiseBank& bank, const NoiseSpec& spec, const Waveform& clean);

inline constexpr std::array<int, 7> kTestSnrLevels = {-10, -5, 0, 5, 10, 15, 20};

}  // namespace avword
