// Synthetic audiovisual wordbank: generation, on-disk layout, loading, and
// the fixed noisy test-set manifests.
//
// Layout: root/{train,val,test}/<word>/<id>/{frames.tnsr, audio.wav,
// meta.json}, manifest.json at the root with a config echo and content hash.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avword/backend.hpp"
#include "avword/noise.hpp"
#include "avword/tensor.hpp"

namespace avword {

inline constexpr std::size_t kVideoFrames = 29;       // 1.16 s at 25 fps
inline constexpr std::size_t kWaveSamples = 18560;    // 1.16 s at 16 kHz
inline constexpr double kVideoFps = 25.0;

struct HomophonePair {
  std::size_t first = 0;
  std::size_t second = 0;
};

struct WordbankConfig {
  std::size_t vocab_size = 20;
  std::size_t train_per_word = 5;
  std::size_t val_per_word = 2;
  std::size_t test_per_word = 10;
  std::size_t frame_size = 32;  // H = W
  // words [0, predictable_count) always carry a fixed left-context word
  // (word k is preceded by word predictable_count + k)
  std::size_t predictable_count = 5;
  std::vector<HomophonePair> homophone_pairs = {{10, 11}, {12, 13}};
  std::size_t width_min = 10;   // boundary width range, inclusive
  std::size_t width_max = 15;
  // render brightness of context-word trajectories relative to the target's
  // (1 = fully confusable context; audio context is unaffected)
  double context_visual_amp = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SampleMeta {
  std::size_t label = 0;
  std::string word;
  std::size_t boundary_start = 0;
  std::size_t boundary_end = 0;
  std::string split;
  std::string id;
};

struct Sample {
  Tensor<std::uint8_t> frames;  // [T,1,S,S]
  Waveform wave;                // PCM16-grid values
  BoundarySpec bounds;
  SampleMeta meta;
};

void store_sample(const Sample& sample, const std::string& dir);
Sample load_sample(const std::string& dir);

// Deterministic synthesis of one sample (exposed for tests).
Sample synthesize_sample(const WordbankConfig& cfg, const Vocabulary& vocab,
                         const std::string& split, std::size_t word, std::size_t index);

struct DatasetManifest {
  WordbankConfig config;
  std::vector<std::string> words;
  std::uint64_t content_hash = 0;
};

// Writes the full dataset plus manifest.json; returns the manifest.
DatasetManifest generate_wordbank(const WordbankConfig& cfg, const std::string& root);

DatasetManifest read_dataset_manifest(const std::string& root);

// One dataset entry held in memory (samples are small at desk scale).
struct LoadedDataset {
  std::string root;
  Vocabulary vocab;
  WordbankConfig config;
  std::map<std::string, std::vector<Sample>> splits;  // train/val/test

  const std::vector<Sample>& split(const std::string& name) const;
};

LoadedDataset load_dataset(const std::string& root);

// Fixed noisy test sets: one manifest per SNR in {-10..20 step 5} plus clean,
// no mixtures, categories cycling over all six, deterministic from the seed.
struct NoiseAssignment {
  std::string sample_id;
  std::optional<NoiseSpec> noise;  // nullopt on the clean manifest
};

struct TestNoiseSet {
  std::string name;  // "snr_-10" ... "snr_20", "clean"
  std::optional<int> snr_db;
  std::vector<NoiseAssignment> entries;  // aligned with the test split order
};

std::vector<TestNoiseSet> build_test_noise_sets(const NoiseBank& bank,
                                                const LoadedDataset& dataset,
                                                std::uint64_t seed);

void write_test_noise_sets(const std::vector<TestNoiseSet>& sets, const std::string& dir);
std::vector<TestNoiseSet> read_test_noise_sets(const std::string& dir);

// FNV-1a over the dataset files in sorted path order.
std::uint64_t dataset_content_hash(const std::string& root);

}  // namespace avword
