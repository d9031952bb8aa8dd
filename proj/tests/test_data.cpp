#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "avword/dataset.hpp"

using namespace avword;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const char* name) {
  auto p = fs::temp_directory_path() / "avword_data_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

WordbankConfig small_config() {
  WordbankConfig cfg;
  cfg.vocab_size = 12;
  cfg.train_per_word = 1;
  cfg.val_per_word = 1;
  cfg.test_per_word = 1;
  cfg.frame_size = 16;
  cfg.predictable_count = 3;
  cfg.homophone_pairs = {{6, 7}};
  cfg.seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("sample synthesis invariants") {
  auto cfg = small_config();
  auto vocab = Vocabulary::make_default(cfg.vocab_size);
  auto s = synthesize_sample(cfg, vocab, "train", 4, 0);
  CHECK(s.frames.shape() == Shape{29, 1, 16, 16});
  CHECK(s.wave.samples.size() == 18560);
  CHECK(s.wave.duration_s() == doctest::Approx(1.16));
  CHECK(s.bounds.start_frame >= 4);
  CHECK(s.bounds.end_frame <= 25);
  CHECK(s.meta.word == vocab.words[4]);

  // 116 spectral frames after extraction
  auto spec = stft_log_spectra(s.wave);
  CHECK(spec.frames.shape() == Shape{116, 161});

  // deterministic regeneration
  auto again = synthesize_sample(cfg, vocab, "train", 4, 0);
  CHECK(again.frames.vec() == s.frames.vec());
  CHECK(again.wave.samples == s.wave.samples);

  // distinct samples differ
  auto other = synthesize_sample(cfg, vocab, "train", 4, 1);
  CHECK(other.wave.samples != s.wave.samples);
}

TEST_CASE("homophone pairs share the within-boundary waveform exactly") {
  auto cfg = small_config();
  auto vocab = Vocabulary::make_default(cfg.vocab_size);
  auto a = synthesize_sample(cfg, vocab, "test", 6, 0);
  auto b = synthesize_sample(cfg, vocab, "test", 7, 0);
  REQUIRE(a.bounds.start_frame == b.bounds.start_frame);  // pair shares the boundary draw
  REQUIRE(a.bounds.end_frame == b.bounds.end_frame);
  const std::size_t s0 = a.bounds.start_frame * 640, s1 = a.bounds.end_frame * 640;
  for (std::size_t i = s0; i < s1; ++i) CHECK(a.wave.samples[i] == b.wave.samples[i]);
  // visual motifs differ
  CHECK(a.frames.vec() != b.frames.vec());

  WordbankConfig bad = cfg;
  bad.homophone_pairs = {{1, 2}};  // overlaps the predictable subset
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("store/load round trip is bit exact") {
  auto cfg = small_config();
  auto vocab = Vocabulary::make_default(cfg.vocab_size);
  auto s = synthesize_sample(cfg, vocab, "val", 2, 0);
  auto dir = tmp_dir("roundtrip");
  store_sample(s, dir.string());
  auto r = load_sample(dir.string());
  CHECK(r.frames.vec() == s.frames.vec());
  CHECK(r.wave.samples == s.wave.samples);
  CHECK(r.meta.label == s.meta.label);
  CHECK(r.meta.word == s.meta.word);
  CHECK(r.meta.split == s.meta.split);
  CHECK(r.meta.id == s.meta.id);
  CHECK(r.bounds.start_frame == s.bounds.start_frame);
  CHECK(r.bounds.end_frame == s.bounds.end_frame);
}

TEST_CASE("wordbank generation is deterministic and loadable") {
  auto cfg = small_config();
  auto root1 = tmp_dir("gen1");
  auto root2 = tmp_dir("gen2");
  auto m1 = generate_wordbank(cfg, root1.string());
  auto m2 = generate_wordbank(cfg, root2.string());
  CHECK(m1.content_hash == m2.content_hash);

  auto ds = load_dataset(root1.string());
  CHECK(ds.vocab.size() == 12);
  CHECK(ds.split("train").size() == 12);
  CHECK(ds.split("test").size() == 12);

  WordbankConfig changed = cfg;
  changed.seed = 100;
  auto root3 = tmp_dir("gen3");
  CHECK(generate_wordbank(changed, root3.string()).content_hash != m1.content_hash);

  WordbankConfig tiny = cfg;
  tiny.vocab_size = 1;
  CHECK_THROWS_AS(generate_wordbank(tiny, tmp_dir("gen4").string()), Error);
}

TEST_CASE("mix_at_snr closed forms") {
  Rng rng(5);
  Waveform sig, noise;
  sig.samples.resize(8000);
  noise.samples.resize(8000);
  for (std::size_t i = 0; i < 8000; ++i) {
    sig.samples[i] = rng.normal() * 0.2;
    noise.samples[i] = rng.normal() * 0.2;
  }

  // equal powers at 0 dB: gain 1 (mixture = sig + noise exactly)
  Waveform n2 = noise;
  {
    double ps = 0, pn = 0;
    for (std::size_t i = 0; i < 8000; ++i) {
      ps += sig.samples[i] * sig.samples[i];
      pn += n2.samples[i] * n2.samples[i];
    }
    const double g = std::sqrt(ps / pn);
    for (auto& v : n2.samples) v *= g;  // now exactly equal power
  }
  auto mixed = mix_at_snr(sig, n2, 0.0);
  for (std::size_t i = 0; i < 200; ++i)
    CHECK(mixed.samples[i] ==
          doctest::Approx(sig.samples[i] + n2.samples[i]).epsilon(1e-9));

  // clean sentinel: bitwise passthrough
  auto clean = mix_at_snr(sig, noise, std::numeric_limits<double>::infinity());
  CHECK(clean.samples == sig.samples);

  // P_s = 1, P_n = 4, snr 10 dB -> g = sqrt(1/40)
  Waveform s1, n4;
  s1.samples.assign(1000, 1.0);
  n4.samples.assign(1000, 2.0);
  auto m = mix_at_snr(s1, n4, 10.0);
  const double g = (m.samples[0] - 1.0) / 2.0;
  CHECK(g == doctest::Approx(std::sqrt(1.0 / 40.0)).epsilon(1e-9));

  Waveform zero;
  zero.samples.assign(1000, 0.0);
  CHECK_THROWS_AS(mix_at_snr(s1, zero, 10.0), Error);

  // N_n = 0 draw is a bitwise passthrough
  NoiseBankConfig bc;
  bc.seed = 9;
  NoiseBank bank(bc);
  NoiseSpec none;
  auto same = apply_noise(bank, none, s1);
  CHECK(same.samples == s1.samples);
}

TEST_CASE("measured SNR is exact over 1000 random cases") {
  NoiseBankConfig bcfg;
  bcfg.seed = 17;
  NoiseBank bank(bcfg);
  Rng rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Waveform sig;
    sig.samples.resize(4000);
    for (auto& v : sig.samples) v = rng.normal() * rng.uniform(0.05, 0.5);
    NoiseSpec spec;
    spec.sources = {{rng.next_below(6), rng.next_below(bank.files_per_category()),
                     rng.next_below(bank.file_length() - 4000)}};
    spec.snr_db = rng.uniform(-15.0, 25.0);
    Waveform noise = realize_noise(bank, spec, 4000);
    auto mixed = mix_at_snr(sig, noise, spec.snr_db);
    Waveform scaled;
    scaled.samples.resize(4000);
    for (std::size_t i = 0; i < 4000; ++i)
      scaled.samples[i] = mixed.samples[i] - sig.samples[i];
    worst = std::max(worst, std::fabs(measured_snr_db(sig, scaled) - spec.snr_db));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("training noise draw distributions") {
  NoiseBankConfig bcfg;
  bcfg.seed = 3;
  NoiseBank bank(bcfg);
  Rng rng(1234);
  const std::size_t draws = 100000;
  std::array<std::size_t, 4> counts{};
  std::vector<double> snrs;
  snrs.reserve(draws);
  bool train_cats_only = true;
  for (std::size_t i = 0; i < draws; ++i) {
    auto spec = draw_train_noise_spec(bank, 18560, rng);
    ++counts[spec.mixture_count()];
    snrs.push_back(spec.snr_db);
    for (const auto& src : spec.sources)
      if (src.category >= kTrainNoiseCategories) train_cats_only = false;
  }
  CHECK(train_cats_only);
  for (std::size_t n = 0; n < 4; ++n) {
    const double f = static_cast<double>(counts[n]) / draws;
    CHECK(f >= 0.2475);
    CHECK(f <= 0.2525);
  }
  // Kolmogorov-Smirnov distance against uniform [-12, 22]
  std::sort(snrs.begin(), snrs.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < snrs.size(); ++i) {
    const double cdf = (snrs[i] + 12.0) / 34.0;
    const double emp_hi = static_cast<double>(i + 1) / snrs.size();
    const double emp_lo = static_cast<double>(i) / snrs.size();
    ks = std::max({ks, std::fabs(cdf - emp_hi), std::fabs(cdf - emp_lo)});
  }
  CHECK(ks < 0.01);
}

TEST_CASE("fixed test noise sets") {
  auto cfg = small_config();
  auto root = tmp_dir("noise_sets");
  generate_wordbank(cfg, root.string());
  auto ds = load_dataset(root.string());
  NoiseBankConfig bcfg;
  bcfg.seed = 8;
  NoiseBank bank(bcfg);

  auto sets = build_test_noise_sets(bank, ds, 77);
  REQUIRE(sets.size() == 8);  // 7 SNR levels plus clean
  CHECK(sets.back().name == "clean");
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(sets[i].snr_db == kTestSnrLevels[i]);
    for (const auto& e : sets[i].entries) {
      REQUIRE(e.noise.has_value());
      CHECK(e.noise->sources.size() == 1);  // no mixtures in the fixed sets
    }
  }
  for (const auto& e : sets.back().entries) CHECK(!e.noise.has_value());

  // testing draws from all six categories (training touches only the first four)
  std::set<std::size_t> cats;
  for (std::size_t si = 0; si < 7; ++si)
    for (const auto& e : sets[si].entries) cats.insert(e.noise->sources[0].category);
  CHECK(cats.size() == 6);

  // deterministic regeneration
  auto again = build_test_noise_sets(bank, ds, 77);
  for (std::size_t si = 0; si < 8; ++si)
    for (std::size_t i = 0; i < sets[si].entries.size(); ++i) {
      CHECK(sets[si].entries[i].sample_id == again[si].entries[i].sample_id);
      if (sets[si].entries[i].noise) {
        CHECK(sets[si].entries[i].noise->sources[0].offset ==
              again[si].entries[i].noise->sources[0].offset);
      }
    }

  // manifest round trip
  auto dir = (root / "noise_tests").string();
  write_test_noise_sets(sets, dir);
  auto read = read_test_noise_sets(dir);
  REQUIRE(read.size() == 8);
  for (std::size_t si = 0; si < 8; ++si)
    CHECK(read[si].entries.size() == sets[si].entries.size());

  // measured SNR of a few realized mixtures matches the manifest label
  const auto& test = ds.split("test");
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& entry = sets[2].entries[i];  // 0 dB set
    Waveform noise = realize_noise(bank, *entry.noise, test[i].wave.samples.size());
    auto mixed = mix_at_snr(test[i].wave, noise, entry.noise->snr_db);
    Waveform scaled;
    scaled.samples.resize(mixed.samples.size());
    for (std::size_t k = 0; k < mixed.samples.size(); ++k)
      scaled.samples[k] = mixed.samples[k] - test[i].wave.samples[k];
    CHECK(std::fabs(measured_snr_db(test[i].wave, scaled) - entry.noise->snr_db) < 1e-6);
  }
}

TEST_CASE("noise bank structure") {
  NoiseBankConfig cfg;
  cfg.seed = 5;
  cfg.files_per_category = 3;
  NoiseBank bank(cfg);
  CHECK(bank.files_per_category() == 3);
  CHECK(bank.file_length() == 80000);
  // categories produce different audio
  CHECK(bank.file(0, 0) != bank.file(1, 0));
  CHECK(bank.file(0, 0) != bank.file(0, 1));
}
