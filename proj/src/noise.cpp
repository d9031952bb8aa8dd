#include "avword/noise.hpp"

#include <cmath>
#include <filesystem>

namespace avword {

namespace {

constexpr double kTau = 6.283185307179586;

void one_pole_lowpass(std::vector<double>& x, double alpha) {
  double y = 0.0;
  for (double& v : x) {
    y = alpha * y + (1.0 - alpha) * v;
    v = y;
  }
}

void one_pole_highpass(std::vector<double>& x, double alpha) {
  double prev_in = 0.0, y = 0.0;
  for (double& v : x) {
    y = alpha * (y + v - prev_in);
    prev_in = v;
    v = y;
  }
}

void amplitude_modulate(std::vector<double>& x, double rate_hz, double depth, double phase) {
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] *= 1.0 + depth * std::sin(kTau * rate_hz * static_cast<double>(i) / 16000.0 + phase);
}

void normalize_rms(std::vector<double>& x, double target) {
  double p = 0.0;
  for (double v : x) p += v * v;
  p = std::sqrt(p / static_cast<double>(x.size()));
  if (p < 1e-12) return;
  const double g = target / p;
  for (double& v : x) v *= g;
}

// simulated babble: summed tone "voices" hopping between speech-band pitches
std::vector<double> synth_babble(std::size_t n, Rng& rng) {
  std::vector<double> out(n, 0.0);
  for (int voice = 0; voice < 6; ++voice) {
    double phase = rng.uniform(0.0, kTau);
    std::size_t i = 0;
    while (i < n) {
      const std::size_t seg = 3200 + rng.next_below(1600);  // 0.2-0.3 s
      const double f = rng.uniform(300.0, 3500.0);
      const double amp = 0.15 * rng.uniform(0.6, 1.0);
      for (std::size_t k = 0; k < seg && i < n; ++k, ++i) {
        out[i] += amp * std::sin(phase);
        phase += kTau * f / 16000.0;
      }
    }
  }
  return out;
}

std::vector<double> synth_category(std::size_t cat, std::size_t n, Rng& rng) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  switch (cat) {
    case 0:  // domestic: warm low-passed hum, slow modulation
      one_pole_lowpass(x, 0.98);
      amplitude_modulate(x, 0.5, 0.4, rng.uniform(0.0, kTau));
      break;
    case 1:  // nature: pink-ish wash
      one_pole_lowpass(x, 0.9);
      one_pole_lowpass(x, 0.6);
      amplitude_modulate(x, 0.2, 0.2, rng.uniform(0.0, kTau));
      break;
    case 2: {  // office: mid-band rustle plus sparse clicks
      one_pole_highpass(x, 0.7);
      one_pole_lowpass(x, 0.85);
      const std::size_t clicks = 10 + rng.next_below(10);
      for (std::size_t c = 0; c < clicks; ++c) {
        const std::size_t at = rng.next_below(n);
        for (std::size_t k = 0; k < 200 && at + k < n; ++k)
          x[at + k] += rng.normal() * 2.0 * std::exp(-static_cast<double>(k) / 40.0);
      }
      break;
    }
    case 3:  // public: babble, the speech-band overlapping category
      x = synth_babble(n, rng);
      break;
    case 4: {  // street: rumble plus broadband passing events
      one_pole_lowpass(x, 0.95);
      const std::size_t events = 3 + rng.next_below(3);
      for (std::size_t e = 0; e < events; ++e) {
        const std::size_t at = rng.next_below(n);
        const std::size_t len = 4800 + rng.next_below(4800);
        for (std::size_t k = 0; k < len && at + k < n; ++k) {
          const double env = std::sin(kTau * 0.5 * static_cast<double>(k) /
                                      static_cast<double>(len));
          x[at + k] += rng.normal() * 1.5 * env * env;
        }
      }
      break;
    }
    case 5:  // transportation: heavy rumble with engine-rate modulation
      one_pole_lowpass(x, 0.99);
      amplitude_modulate(x, 8.0, 0.5, rng.uniform(0.0, kTau));
      break;
    default:
      AVW_FAIL("bad noise category " << cat);
  }
  normalize_rms(x, 0.1);
  return x;
}

}  // namespace

NoiseBank::NoiseBank(const NoiseBankConfig& cfg) {
  AVW_CHECK(cfg.files_per_category >= 1, "noise bank needs at least one file per category");
  const auto n = static_cast<std::size_t>(cfg.file_seconds * 16000.0);
  AVW_CHECK(n >= kStftWindow, "noise bank files too short");
  for (std::size_t cat = 0; cat < 6; ++cat) {
    files_[cat].reserve(cfg.files_per_category);
    for (std::size_t f = 0; f < cfg.files_per_category; ++f) {
      Rng rng(derive_seed(cfg.seed, "noise-bank", cat, f));
      files_[cat].push_back(synth_category(cat, n, rng));
    }
  }
}

NoiseBank NoiseBank::load_wav_bank(const std::string& dir) {
  namespace fs = std::filesystem;
  NoiseBank bank;
  std::size_t min_len = SIZE_MAX;
  for (std::size_t cat = 0; cat < 6; ++cat) {
    const fs::path cdir = fs::path(dir) / kNoiseCategories[cat];
    AVW_CHECK(fs::is_directory(cdir), "noise bank category directory missing: "
                                          << cdir.string());
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(cdir))
      if (e.path().extension() == ".wav") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    AVW_CHECK(!paths.empty(), "no WAV files in " << cdir.string());
    for (const auto& p : paths) {
      Waveform w = read_wav(p.string());
      min_len = std::min(min_len, w.samples.size());
      bank.files_[cat].push_back(std::move(w.samples));
    }
  }
  for (auto& cat : bank.files_)
    for (auto& f : cat) f.resize(min_len);  // equal-length files keep offsets simple
  return bank;
}

const std::vector<double>& NoiseBank::file(std::size_t category, std::size_t index) const {
  AVW_CHECK(category < 6, "noise category index out of range");
  AVW_CHECK(index < files_[category].size(), "noise file index out of range");
  return files_[category][index];
}

NoiseSpec draw_train_noise_spec(const NoiseBank& bank, std::size_t need_samples, Rng& rng) {
  AVW_CHECK(bank.files_per_category() > 0, "empty noise bank");
  AVW_CHECK(bank.file_length() >= need_samples,
            "noise bank files shorter than the requested segment");
  NoiseSpec spec;
  const std::size_t n_n = rng.next_below(4);  // uniform on {0,1,2,3}
  for (std::size_t i = 0; i < n_n; ++i) {
    NoiseSource src;
    src.category = rng.next_below(kTrainNoiseCategories);
    src.file_index = rng.next_below(bank.files_per_category());
    src.offset = rng.next_below(bank.file_length() - need_samples + 1);
    spec.sources.push_back(src);
  }
  spec.snr_db = rng.uniform(-12.0, 22.0);
  return spec;
}

Waveform realize_noise(const NoiseBank& bank, const NoiseSpec& spec,
                       std::size_t need_samples) {
  Waveform w;
  w.samples.assign(need_samples, 0.0);
  for (const auto& src : spec.sources) {
    const auto& file = bank.file(src.category, src.file_index);
    AVW_CHECK(src.offset + need_samples <= file.size(), "noise offset out of range");
    for (std::size_t i = 0; i < need_samples; ++i)
      w.samples[i] += file[src.offset + i];
  }
  return w;
}

Waveform mix_at_snr(const Waveform& signal, const Waveform& noise, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return signal;  // clean sentinel
  AVW_CHECK(signal.samples.size() == noise.samples.size() &&
                signal.sample_rate == noise.sample_rate,
            "mix_at_snr needs equal lengths and rates");
  double ps = 0.0, pn = 0.0;
  for (double v : signal.samples) ps += v * v;
  for (double v : noise.samples) pn += v * v;
  const auto n = static_cast<double>(signal.samples.size());
  ps /= n;
  pn /= n;
  AVW_CHECK(ps > 0.0, "mix_at_snr: signal power is zero");
  AVW_CHECK(pn > 0.0, "mix_at_snr: zero-power noise with a finite target SNR");
  const double g = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
  Waveform out;
  out.sample_rate = signal.sample_rate;
  out.samples.resize(signal.samples.size());
  for (std::size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] = signal.samples[i] + g * noise.samples[i];
  return out;
}

double measured_snr_db(const Waveform& signal, const Waveform& scaled_noise) {
  double ps = 0.0, pn = 0.0;
  for (double v : signal.samples) ps += v * v;
  for (double v : scaled_noise.samples) pn += v * v;
  AVW_CHECK(pn > 0.0, "measured_snr_db: zero noise power");
  return 10.0 * std::log10(ps / pn);
}

Waveform apply_noise(const NoiseBank& bank, const NoiseSpec& spec, const Waveform& clean) {
  if (spec.clean()) return clean;
  Waveform noise = realize_noise(bank, spec, clean.samples.size());
  noise.sample_rate = clean.sample_rate;
  return mix_at_snr(clean, noise, spec.snr_db);
}

}  // namespace avword
