#include "avword/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "avword/tnsr_io.hpp"

namespace avword {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_to_json(const WordbankConfig& cfg) {
  json pairs = json::array();
  for (const auto& p : cfg.homophone_pairs) pairs.push_back({p.first, p.second});
  return json{{"vocab_size", cfg.vocab_size},
              {"train_per_word", cfg.train_per_word},
              {"val_per_word", cfg.val_per_word},
              {"test_per_word", cfg.test_per_word},
              {"frame_size", cfg.frame_size},
              {"predictable_count", cfg.predictable_count},
              {"homophone_pairs", pairs},
              {"width_min", cfg.width_min},
              {"width_max", cfg.width_max},
              {"context_visual_amp", cfg.context_visual_amp},
              {"seed", cfg.seed}};
}

WordbankConfig config_from_json(const json& j) {
  WordbankConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
  cfg.train_per_word = j.at("train_per_word").get<std::size_t>();
  cfg.val_per_word = j.at("val_per_word").get<std::size_t>();
  cfg.test_per_word = j.at("test_per_word").get<std::size_t>();
  cfg.frame_size = j.at("frame_size").get<std::size_t>();
  cfg.predictable_count = j.at("predictable_count").get<std::size_t>();
  cfg.homophone_pairs.clear();
  for (const auto& p : j.at("homophone_pairs"))
    cfg.homophone_pairs.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
  cfg.width_min = j.at("width_min").get<std::size_t>();
  cfg.width_max = j.at("width_max").get<std::size_t>();
  if (j.contains("context_visual_amp"))
    cfg.context_visual_amp = j.at("context_visual_amp").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

constexpr const char* kSplits[] = {"train", "val", "test"};

std::size_t per_split(const WordbankConfig& cfg, const std::string& split) {
  if (split == "train") return cfg.train_per_word;
  if (split == "val") return cfg.val_per_word;
  return cfg.test_per_word;
}

}  // namespace

void store_sample(const Sample& sample, const std::string& dir) {
  fs::create_directories(dir);
  write_tnsr((fs::path(dir) / "frames.tnsr").string(), sample.frames);
  write_wav((fs::path(dir) / "audio.wav").string(), sample.wave);
  json meta{{"label", sample.meta.label},
            {"word", sample.meta.word},
            {"boundary_start", sample.meta.boundary_start},
            {"boundary_end", sample.meta.boundary_end},
            {"split", sample.meta.split},
            {"id", sample.meta.id}};
  std::ofstream out(fs::path(dir) / "meta.json");
  AVW_CHECK(out.good(), "cannot write " << dir << "/meta.json");
  out << meta.dump(2) << "\n";
}

Sample load_sample(const std::string& dir) {
  Sample s;
  auto blob = read_tnsr((fs::path(dir) / "frames.tnsr").string());
  AVW_CHECK(blob.dtype == TnsrDtype::u8, "frames.tnsr in " << dir << " must be u8");
  s.frames = blob.as<std::uint8_t>();
  AVW_CHECK(s.frames.ndim() == 4 && s.frames.dim(1) == 1,
            "frames.tnsr in " << dir << " must be [T,1,H,W], got "
                              << shape_str(s.frames.shape()));
  s.wave = read_wav((fs::path(dir) / "audio.wav").string());
  std::ifstream in(fs::path(dir) / "meta.json");
  AVW_CHECK(in.good(), "missing meta.json in " << dir);
  json meta = json::parse(in);
  s.meta.label = meta.at("label").get<std::size_t>();
  s.meta.word = meta.at("word").get<std::string>();
  s.meta.boundary_start = meta.at("boundary_start").get<std::size_t>();
  s.meta.boundary_end = meta.at("boundary_end").get<std::size_t>();
  s.meta.split = meta.at("split").get<std::string>();
  s.meta.id = meta.at("id").get<std::string>();
  s.bounds = {s.meta.boundary_start, s.meta.boundary_end};
  s.bounds.validate(s.frames.dim(0));
  return s;
}

std::uint64_t dataset_content_hash(const std::string& root) {
  // only the sample payload counts; manifests, echoes and noise manifests are
  // derived artifacts
  std::vector<fs::path> paths;
  for (const char* split : kSplits) {
    const fs::path sdir = fs::path(root) / split;
    if (!fs::is_directory(sdir)) continue;
    for (const auto& e : fs::recursive_directory_iterator(sdir))
      if (e.is_regular_file()) paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const char* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(data[i]);
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& p : paths) {
    const std::string rel = fs::relative(p, root).generic_string();
    mix(rel.data(), rel.size());
    std::ifstream in(p, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    mix(bytes.data(), bytes.size());
  }
  return h;
}

DatasetManifest generate_wordbank(const WordbankConfig& cfg, const std::string& root) {
  cfg.validate();
  const Vocabulary vocab = Vocabulary::make_default(cfg.vocab_size);
  fs::create_directories(root);
  for (const char* split : kSplits) {
    for (std::size_t w = 0; w < cfg.vocab_size; ++w) {
      for (std::size_t i = 0; i < per_split(cfg, split); ++i) {
        Sample s = synthesize_sample(cfg, vocab, split, w, i);
        const fs::path dir = fs::path(root) / split / vocab.words[w] / s.meta.id;
        store_sample(s, dir.string());
      }
    }
  }
  DatasetManifest manifest;
  manifest.config = cfg;
  manifest.words = vocab.words;
  manifest.content_hash = dataset_content_hash(root);

  json j{{"config", config_to_json(cfg)},
         {"words", vocab.words},
         {"content_hash", manifest.content_hash}};
  std::ofstream out(fs::path(root) / "manifest.json");
  AVW_CHECK(out.good(), "cannot write dataset manifest in " << root);
  out << j.dump(2) << "\n";
  return manifest;
}

DatasetManifest read_dataset_manifest(const std::string& root) {
  std::ifstream in(fs::path(root) / "manifest.json");
  AVW_CHECK(in.good(), "dataset manifest not found under " << root);
  json j = json::parse(in);
  DatasetManifest m;
  m.config = config_from_json(j.at("config"));
  m.words = j.at("words").get<std::vector<std::string>>();
  m.content_hash = j.at("content_hash").get<std::uint64_t>();
  return m;
}

const std::vector<Sample>& LoadedDataset::split(const std::string& name) const {
  auto it = splits.find(name);
  AVW_CHECK(it != splits.end(), "dataset has no split '" << name << "'");
  return it->second;
}

LoadedDataset load_dataset(const std::string& root) {
  LoadedDataset ds;
  ds.root = root;
  const DatasetManifest manifest = read_dataset_manifest(root);
  ds.config = manifest.config;
  ds.vocab.words = manifest.words;
  ds.vocab.validate();
  for (const char* split : kSplits) {
    std::vector<Sample>& out = ds.splits[split];
    const fs::path sdir = fs::path(root) / split;
    AVW_CHECK(fs::is_directory(sdir), "dataset split directory missing: " << sdir.string());
    for (const auto& word : manifest.words) {
      const fs::path wdir = sdir / word;
      if (!fs::is_directory(wdir)) continue;
      std::vector<fs::path> ids;
      for (const auto& e : fs::directory_iterator(wdir))
        if (e.is_directory()) ids.push_back(e.path());
      std::sort(ids.begin(), ids.end());
      for (const auto& id : ids) out.push_back(load_sample(id.string()));
    }
    AVW_CHECK(!out.empty(), "dataset split '" << split << "' is empty");
  }
  return ds;
}

std::vector<TestNoiseSet> build_test_noise_sets(const NoiseBank& bank,
                                                const LoadedDataset& dataset,
                                                std::uint64_t seed) {
  const auto& test = dataset.split("test");
  std::vector<TestNoiseSet> sets;
  for (std::size_t li = 0; li <= kTestSnrLevels.size(); ++li) {
    const bool clean = li == kTestSnrLevels.size();
    TestNoiseSet set;
    if (clean) {
      set.name = "clean";
    } else {
      set.snr_db = kTestSnrLevels[li];
      set.name = "snr_" + std::to_string(*set.snr_db);
    }
    set.entries.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      NoiseAssignment a;
      a.sample_id = test[i].meta.id;
      if (!clean) {
        Rng rng(derive_seed(seed, "test-noise", li, i));
        NoiseSpec spec;
        NoiseSource src;
        src.category = rng.next_below(6);  // testing covers all categories
        src.file_index = rng.next_below(bank.files_per_category());
        src.offset = rng.next_below(bank.file_length() - test[i].wave.samples.size() + 1);
        spec.sources = {src};  // fixed sets use no mixtures
        spec.snr_db = static_cast<double>(*set.snr_db);
        a.noise = std::move(spec);
      }
      set.entries.push_back(std::move(a));
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

void write_test_noise_sets(const std::vector<TestNoiseSet>& sets, const std::string& dir) {
  fs::create_directories(dir);
  for (const auto& set : sets) {
    json entries = json::array();
    for (const auto& e : set.entries) {
      json je{{"sample_id", e.sample_id}};
      if (e.noise) {
        json srcs = json::array();
        for (const auto& s : e.noise->sources)
          srcs.push_back({{"category", s.category},
                          {"file_index", s.file_index},
                          {"offset", s.offset}});
        je["noise"] = {{"sources", srcs}, {"snr_db", e.noise->snr_db}};
      }
      entries.push_back(std::move(je));
    }
    json j{{"name", set.name}, {"entries", entries}};
    if (set.snr_db) j["snr_db"] = *set.snr_db;
    std::ofstream out(fs::path(dir) / (set.name + ".json"));
    AVW_CHECK(out.good(), "cannot write noise manifest " << set.name);
    out << j.dump(2) << "\n";
  }
}

std::vector<TestNoiseSet> read_test_noise_sets(const std::string& dir) {
  std::vector<std::string> names{"snr_-10", "snr_-5", "snr_0", "snr_5",
                                 "snr_10", "snr_15", "snr_20", "clean"};
  std::vector<TestNoiseSet> sets;
  for (const auto& name : names) {
    const fs::path p = fs::path(dir) / (name + ".json");
    AVW_CHECK(fs::exists(p), "missing test noise manifest " << p.string());
    std::ifstream in(p);
    json j = json::parse(in);
    TestNoiseSet set;
    set.name = j.at("name").get<std::string>();
    if (j.contains("snr_db")) set.snr_db = j.at("snr_db").get<int>();
    for (const auto& je : j.at("entries")) {
      NoiseAssignment a;
      a.sample_id = je.at("sample_id").get<std::string>();
      if (je.contains("noise")) {
        NoiseSpec spec;
        spec.snr_db = je.at("noise").at("snr_db").get<double>();
        for (const auto& s : je.at("noise").at("sources"))
          spec.sources.push_back({s.at("category").get<std::size_t>(),
                                  s.at("file_index").get<std::size_t>(),
                                  s.at("offset").get<std::size_t>()});
        a.noise = std::move(spec);
      }
      set.entries.push_back(std::move(a));
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

}  // namespace avword
