#include "avword/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "avword/tnsr_io.hpp"

namespace avword {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string tensor_file(const std::string& dir, const std::string& sub,
                        const std::string& name) {
  return (fs::path(dir) / sub / (name + ".tnsr")).string();
}

}  // namespace

void save_checkpoint(const std::string& dir, ParamMap<float>& params,
                     const BufMap<float>& buffers, const CheckpointExtras& extras) {
  fs::create_directories(fs::path(dir) / "params");
  fs::create_directories(fs::path(dir) / "buffers");
  json manifest;
  manifest["format"] = "avword-checkpoint-v1";
  if (!extras.model_spec_json.empty())
    manifest["model_spec"] = json::parse(extras.model_spec_json);

  json jp = json::array();
  for (auto& [name, p] : params) {
    write_tnsr(tensor_file(dir, "params", name), p->value);
    jp.push_back({{"name", name}, {"shape", p->value.shape()}});
  }
  manifest["params"] = jp;

  json jb = json::array();
  for (const auto& [name, t] : buffers) {
    write_tnsr(tensor_file(dir, "buffers", name), *t);
    jb.push_back({{"name", name}, {"shape", t->shape()}});
  }
  manifest["buffers"] = jb;

  if (extras.optimizer) {
    fs::create_directories(fs::path(dir) / "optim");
    for (const auto& [name, t] : extras.optimizer->m)
      write_tnsr(tensor_file(dir, "optim", name + ".m"), t);
    for (const auto& [name, t] : extras.optimizer->v)
      write_tnsr(tensor_file(dir, "optim", name + ".v"), t);
    manifest["optimizer"] = {{"step_count", extras.optimizer->step_count},
                             {"lr", extras.optimizer->lr}};
  }
  if (extras.scheduler) {
    manifest["scheduler"] = {
        {"best_val_metric", extras.scheduler->best_val_metric},
        {"epochs_since_improvement", extras.scheduler->epochs_since_improvement},
        {"lr", extras.scheduler->lr}};
  }

  std::ofstream out(fs::path(dir) / "manifest.json");
  AVW_CHECK(out.good(), "cannot write checkpoint manifest in " << dir);
  out << manifest.dump(2) << "\n";
}

CheckpointExtras load_checkpoint(const std::string& dir, ParamMap<float>& params,
                                 const BufMap<float>& buffers) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  AVW_CHECK(fs::exists(mpath), "checkpoint manifest not found: " << mpath.string());
  std::ifstream in(mpath);
  json manifest = json::parse(in, nullptr, /*allow_exceptions=*/true);

  auto names_of = [](const json& arr) {
    std::vector<std::string> names;
    for (const auto& e : arr) names.push_back(e.at("name").get<std::string>());
    return names;
  };
  std::vector<std::string> have = names_of(manifest.at("params"));
  std::vector<std::string> want;
  for (auto& [name, p] : params) want.push_back(name);
  if (have != want)
    AVW_FAIL_AS(ArtifactError,
                "checkpoint/model-spec mismatch: parameter sets differ (checkpoint has "
                    << have.size() << " entries, model expects " << want.size() << ")");

  for (auto& [name, p] : params) {
    auto blob = read_tnsr(tensor_file(dir, "params", name));
    if (blob.shape != p->value.shape())
      AVW_FAIL_AS(ArtifactError, "checkpoint/model-spec mismatch: parameter "
                                     << name << " is " << shape_str(blob.shape)
                                     << ", model expects "
                                     << shape_str(p->value.shape()));
    p->value = blob.as<float>();
  }
  for (const auto& [name, t] : buffers) {
    auto blob = read_tnsr(tensor_file(dir, "buffers", name));
    if (blob.shape != t->shape())
      AVW_FAIL_AS(ArtifactError, "checkpoint/model-spec mismatch: buffer " << name);
    *t = blob.as<float>();
  }

  CheckpointExtras extras;
  if (manifest.contains("model_spec")) extras.model_spec_json = manifest["model_spec"].dump();
  if (manifest.contains("optimizer")) {
    AdamState st;
    st.step_count = manifest["optimizer"].at("step_count").get<std::size_t>();
    st.lr = manifest["optimizer"].at("lr").get<double>();
    for (auto& [name, p] : params) {
      const std::string mf = tensor_file(dir, "optim", name + ".m");
      if (fs::exists(mf)) {
        st.m[name] = read_tnsr(mf).as<float>();
        st.v[name] = read_tnsr(tensor_file(dir, "optim", name + ".v")).as<float>();
      }
    }
    extras.optimizer = std::move(st);
  }
  if (manifest.contains("scheduler")) {
    PlateauState st;
    st.best_val_metric = manifest["scheduler"].at("best_val_metric").get<double>();
    st.epochs_since_improvement =
        manifest["scheduler"].at("epochs_since_improvement").get<int>();
    st.lr = manifest["scheduler"].at("lr").get<double>();
    extras.scheduler = st;
  }
  return extras;
}

}  // namespace avword
