#include "davr/checkpoint.hpp"

#include <fstream>
#include <iostream>
#include <stdexcept>

namespace davr::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_tensor_f32(const fs::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  for (int64_t i = 0; i < t.numel(); ++i) {
    float v = static_cast<float>(t[i]);
    out.write(reinterpret_cast<const char*>(&v), sizeof(float));
  }
}

void read_tensor_f32(const fs::path& path, const std::string& name, int64_t byte_offset,
                     Tensor& t) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("checkpoint: missing tensor file for parameter '" + name + "': " +
                             path.string());
  in.seekg(0, std::ios::end);
  int64_t file_size = static_cast<int64_t>(in.tellg()) - byte_offset;
  int64_t expected = t.numel() * static_cast<int64_t>(sizeof(float));
  if (file_size < expected)
    throw std::runtime_error("checkpoint: tensor file for parameter '" + name + "' is truncated (" +
                             std::to_string(file_size) + " bytes, expected " +
                             std::to_string(expected) + ")");
  in.seekg(byte_offset, std::ios::beg);
  for (int64_t i = 0; i < t.numel(); ++i) {
    float v;
    in.read(reinterpret_cast<char*>(&v), sizeof(float));
    if (!in)
      throw std::runtime_error("checkpoint: read failed for parameter '" + name + "'");
    t[i] = static_cast<double>(v);
  }
}

json tensor_entry(const std::string& name, const Tensor& t) {
  return json{{"shape", t.shape()},
              {"dtype", "f32le"},
              {"file", "tensors/" + name + ".f32"},
              {"byte_offset", 0}};
}

}  // namespace

void write_checkpoint(const fs::path& dir, const ManifestInfo& info,
                      const std::vector<NamedParam>& params,
                      const std::vector<NamedBuffer>& buffers,
                      const std::map<std::string, Tensor>& optimizer_state) {
  fs::create_directories(dir / "tensors");
  json manifest;
  manifest["format"] = "davr-checkpoint-v1";
  manifest["stage"] = info.stage;
  manifest["config_hash"] = info.config_hash;
  manifest["epoch"] = info.epoch;
  manifest["config"] = info.config;
  manifest["loss_history"] = info.loss_history;
  if (!info.extra.is_null()) manifest["extra"] = info.extra;

  json jparams = json::object();
  for (const NamedParam& p : params) {
    write_tensor_f32(dir / "tensors" / (p.name + ".f32"), p.var.value());
    jparams[p.name] = tensor_entry(p.name, p.var.value());
  }
  for (const NamedBuffer& b : buffers) {
    write_tensor_f32(dir / "tensors" / (b.name + ".f32"), *b.tensor);
    jparams[b.name] = tensor_entry(b.name, *b.tensor);
  }
  manifest["params"] = std::move(jparams);

  json jopt = json::object();
  for (const auto& [name, t] : optimizer_state) {
    write_tensor_f32(dir / "tensors" / (name + ".f32"), t);
    jopt[name] = tensor_entry(name, t);
  }
  manifest["optimizer"] = std::move(jopt);

  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("checkpoint: cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

ManifestInfo read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("checkpoint: no manifest.json in " + dir.string());
  json manifest = json::parse(in);
  ManifestInfo info;
  info.stage = manifest.at("stage").get<std::string>();
  info.config_hash = manifest.at("config_hash").get<std::string>();
  info.epoch = manifest.at("epoch").get<int>();
  info.config = manifest.at("config");
  info.loss_history = manifest.at("loss_history");
  if (manifest.contains("extra")) info.extra = manifest.at("extra");
  return info;
}

void load_checkpoint_into(const fs::path& dir, const std::vector<NamedParam>& params,
                          const std::vector<NamedBuffer>& buffers,
                          std::map<std::string, Tensor>* optimizer_state,
                          const LoadOptions& options) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("checkpoint: no manifest.json in " + dir.string());
  json manifest = json::parse(in);

  if (!options.expected_config_hash.empty()) {
    std::string stored = manifest.at("config_hash").get<std::string>();
    if (stored != options.expected_config_hash) {
      std::cerr << "warning: checkpoint config hash " << stored
                << " does not match the current config " << options.expected_config_hash << "\n";
      if (!options.force)
        throw std::runtime_error(
            "checkpoint: config hash mismatch; pass --force to load anyway");
    }
  }

  const json& jparams = manifest.at("params");
  std::vector<std::string> problems;

  auto load_one = [&](const std::string& name, Tensor& target) {
    auto it = jparams.find(name);
    if (it == jparams.end()) {
      problems.push_back("missing manifest entry for '" + name + "'");
      return;
    }
    std::vector<int64_t> shape = it->at("shape").get<std::vector<int64_t>>();
    if (shape != target.shape()) {
      problems.push_back("shape mismatch for '" + name + "'");
      return;
    }
    read_tensor_f32(dir / it->at("file").get<std::string>(), name,
                    it->at("byte_offset").get<int64_t>(), target);
  };

  // First verify the full name set so errors list every discrepancy at once.
  for (const NamedParam& p : params)
    if (!jparams.contains(p.name)) problems.push_back("missing parameter '" + p.name + "'");
  for (const NamedBuffer& b : buffers)
    if (!jparams.contains(b.name)) problems.push_back("missing buffer '" + b.name + "'");
  if (!problems.empty()) {
    std::string msg = "checkpoint: refusing to load " + dir.string() + ":";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw std::runtime_error(msg);
  }

  for (const NamedParam& p : params) load_one(p.name, p.var.mutable_value());
  for (const NamedBuffer& b : buffers) load_one(b.name, *b.tensor);
  if (!problems.empty()) {
    std::string msg = "checkpoint: refusing to load " + dir.string() + ":";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw std::runtime_error(msg);
  }

  if (optimizer_state) {
    optimizer_state->clear();
    if (manifest.contains("optimizer")) {
      for (const auto& [name, entry] : manifest.at("optimizer").items()) {
        Tensor t(entry.at("shape").get<std::vector<int64_t>>());
        read_tensor_f32(dir / entry.at("file").get<std::string>(), name,
                        entry.at("byte_offset").get<int64_t>(), t);
        (*optimizer_state)[name] = std::move(t);
      }
    }
  }
}

}  // namespace davr::train
