#include "davr/config.hpp"

#include <fstream>
#include <stdexcept>

namespace davr::train {

using nlohmann::json;

namespace {

json data_to_json(const DataConfig& d) {
  return json{{"source_root", d.source_root}, {"source_layout", d.source_layout},
              {"source_list", d.source_list}, {"target_root", d.target_root},
              {"target_layout", d.target_layout}, {"target_list", d.target_list},
              {"train_root", d.train_root},   {"train_layout", d.train_layout},
              {"train_list", d.train_list}};
}

json dan_to_json(const DanTrainConfig& d) {
  return json{{"base_channels", d.base_channels},
              {"num_resblocks", d.num_resblocks},
              {"disc_base_channels", d.disc_base_channels},
              {"disc_downsamples", d.disc_downsamples},
              {"lr", d.lr},
              {"beta1", d.beta1},
              {"beta2", d.beta2},
              {"lambda_cycle", d.lambda_cycle},
              {"lambda_identity", d.lambda_identity},
              {"lambda_style", d.lambda_style},
              {"buffer_size", d.buffer_size}};
}

json reid_to_json(const ReidTrainConfig& r) {
  json phases = json::array();
  for (const LrPhase& p : r.lr_schedule) phases.push_back({{"epochs", p.epochs}, {"lr", p.lr}});
  return json{{"backbone", r.backbone},       {"lr_schedule", phases},
              {"momentum", r.momentum},       {"weight_decay", r.weight_decay},
              {"dropout", r.dropout},         {"pos_ratio", r.pos_ratio},
              {"eval_holdout_per_id", r.eval_holdout_per_id}};
}

// Any key present in `value` but absent from `reference` is an error;
// catching typos beats silently ignoring them.
void reject_unknown_keys(const json& value, const json& reference, const std::string& where) {
  if (!value.is_object()) return;
  for (const auto& [key, sub] : value.items()) {
    if (!reference.contains(key))
      throw std::runtime_error("config: unknown key '" + (where.empty() ? key : where + "." + key) +
                               "'");
    if (sub.is_object()) reject_unknown_keys(sub, reference.at(key),
                                             where.empty() ? key : where + "." + key);
  }
}

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json config_to_json(const TrainConfig& c) {
  return json{{"stage", c.stage},
              {"seed", c.seed},
              {"image_size", c.image_size},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"checkpoint_dir", c.checkpoint_dir},
              {"data", data_to_json(c.data)},
              {"dan", dan_to_json(c.dan)},
              {"reid", reid_to_json(c.reid)}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  reject_unknown_keys(j, config_to_json(c), "");

  get_if(j, "stage", c.stage);
  if (c.stage != "dan" && c.stage != "reid")
    throw std::runtime_error("config: stage must be 'dan' or 'reid', got '" + c.stage + "'");
  get_if(j, "seed", c.seed);
  get_if(j, "image_size", c.image_size);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "epochs", c.epochs);
  get_if(j, "checkpoint_dir", c.checkpoint_dir);

  if (j.contains("data")) {
    const json& d = j.at("data");
    get_if(d, "source_root", c.data.source_root);
    get_if(d, "source_layout", c.data.source_layout);
    get_if(d, "source_list", c.data.source_list);
    get_if(d, "target_root", c.data.target_root);
    get_if(d, "target_layout", c.data.target_layout);
    get_if(d, "target_list", c.data.target_list);
    get_if(d, "train_root", c.data.train_root);
    get_if(d, "train_layout", c.data.train_layout);
    get_if(d, "train_list", c.data.train_list);
  }
  if (j.contains("dan")) {
    const json& d = j.at("dan");
    get_if(d, "base_channels", c.dan.base_channels);
    get_if(d, "num_resblocks", c.dan.num_resblocks);
    get_if(d, "disc_base_channels", c.dan.disc_base_channels);
    get_if(d, "disc_downsamples", c.dan.disc_downsamples);
    get_if(d, "lr", c.dan.lr);
    get_if(d, "beta1", c.dan.beta1);
    get_if(d, "beta2", c.dan.beta2);
    get_if(d, "lambda_cycle", c.dan.lambda_cycle);
    get_if(d, "lambda_identity", c.dan.lambda_identity);
    get_if(d, "lambda_style", c.dan.lambda_style);
    get_if(d, "buffer_size", c.dan.buffer_size);
  }
  if (j.contains("reid")) {
    const json& r = j.at("reid");
    get_if(r, "backbone", c.reid.backbone);
    if (r.contains("lr_schedule")) {
      c.reid.lr_schedule.clear();
      for (const json& p : r.at("lr_schedule"))
        c.reid.lr_schedule.push_back({p.at("epochs").get<int>(), p.at("lr").get<double>()});
    }
    get_if(r, "momentum", c.reid.momentum);
    get_if(r, "weight_decay", c.reid.weight_decay);
    get_if(r, "dropout", c.reid.dropout);
    get_if(r, "pos_ratio", c.reid.pos_ratio);
    get_if(r, "eval_holdout_per_id", c.reid.eval_holdout_per_id);
  }
  return c;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  return config_from_json(json::parse(in));
}

std::string config_hash(const json& j) {
  std::string canon = j.dump();  // nlohmann dumps objects with sorted keys
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string config_hash(const TrainConfig& c) { return config_hash(config_to_json(c)); }

void apply_override(json& j, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("override must look like key.path=value, got '" + assignment + "'");
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);

  json* cursor = &j;
  size_t begin = 0;
  while (true) {
    size_t dot = path.find('.', begin);
    std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
    if (!cursor->contains(key))
      throw std::runtime_error("override: unknown config key '" + path + "'");
    cursor = &(*cursor)[key];
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded())
    *cursor = value;  // unquoted strings
  else
    *cursor = parsed;
}

}  // namespace davr::train
