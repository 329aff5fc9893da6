#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace davr::train {

struct DataConfig {
  std::string source_root, source_layout = "flat", source_list;
  std::string target_root, target_layout = "flat", target_list;
  std::string train_root, train_layout = "flat", train_list;
};

struct DanTrainConfig {
  int base_channels = 64;
  int num_resblocks = 9;
  int disc_base_channels = 64;
  int disc_downsamples = 4;
  double lr = 2e-4;
  double beta1 = 0.5, beta2 = 0.999;
  double lambda_cycle = 10.0, lambda_identity = 5.0, lambda_style = 1.0;
  int buffer_size = 50;
};

struct LrPhase {
  int epochs = 0;
  double lr = 0.0;
};

struct ReidTrainConfig {
  std::string backbone = "resnet50";  // resnet50 | smoke | tiny
  std::vector<LrPhase> lr_schedule = {{50, 0.1}, {5, 0.01}};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double dropout = 0.5;
  double pos_ratio = 0.5;
  int eval_holdout_per_id = 0;  // images per id held out of training
};

struct TrainConfig {
  std::string stage = "dan";
  uint64_t seed = 1;
  int image_size = 256;  // dan input; reid input follows the backbone arch
  int batch_size = 16;
  int epochs = 6;
  std::string checkpoint_dir = "checkpoints";
  DataConfig data;
  DanTrainConfig dan;
  ReidTrainConfig reid;
};

// Strict JSON binding: unknown keys anywhere in the document are rejected.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& c);
TrainConfig load_config_file(const std::string& path);

// FNV-1a over the canonical serialized form, hex encoded.
std::string config_hash(const TrainConfig& c);
std::string config_hash(const nlohmann::json& j);

// Applies "a.b.c=value" onto a config JSON; value parsed as JSON when
// possible, else taken as a string. The key must already exist.
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace davr::train
