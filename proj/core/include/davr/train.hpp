#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "davr/attnet.hpp"
#include "davr/checkpoint.hpp"
#include "davr/config.hpp"
#include "davr/dan.hpp"
#include "davr/data.hpp"

namespace davr::train {

enum class Direction { source_to_target, target_to_source };
Direction direction_from_string(const std::string& s);
const char* to_string(Direction d);

struct DanCheckpoint {
  dan::DanModel model;
  AdamOptimizer opt_g{2e-4, 0.5, 0.999};
  AdamOptimizer opt_d{2e-4, 0.5, 0.999};
  TrainConfig config;
  int epoch = 0;
  dan::DanLossReport initial;  // first-batch losses at initialization
  std::vector<dan::DanLossReport> history;  // per-epoch means
};

DanCheckpoint init_dan(const TrainConfig& config);

// Unsupervised: consumes image paths only, identity labels never enter the
// loop. Alternates generator and discriminator updates per batch, checkpoints
// per epoch (keep last 2 plus best-by-loss) and appends a JSONL run log.
DanCheckpoint train_dan(const TrainConfig& config, const DatasetIndex& source,
                        const DatasetIndex& target);

void save_dan_checkpoint(const DanCheckpoint& ckpt, const std::filesystem::path& dir);
DanCheckpoint load_dan_checkpoint(const std::filesystem::path& dir,
                                  const LoadOptions& options = {});

// Writes one translated PNG per record under out_root/<direction>/<id>/,
// carrying vehicle and camera ids over unchanged.
DatasetIndex translate_dataset(const DanCheckpoint& ckpt, const DatasetIndex& index,
                               Direction direction, const std::filesystem::path& out_root);

struct ReidEpochLoss {
  double total = 0, identification = 0, verification = 0;
};

struct ReidCheckpoint {
  attnet::AttNetParams model;
  SgdOptimizer opt{0.1, 0.9, 5e-4};
  TrainConfig config;
  int epoch = 0;
  std::vector<ReidEpochLoss> history;
};

ReidCheckpoint init_reid(const TrainConfig& config, int num_identities);
ReidCheckpoint train_reid(const TrainConfig& config, const DatasetIndex& train_index);

void save_reid_checkpoint(const ReidCheckpoint& ckpt, const std::filesystem::path& dir);
ReidCheckpoint load_reid_checkpoint(const std::filesystem::path& dir,
                                    const LoadOptions& options = {});

// attnet arch for a config + identity count (backbone: resnet50|smoke|tiny)
attnet::AttNetArch reid_arch_from_config(const TrainConfig& config, int num_identities);

}  // namespace davr::train
