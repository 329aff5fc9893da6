#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "davr/nn.hpp"
#include "json.hpp"

namespace davr::train {

// On-disk checkpoint: one raw little-endian float32 file per named tensor
// under tensors/, plus manifest.json mapping
//   name -> {shape, dtype, file, byte_offset}
// with the stage, epoch, config (and its hash) and loss history.

struct ManifestInfo {
  std::string stage;
  std::string config_hash;
  int epoch = 0;
  nlohmann::json config;        // effective config the run used
  nlohmann::json loss_history;  // array of per-epoch records
  nlohmann::json extra;         // stage-specific fields (e.g. num_identities)
};

void write_checkpoint(const std::filesystem::path& dir, const ManifestInfo& info,
                      const std::vector<NamedParam>& params,
                      const std::vector<NamedBuffer>& buffers,
                      const std::map<std::string, Tensor>& optimizer_state);

struct LoadOptions {
  bool force = false;  // proceed despite a config-hash mismatch
  std::string expected_config_hash;
};

// Reads the manifest only (to reconstruct models before loading tensors).
ManifestInfo read_manifest(const std::filesystem::path& dir);

// Loads tensors into existing params/buffers. Shape or size mismatches and
// truncated files abort with the offending parameter named; a config-hash
// mismatch against `expected_config_hash` warns and throws unless `force`.
void load_checkpoint_into(const std::filesystem::path& dir,
                          const std::vector<NamedParam>& params,
                          const std::vector<NamedBuffer>& buffers,
                          std::map<std::string, Tensor>* optimizer_state,
                          const LoadOptions& options = {});

}  // namespace davr::train
