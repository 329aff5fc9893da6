#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "davr/image.hpp"
#include "davr/tensor.hpp"

namespace davr {

enum class Domain { source, target };
enum class Split { train, query, gallery };
enum class Layout { veri776, vehicleid, flat };

const char* to_string(Domain d);
const char* to_string(Split s);
Layout layout_from_string(const std::string& s);
const char* to_string(Layout l);

struct DatasetRecord {
  std::string image_path;
  int vehicle_id = 0;  // dense within a split after remapping
  int camera_id = 0;   // 0 when unknown
  Domain domain = Domain::source;
};

struct DatasetIndex {
  std::vector<DatasetRecord> records;
  Split split = Split::train;
  int num_identities = 0;
  int skipped = 0;  // files present but unparseable, warned not dropped silently

  std::vector<std::vector<int>> records_by_identity() const;
};

// Scans `root` for images and builds a dense-id index.
//  veri776:   flat directory of `<id>_c<cam>_<time>_<n>.jpg` files
//  vehicleid: `image/<name>.jpg` plus a split list file of "<name> <id>" lines
//             (list_file, relative to root or absolute, is required)
//  flat:      `<id>_c<cam>_*.png|jpg` files, or `<id>/<n>.png` subdirectories
DatasetIndex load_dataset_index(const std::filesystem::path& root, Layout layout,
                                const std::string& list_file = "",
                                Domain domain = Domain::source);

void save_index_json(const DatasetIndex& index, const std::filesystem::path& path);
DatasetIndex load_index_json(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// synthetic two-domain corpus
// ---------------------------------------------------------------------------

struct SyntheticStyle {
  double brightness_offset = 0.0;  // in [-0.5, 0.5]
  double blur_radius = 0.0;
  std::vector<std::array<double, 3>> background_palette;
};

struct SyntheticSpec {
  int num_identities = 20;
  int images_per_id = 8;
  int image_size = 64;  // divisible by 4
  SyntheticStyle source_style{+0.2, 0.0, {}};
  SyntheticStyle target_style{-0.2, 1.5, {}};
  uint64_t seed = 1;
};

// Renders every identity under both domain styles, writing
// `<out_root>/<domain>/<id>/<n>.png` plus an index JSON per domain.
// Identical (spec, seed) produce byte-identical trees.
std::pair<DatasetIndex, DatasetIndex> generate_synthetic_domains(
    const SyntheticSpec& spec, const std::filesystem::path& out_root);

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

struct PairBatch {
  std::vector<int> indices_a, indices_b;  // positions into DatasetIndex.records
  std::vector<int> ids_a, ids_b;
  std::vector<int> same_flags;  // 1 iff ids match
  Tensor images_a, images_b;    // filled by load_pair_images
};

// Seeded, pure sampler: n_pos = round(batch * pos_ratio) positive pairs, rest
// negative. Does not read pixels.
PairBatch sample_verification_pairs(const DatasetIndex& index, int batch, double pos_ratio,
                                    uint64_t seed);

// Loads, resizes to size x size and scales to [-1,1]; preserves record order.
Tensor load_image_batch(const std::vector<DatasetRecord>& records, int size);

void load_pair_images(const DatasetIndex& index, PairBatch& pair, int size);

}  // namespace davr
