#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "davr/data.hpp"
#include "davr/tensor.hpp"

namespace davr::metrics {

enum class DistanceMetric { cosine, euclidean };
enum class Protocol { veri_cross_camera, vehicleid_random_gallery, plain };

DistanceMetric metric_from_string(const std::string& s);
Protocol protocol_from_string(const std::string& s);
const char* to_string(Protocol p);

// D[i][j] between query row i and gallery row j. Cosine distance is
// 1 - cos(q, g), in [0, 2].
Tensor pairwise_distance(const Tensor& queries, const Tensor& gallery, DistanceMetric metric);

// AP = (1/R) * sum over relevant ranks k of precision@k. Requires at least
// one relevant entry.
double average_precision(const std::vector<int>& ranked_relevance);

struct EvalReport {
  double mAP = 0.0;
  std::vector<double> cmc;  // cmc[k-1] = rank-k match rate
  int num_queries = 0;      // queries actually scored
  int num_gallery = 0;
  int num_skipped = 0;  // queries without any valid match, excluded + counted
  Protocol protocol = Protocol::plain;

  std::string to_json() const;
  void write_csv(const std::filesystem::path& path) const;
};
EvalReport eval_report_from_json(const std::string& text);

// Ranks gallery per query by distance (ties broken by gallery order). Under
// veri_cross_camera, gallery entries sharing the query's vehicle and camera
// id are excluded from that query's ranking.
EvalReport evaluate(const DatasetIndex& query_index, const DatasetIndex& gallery_index,
                    const Tensor& query_emb, const Tensor& gallery_emb, Protocol protocol,
                    int max_rank = 50, DistanceMetric metric = DistanceMetric::cosine);

// VehicleID protocol: per trial, sample `test_size` identities (seeded), one
// gallery image each, remaining images probe; report means over trials.
EvalReport vehicleid_multi_trial_eval(const DatasetIndex& test_index, const Tensor& embeddings,
                                      int test_size, int trials, uint64_t seed, int max_rank = 50,
                                      DistanceMetric metric = DistanceMetric::cosine);

// The seeded per-trial split, exposed so single trials can be reproduced.
struct GallerySplit {
  std::vector<int> gallery_records;  // one per sampled identity
  std::vector<int> probe_records;
};
GallerySplit sample_vehicleid_gallery(const DatasetIndex& test_index, int test_size,
                                      uint64_t seed, int trial);

// ---------------------------------------------------------------------------
// embedding export (binary f32 matrix + JSON sidecar with the record order)
// ---------------------------------------------------------------------------

void export_embeddings(const Tensor& embeddings, const DatasetIndex& index,
                       const std::filesystem::path& bin_path,
                       const std::filesystem::path& sidecar_path);
Tensor import_embeddings(const std::filesystem::path& bin_path,
                         const std::filesystem::path& sidecar_path);

}  // namespace davr::metrics
