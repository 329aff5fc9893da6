#include "davr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "davr/rng.hpp"
#include "json.hpp"

namespace davr::metrics {

using nlohmann::json;

DistanceMetric metric_from_string(const std::string& s) {
  if (s == "cosine") return DistanceMetric::cosine;
  if (s == "euclidean") return DistanceMetric::euclidean;
  throw std::runtime_error("unknown distance metric '" + s + "' (cosine|euclidean)");
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "veri_cross_camera") return Protocol::veri_cross_camera;
  if (s == "vehicleid_random_gallery") return Protocol::vehicleid_random_gallery;
  if (s == "plain") return Protocol::plain;
  throw std::runtime_error("unknown protocol '" + s +
                           "' (veri_cross_camera|vehicleid_random_gallery|plain)");
}

const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::veri_cross_camera: return "veri_cross_camera";
    case Protocol::vehicleid_random_gallery: return "vehicleid_random_gallery";
    case Protocol::plain: return "plain";
  }
  return "?";
}

Tensor pairwise_distance(const Tensor& queries, const Tensor& gallery, DistanceMetric metric) {
  if (queries.ndim() != 2 || gallery.ndim() != 2 || queries.dim(1) != gallery.dim(1))
    throw std::invalid_argument("pairwise_distance: embeddings must be [N,D] with equal D");
  int64_t nq = queries.dim(0), ng = gallery.dim(0), d = queries.dim(1);
  Tensor out({nq, ng});
  if (metric == DistanceMetric::cosine) {
    std::vector<double> qnorm(static_cast<size_t>(nq)), gnorm(static_cast<size_t>(ng));
    for (int64_t i = 0; i < nq; ++i) {
      double s = 0;
      for (int64_t k = 0; k < d; ++k) s += queries.at2(i, k) * queries.at2(i, k);
      qnorm[static_cast<size_t>(i)] = std::sqrt(s);
    }
    for (int64_t j = 0; j < ng; ++j) {
      double s = 0;
      for (int64_t k = 0; k < d; ++k) s += gallery.at2(j, k) * gallery.at2(j, k);
      gnorm[static_cast<size_t>(j)] = std::sqrt(s);
    }
    for (int64_t i = 0; i < nq; ++i)
      for (int64_t j = 0; j < ng; ++j) {
        double dot = 0;
        for (int64_t k = 0; k < d; ++k) dot += queries.at2(i, k) * gallery.at2(j, k);
        double denom = qnorm[static_cast<size_t>(i)] * gnorm[static_cast<size_t>(j)];
        out.at2(i, j) = denom > 0 ? 1.0 - dot / denom : 1.0;
      }
  } else {
    for (int64_t i = 0; i < nq; ++i)
      for (int64_t j = 0; j < ng; ++j) {
        double s = 0;
        for (int64_t k = 0; k < d; ++k) {
          double diff = queries.at2(i, k) - gallery.at2(j, k);
          s += diff * diff;
        }
        out.at2(i, j) = std::sqrt(s);
      }
  }
  return out;
}

double average_precision(const std::vector<int>& ranked_relevance) {
  int relevant = 0;
  double ap = 0.0;
  for (size_t k = 0; k < ranked_relevance.size(); ++k) {
    if (ranked_relevance[k]) {
      ++relevant;
      ap += static_cast<double>(relevant) / static_cast<double>(k + 1);
    }
  }
  if (relevant == 0)
    throw std::invalid_argument("average_precision: no relevant items in ranking");
  return ap / relevant;
}

std::string EvalReport::to_json() const {
  json j;
  j["mAP"] = mAP;
  j["cmc"] = cmc;
  j["num_queries"] = num_queries;
  j["num_gallery"] = num_gallery;
  j["num_skipped"] = num_skipped;
  j["protocol"] = metrics::to_string(protocol);
  return j.dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
  json j = json::parse(text);
  EvalReport r;
  r.mAP = j.at("mAP").get<double>();
  r.cmc = j.at("cmc").get<std::vector<double>>();
  r.num_queries = j.at("num_queries").get<int>();
  r.num_gallery = j.at("num_gallery").get<int>();
  r.num_skipped = j.value("num_skipped", 0);
  r.protocol = protocol_from_string(j.at("protocol").get<std::string>());
  return r;
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write CMC csv: " + path.string());
  out << "rank,match_rate\n";
  for (size_t k = 0; k < cmc.size(); ++k) out << (k + 1) << "," << cmc[k] << "\n";
}

EvalReport evaluate(const DatasetIndex& query_index, const DatasetIndex& gallery_index,
                    const Tensor& query_emb, const Tensor& gallery_emb, Protocol protocol,
                    int max_rank, DistanceMetric metric) {
  int64_t nq = static_cast<int64_t>(query_index.records.size());
  int64_t ng = static_cast<int64_t>(gallery_index.records.size());
  if (query_emb.dim(0) != nq || gallery_emb.dim(0) != ng)
    throw std::invalid_argument("evaluate: embeddings not aligned with indexes");

  Tensor dist = pairwise_distance(query_emb, gallery_emb, metric);
  int k_max = std::min<int>(max_rank, static_cast<int>(ng));

  EvalReport report;
  report.protocol = protocol;
  report.num_gallery = static_cast<int>(ng);
  report.cmc.assign(static_cast<size_t>(k_max), 0.0);

  double ap_sum = 0.0;
  int scored = 0;

  std::vector<int> order(static_cast<size_t>(ng));
  for (int64_t qi = 0; qi < nq; ++qi) {
    const DatasetRecord& q = query_index.records[static_cast<size_t>(qi)];

    std::iota(order.begin(), order.end(), 0);
    // stable ascending-by-distance ranking, ties by gallery index
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return dist.at2(qi, a) < dist.at2(qi, b);
    });

    std::vector<int> relevance;
    relevance.reserve(static_cast<size_t>(ng));
    int first_hit = -1;
    bool any_relevant = false;
    for (int gi : order) {
      const DatasetRecord& g = gallery_index.records[static_cast<size_t>(gi)];
      if (protocol == Protocol::veri_cross_camera && g.vehicle_id == q.vehicle_id &&
          g.camera_id == q.camera_id)
        continue;  // junk: same identity seen by the same camera
      int rel = g.vehicle_id == q.vehicle_id ? 1 : 0;
      if (rel && first_hit < 0) first_hit = static_cast<int>(relevance.size());
      any_relevant = any_relevant || rel;
      relevance.push_back(rel);
    }

    if (!any_relevant) {
      report.num_skipped++;
      continue;
    }
    ap_sum += average_precision(relevance);
    ++scored;
    if (first_hit < k_max)
      for (int k = first_hit; k < k_max; ++k) report.cmc[static_cast<size_t>(k)] += 1.0;
  }

  report.num_queries = scored;
  if (scored > 0) {
    report.mAP = ap_sum / scored;
    for (double& v : report.cmc) v /= scored;
  }
  return report;
}

GallerySplit sample_vehicleid_gallery(const DatasetIndex& test_index, int test_size,
                                      uint64_t seed, int trial) {
  if (test_index.num_identities < test_size)
    throw std::runtime_error("vehicleid eval: index has " +
                             std::to_string(test_index.num_identities) +
                             " identities, need at least " + std::to_string(test_size));
  Rng rng = Rng(seed).fork(static_cast<uint64_t>(trial) + 1);
  auto by_id = test_index.records_by_identity();

  std::vector<int> ids(static_cast<size_t>(test_index.num_identities));
  std::iota(ids.begin(), ids.end(), 0);
  // Fisher-Yates prefix shuffle to select test_size identities
  for (int i = 0; i < test_size; ++i) {
    int64_t j = rng.uniform_int(i, static_cast<int64_t>(ids.size()) - 1);
    std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
  }

  GallerySplit split;
  for (int i = 0; i < test_size; ++i) {
    const auto& recs = by_id[static_cast<size_t>(ids[static_cast<size_t>(i)])];
    int64_t pick = rng.uniform_int(0, static_cast<int64_t>(recs.size()) - 1);
    split.gallery_records.push_back(recs[static_cast<size_t>(pick)]);
    for (size_t r = 0; r < recs.size(); ++r)
      if (static_cast<int64_t>(r) != pick) split.probe_records.push_back(recs[r]);
  }
  std::sort(split.probe_records.begin(), split.probe_records.end());
  return split;
}

namespace {

DatasetIndex subset_index(const DatasetIndex& full, const std::vector<int>& records,
                          Split split) {
  DatasetIndex out;
  out.split = split;
  out.num_identities = full.num_identities;
  for (int r : records) out.records.push_back(full.records[static_cast<size_t>(r)]);
  return out;
}

Tensor subset_rows(const Tensor& emb, const std::vector<int>& rows) {
  Tensor out({static_cast<int64_t>(rows.size()), emb.dim(1)});
  for (size_t i = 0; i < rows.size(); ++i)
    for (int64_t j = 0; j < emb.dim(1); ++j)
      out.at2(static_cast<int64_t>(i), j) = emb.at2(rows[i], j);
  return out;
}

}  // namespace

EvalReport vehicleid_multi_trial_eval(const DatasetIndex& test_index, const Tensor& embeddings,
                                      int test_size, int trials, uint64_t seed, int max_rank,
                                      DistanceMetric metric) {
  if (embeddings.dim(0) != static_cast<int64_t>(test_index.records.size()))
    throw std::invalid_argument("vehicleid eval: embeddings not aligned with index");
  if (trials < 1) throw std::invalid_argument("vehicleid eval: trials must be >= 1");

  EvalReport mean;
  mean.protocol = Protocol::vehicleid_random_gallery;
  int k_max = std::min(max_rank, test_size);
  mean.cmc.assign(static_cast<size_t>(k_max), 0.0);

  for (int t = 0; t < trials; ++t) {
    GallerySplit split = sample_vehicleid_gallery(test_index, test_size, seed, t);
    DatasetIndex gi = subset_index(test_index, split.gallery_records, Split::gallery);
    DatasetIndex qi = subset_index(test_index, split.probe_records, Split::query);
    EvalReport r = evaluate(qi, gi, subset_rows(embeddings, split.probe_records),
                            subset_rows(embeddings, split.gallery_records), Protocol::plain,
                            k_max, metric);
    mean.mAP += r.mAP;
    for (int k = 0; k < k_max; ++k) mean.cmc[static_cast<size_t>(k)] += r.cmc[static_cast<size_t>(k)];
    mean.num_queries += r.num_queries;
    mean.num_skipped += r.num_skipped;
    mean.num_gallery = r.num_gallery;
  }
  mean.mAP /= trials;
  for (double& v : mean.cmc) v /= trials;
  mean.num_queries /= trials;
  return mean;
}

void export_embeddings(const Tensor& embeddings, const DatasetIndex& index,
                       const std::filesystem::path& bin_path,
                       const std::filesystem::path& sidecar_path) {
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write embeddings: " + bin_path.string());
  for (int64_t i = 0; i < embeddings.numel(); ++i) {
    float v = static_cast<float>(embeddings[i]);
    bin.write(reinterpret_cast<const char*>(&v), sizeof(float));
  }
  json j;
  j["rows"] = embeddings.dim(0);
  j["cols"] = embeddings.dim(1);
  j["dtype"] = "f32le";
  json recs = json::array();
  for (const DatasetRecord& r : index.records)
    recs.push_back({{"path", r.image_path},
                    {"vehicle_id", r.vehicle_id},
                    {"camera_id", r.camera_id},
                    {"domain", davr::to_string(r.domain)}});
  j["records"] = std::move(recs);
  std::ofstream side(sidecar_path);
  if (!side) throw std::runtime_error("cannot write sidecar: " + sidecar_path.string());
  side << j.dump(2) << "\n";
}

Tensor import_embeddings(const std::filesystem::path& bin_path,
                         const std::filesystem::path& sidecar_path) {
  std::ifstream side(sidecar_path);
  if (!side) throw std::runtime_error("cannot read sidecar: " + sidecar_path.string());
  json j = json::parse(side);
  int64_t rows = j.at("rows").get<int64_t>();
  int64_t cols = j.at("cols").get<int64_t>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read embeddings: " + bin_path.string());
  Tensor out({rows, cols});
  for (int64_t i = 0; i < out.numel(); ++i) {
    float v;
    bin.read(reinterpret_cast<char*>(&v), sizeof(float));
    if (!bin) throw std::runtime_error("embedding file truncated: " + bin_path.string());
    out[i] = static_cast<double>(v);
  }
  return out;
}

}  // namespace davr::metrics
