#include "davr/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>

#include "davr/rng.hpp"
#include "json.hpp"

namespace davr {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "?";
}

Layout layout_from_string(const std::string& s) {
  if (s == "veri776") return Layout::veri776;
  if (s == "vehicleid") return Layout::vehicleid;
  if (s == "flat") return Layout::flat;
  throw std::runtime_error("unknown dataset layout '" + s + "' (veri776|vehicleid|flat)");
}

const char* to_string(Layout l) {
  switch (l) {
    case Layout::veri776: return "veri776";
    case Layout::vehicleid: return "vehicleid";
    case Layout::flat: return "flat";
  }
  return "?";
}

std::vector<std::vector<int>> DatasetIndex::records_by_identity() const {
  std::vector<std::vector<int>> by_id(static_cast<size_t>(num_identities));
  for (size_t i = 0; i < records.size(); ++i)
    by_id[static_cast<size_t>(records[i].vehicle_id)].push_back(static_cast<int>(i));
  return by_id;
}

namespace {

// Parses "<id>_c<cam>..." from a VeRi-style filename stem; nullopt if malformed.
std::optional<std::pair<int, int>> parse_veri_name(const std::string& stem) {
  size_t us = stem.find('_');
  if (us == std::string::npos || us == 0) return std::nullopt;
  for (size_t i = 0; i < us; ++i)
    if (!std::isdigit(static_cast<unsigned char>(stem[i]))) return std::nullopt;
  if (us + 1 >= stem.size() || stem[us + 1] != 'c') return std::nullopt;
  size_t cam_begin = us + 2;
  size_t cam_end = cam_begin;
  while (cam_end < stem.size() && std::isdigit(static_cast<unsigned char>(stem[cam_end])))
    ++cam_end;
  if (cam_end == cam_begin) return std::nullopt;
  int id = std::stoi(stem.substr(0, us));
  int cam = std::stoi(stem.substr(cam_begin, cam_end - cam_begin));
  return std::make_pair(id, cam);
}

bool is_all_digits(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isdigit(c) != 0; });
}

std::vector<fs::path> sorted_image_files(const fs::path& root, bool recursive) {
  std::vector<fs::path> files;
  if (recursive) {
    for (const auto& entry : fs::recursive_directory_iterator(root))
      if (entry.is_regular_file() && is_supported_image(entry.path())) files.push_back(entry.path());
  } else {
    for (const auto& entry : fs::directory_iterator(root))
      if (entry.is_regular_file() && is_supported_image(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());  // directory order is not portable
  return files;
}

// Remaps raw vehicle ids to a dense 0..K-1 range, ordered by raw id.
void densify_ids(std::vector<std::pair<int, DatasetRecord>>& raw, DatasetIndex& out) {
  std::map<int, int> remap;
  for (const auto& [raw_id, rec] : raw) remap.emplace(raw_id, 0);
  int next = 0;
  for (auto& [raw_id, dense] : remap) dense = next++;
  out.records.reserve(raw.size());
  for (auto& [raw_id, rec] : raw) {
    rec.vehicle_id = remap[raw_id];
    out.records.push_back(std::move(rec));
  }
  out.num_identities = next;
}

}  // namespace

DatasetIndex load_dataset_index(const fs::path& root, Layout layout, const std::string& list_file,
                                Domain domain) {
  if (!fs::exists(root))
    throw std::runtime_error("dataset root does not exist: " + root.string());

  DatasetIndex index;
  std::vector<std::pair<int, DatasetRecord>> raw;

  auto warn_skip = [&](const fs::path& p, const char* why) {
    std::cerr << "warning: skipping '" << p.string() << "': " << why << "\n";
    index.skipped++;
  };

  if (layout == Layout::veri776) {
    for (const fs::path& p : sorted_image_files(root, false)) {
      auto parsed = parse_veri_name(p.stem().string());
      if (!parsed) {
        warn_skip(p, "filename does not match <id>_c<cam>_...");
        continue;
      }
      raw.push_back({parsed->first, {p.string(), 0, parsed->second, domain}});
    }
  } else if (layout == Layout::vehicleid) {
    if (list_file.empty())
      throw std::runtime_error("vehicleid layout requires a split list file (e.g. "
                               "train_test_split/train_list.txt)");
    fs::path list_path = fs::path(list_file).is_absolute() ? fs::path(list_file)
                                                           : root / list_file;
    std::ifstream in(list_path);
    if (!in) throw std::runtime_error("cannot open VehicleID list file: " + list_path.string());
    std::string name;
    int id;
    while (in >> name >> id) {
      fs::path img = root / "image" / (name + ".jpg");
      if (!fs::exists(img)) {
        warn_skip(img, "listed image missing on disk");
        continue;
      }
      raw.push_back({id, {img.string(), 0, 0, domain}});
    }
  } else {  // flat
    for (const fs::path& p : sorted_image_files(root, true)) {
      std::string parent = p.parent_path().filename().string();
      if (p.parent_path() != root && is_all_digits(parent)) {
        // id-per-directory tree, e.g. synthetic output <id>/<n>.png
        auto parsed = parse_veri_name(p.stem().string());
        int cam = parsed ? parsed->second : 0;
        raw.push_back({std::stoi(parent), {p.string(), 0, cam, domain}});
      } else if (auto parsed = parse_veri_name(p.stem().string())) {
        raw.push_back({parsed->first, {p.string(), 0, parsed->second, domain}});
      } else {
        warn_skip(p, "cannot derive a vehicle id from path");
      }
    }
  }

  densify_ids(raw, index);
  if (index.skipped > 0)
    std::cerr << "warning: " << index.skipped << " file(s) skipped while indexing "
              << root.string() << "\n";
  return index;
}

void save_index_json(const DatasetIndex& index, const fs::path& path) {
  json j;
  j["split"] = to_string(index.split);
  j["num_identities"] = index.num_identities;
  json recs = json::array();
  for (const DatasetRecord& r : index.records) {
    recs.push_back({{"path", r.image_path},
                    {"vehicle_id", r.vehicle_id},
                    {"camera_id", r.camera_id},
                    {"domain", to_string(r.domain)}});
  }
  j["records"] = std::move(recs);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write index JSON: " + path.string());
  out << j.dump(2) << "\n";
}

DatasetIndex load_index_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read index JSON: " + path.string());
  json j = json::parse(in);
  DatasetIndex index;
  std::string split = j.value("split", "train");
  index.split = split == "query" ? Split::query
               : split == "gallery" ? Split::gallery
                                    : Split::train;
  index.num_identities = j.at("num_identities").get<int>();
  for (const json& r : j.at("records")) {
    DatasetRecord rec;
    rec.image_path = r.at("path").get<std::string>();
    rec.vehicle_id = r.at("vehicle_id").get<int>();
    rec.camera_id = r.at("camera_id").get<int>();
    rec.domain = r.at("domain").get<std::string>() == "target" ? Domain::target : Domain::source;
    index.records.push_back(std::move(rec));
  }
  return index;
}

PairBatch sample_verification_pairs(const DatasetIndex& index, int batch, double pos_ratio,
                                    uint64_t seed) {
  if (index.num_identities < 2)
    throw std::runtime_error("pair sampling needs at least 2 identities, have " +
                             std::to_string(index.num_identities));
  auto by_id = index.records_by_identity();
  std::vector<int> multi_image_ids;
  for (int id = 0; id < index.num_identities; ++id)
    if (by_id[static_cast<size_t>(id)].size() >= 2) multi_image_ids.push_back(id);

  int n_pos = static_cast<int>(std::lround(pos_ratio * batch));
  if (n_pos > 0 && multi_image_ids.empty())
    throw std::runtime_error("pos_ratio > 0 but no identity has 2 or more images");

  Rng rng(seed);
  PairBatch out;
  auto push = [&](int ia, int ib) {
    out.indices_a.push_back(ia);
    out.indices_b.push_back(ib);
    int id_a = index.records[static_cast<size_t>(ia)].vehicle_id;
    int id_b = index.records[static_cast<size_t>(ib)].vehicle_id;
    out.ids_a.push_back(id_a);
    out.ids_b.push_back(id_b);
    out.same_flags.push_back(id_a == id_b ? 1 : 0);
  };

  for (int i = 0; i < n_pos; ++i) {
    int id = multi_image_ids[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(multi_image_ids.size()) - 1))];
    const auto& recs = by_id[static_cast<size_t>(id)];
    int64_t a = rng.uniform_int(0, static_cast<int64_t>(recs.size()) - 1);
    int64_t b = rng.uniform_int(0, static_cast<int64_t>(recs.size()) - 2);
    if (b >= a) ++b;  // distinct images of the same id
    push(recs[static_cast<size_t>(a)], recs[static_cast<size_t>(b)]);
  }
  for (int i = n_pos; i < batch; ++i) {
    int64_t id_a = rng.uniform_int(0, index.num_identities - 1);
    int64_t id_b = rng.uniform_int(0, index.num_identities - 2);
    if (id_b >= id_a) ++id_b;
    const auto& ra = by_id[static_cast<size_t>(id_a)];
    const auto& rb = by_id[static_cast<size_t>(id_b)];
    push(ra[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(ra.size()) - 1))],
         rb[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(rb.size()) - 1))]);
  }
  return out;
}

Tensor load_image_batch(const std::vector<DatasetRecord>& records, int size) {
  std::vector<ImageU8> images;
  images.reserve(records.size());
  for (const DatasetRecord& r : records)
    images.push_back(resize_bilinear(read_image(r.image_path), size, size));
  return images_to_tensor(images);
}

void load_pair_images(const DatasetIndex& index, PairBatch& pair, int size) {
  std::vector<DatasetRecord> recs_a, recs_b;
  for (int i : pair.indices_a) recs_a.push_back(index.records[static_cast<size_t>(i)]);
  for (int i : pair.indices_b) recs_b.push_back(index.records[static_cast<size_t>(i)]);
  pair.images_a = load_image_batch(recs_a, size);
  pair.images_b = load_image_batch(recs_b, size);
}

}  // namespace davr
