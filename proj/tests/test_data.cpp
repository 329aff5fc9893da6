#include "davr/data.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "oracles.hpp"

using namespace davr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("davr_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_dummy_png(const fs::path& p, uint8_t value) {
  ImageU8 img;
  img.width = 8;
  img.height = 8;
  img.pixels.assign(8 * 8 * 3, value);
  write_png(p, img);
}

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("flat layout parses veri-style names and id directories") {
  TempDir tmp("flat");
  write_dummy_png(tmp.path / "0001_c002_000100_0.png", 10);
  write_dummy_png(tmp.path / "0001_c002_000200_0.png", 20);
  write_dummy_png(tmp.path / "0001_c003_000300_0.png", 30);

  DatasetIndex index = load_dataset_index(tmp.path, Layout::flat);
  CHECK(index.records.size() == 3);
  CHECK(index.num_identities == 1);
  CHECK(index.records[0].camera_id == 2);
  CHECK(index.skipped == 0);

  SUBCASE("id-per-directory trees work too") {
    fs::create_directories(tmp.path / "7");
    write_dummy_png(tmp.path / "7" / "0.png", 40);
    write_dummy_png(tmp.path / "7" / "1.png", 50);
    DatasetIndex tree = load_dataset_index(tmp.path, Layout::flat);
    CHECK(tree.records.size() == 5);
    CHECK(tree.num_identities == 2);
  }
}

TEST_CASE("empty directory yields an empty index") {
  TempDir tmp("empty");
  DatasetIndex index = load_dataset_index(tmp.path, Layout::veri776);
  CHECK(index.records.empty());
  CHECK(index.num_identities == 0);
}

TEST_CASE("missing root is a fatal error, stray files are skipped with a count") {
  CHECK_THROWS(load_dataset_index("/nonexistent/path/davr", Layout::flat));

  TempDir tmp("skip");
  write_dummy_png(tmp.path / "0004_c001_000100_0.png", 10);
  write_dummy_png(tmp.path / "README_banner.png", 10);  // unparseable name
  DatasetIndex index = load_dataset_index(tmp.path, Layout::flat);
  CHECK(index.records.size() == 1);
  CHECK(index.skipped == 1);
}

TEST_CASE("vehicle ids are remapped densely") {
  TempDir tmp("dense");
  write_dummy_png(tmp.path / "0500_c001_000100_0.png", 10);
  write_dummy_png(tmp.path / "0007_c001_000100_0.png", 10);
  write_dummy_png(tmp.path / "0500_c002_000100_0.png", 10);
  DatasetIndex index = load_dataset_index(tmp.path, Layout::veri776);
  CHECK(index.num_identities == 2);
  std::set<int> ids;
  for (const auto& r : index.records) ids.insert(r.vehicle_id);
  CHECK(ids == std::set<int>{0, 1});

  // per-identity counts partition the records
  auto by_id = index.records_by_identity();
  size_t total = 0;
  for (const auto& v : by_id) total += v.size();
  CHECK(total == index.records.size());
}

TEST_CASE("vehicleid layout reads split lists") {
  TempDir tmp("vid");
  fs::create_directories(tmp.path / "image");
  fs::create_directories(tmp.path / "train_test_split");
  write_dummy_png(tmp.path / "image" / "aaa.jpg", 10);  // png content, jpg name
  CHECK_THROWS(load_dataset_index(tmp.path, Layout::vehicleid));  // list required

  {
    std::ofstream list(tmp.path / "train_test_split" / "train_list.txt");
    list << "aaa 42\nmissing 43\n";
  }
  DatasetIndex index =
      load_dataset_index(tmp.path, Layout::vehicleid, "train_test_split/train_list.txt");
  CHECK(index.records.size() == 1);
  CHECK(index.num_identities == 1);
  CHECK(index.skipped == 1);  // listed but absent on disk
}

TEST_CASE("index JSON round-trips") {
  TempDir tmp("json");
  DatasetIndex index;
  index.split = Split::query;
  index.num_identities = 2;
  index.records = {{"a.png", 0, 1, Domain::source}, {"b.png", 1, 2, Domain::target}};
  save_index_json(index, tmp.path / "index.json");
  DatasetIndex back = load_index_json(tmp.path / "index.json");
  CHECK(back.split == Split::query);
  CHECK(back.num_identities == 2);
  REQUIRE(back.records.size() == 2);
  CHECK(back.records[1].image_path == "b.png");
  CHECK(back.records[1].vehicle_id == 1);
  CHECK(back.records[1].domain == Domain::target);
}

TEST_CASE("synthetic generation counts, determinism, brightness gap") {
  TempDir tmp("synth");
  SyntheticSpec spec;
  spec.num_identities = 20;
  spec.images_per_id = 8;
  spec.image_size = 32;
  spec.seed = 7;

  auto [source, target] = generate_synthetic_domains(spec, tmp.path / "a");
  CHECK(source.records.size() == 160);
  CHECK(target.records.size() == 160);
  CHECK(source.num_identities == 20);

  SUBCASE("same spec and seed produce byte-identical trees") {
    auto [s2, t2] = generate_synthetic_domains(spec, tmp.path / "b");
    REQUIRE(s2.records.size() == source.records.size());
    for (size_t i = 0; i < source.records.size(); ++i)
      CHECK(slurp(source.records[i].image_path) == slurp(s2.records[i].image_path));
    for (size_t i = 0; i < target.records.size(); ++i)
      CHECK(slurp(target.records[i].image_path) == slurp(t2.records[i].image_path));
  }

  SUBCASE("per-domain mean brightness differs by at least 0.3") {
    double mean_s = 0, mean_t = 0;
    for (const auto& r : source.records) mean_s += read_image(r.image_path).mean_brightness();
    for (const auto& r : target.records) mean_t += read_image(r.image_path).mean_brightness();
    mean_s /= static_cast<double>(source.records.size());
    mean_t /= static_cast<double>(target.records.size());
    CHECK(mean_s - mean_t >= 0.3);  // offsets are +0.2 / -0.2
  }

  SUBCASE("records are loadable through the flat layout") {
    DatasetIndex loaded = load_dataset_index(tmp.path / "a" / "source", Layout::flat);
    CHECK(loaded.records.size() == 160);
    CHECK(loaded.num_identities == 20);
  }

  SUBCASE("invalid specs are rejected") {
    SyntheticSpec bad = spec;
    bad.image_size = 30;  // not divisible by 4
    CHECK_THROWS(generate_synthetic_domains(bad, tmp.path / "c"));
    bad = spec;
    bad.num_identities = 1;
    CHECK_THROWS(generate_synthetic_domains(bad, tmp.path / "d"));
  }
}

TEST_CASE("pair sampler ratios, flags and determinism") {
  TempDir tmp("pairs");
  SyntheticSpec spec;
  spec.num_identities = 6;
  spec.images_per_id = 4;
  spec.image_size = 16;
  spec.seed = 3;
  auto [index, unused] = generate_synthetic_domains(spec, tmp.path);

  SUBCASE("half positive ratio gives an 8/8 split") {
    PairBatch pair = sample_verification_pairs(index, 16, 0.5, 99);
    int pos = 0;
    for (size_t i = 0; i < pair.same_flags.size(); ++i) {
      pos += pair.same_flags[i];
      CHECK(pair.same_flags[i] == (pair.ids_a[i] == pair.ids_b[i] ? 1 : 0));
    }
    CHECK(pos == 8);
    // positives pair distinct images of one identity
    for (size_t i = 0; i < pair.same_flags.size(); ++i)
      if (pair.same_flags[i]) CHECK(pair.indices_a[i] != pair.indices_b[i]);
  }

  SUBCASE("zero ratio gives all negatives") {
    PairBatch pair = sample_verification_pairs(index, 16, 0.0, 99);
    for (int flag : pair.same_flags) CHECK(flag == 0);
  }

  SUBCASE("fixed seed reproduces the id sequences") {
    PairBatch p1 = sample_verification_pairs(index, 16, 0.5, 1234);
    PairBatch p2 = sample_verification_pairs(index, 16, 0.5, 1234);
    CHECK(p1.ids_a == p2.ids_a);
    CHECK(p1.ids_b == p2.ids_b);
    CHECK(p1.indices_a == p2.indices_a);
  }

  SUBCASE("empirical positive fraction tracks pos_ratio within 2%") {
    double pos = 0, total = 0;
    for (int b = 0; b < 1000; ++b) {
      PairBatch pair = sample_verification_pairs(index, 10, 0.3, static_cast<uint64_t>(b));
      for (int flag : pair.same_flags) {
        pos += flag;
        total += 1;
      }
    }
    CHECK(pos / total == doctest::Approx(0.3).epsilon(0.02));
  }

  SUBCASE("positive pairs impossible without multi-image identities") {
    DatasetIndex singles;
    singles.num_identities = 3;
    singles.records = {{"x.png", 0, 0, Domain::source},
                       {"y.png", 1, 0, Domain::source},
                       {"z.png", 2, 0, Domain::source}};
    CHECK_THROWS(sample_verification_pairs(singles, 4, 0.5, 1));
    CHECK_NOTHROW(sample_verification_pairs(singles, 4, 0.0, 1));
  }
}

TEST_CASE("image batches resize and normalize to [-1,1]") {
  TempDir tmp("batch");
  write_dummy_png(tmp.path / "black.png", 0);
  write_dummy_png(tmp.path / "white.png", 255);

  std::vector<DatasetRecord> recs = {{(tmp.path / "black.png").string(), 0, 0, Domain::source},
                                     {(tmp.path / "white.png").string(), 0, 0, Domain::source}};
  Tensor batch = load_image_batch(recs, 16);
  CHECK(batch.shape() == std::vector<int64_t>{2, 3, 16, 16});
  for (int64_t c = 0; c < 3; ++c) {
    CHECK(batch.at4(0, c, 0, 0) == doctest::Approx(-1.0));
    CHECK(batch.at4(1, c, 0, 0) == doctest::Approx(1.0));
  }

  SUBCASE("corrupt file errors name the path") {
    std::ofstream bad(tmp.path / "bad.png");
    bad << "not a png";
    bad.close();
    std::vector<DatasetRecord> broken = {{(tmp.path / "bad.png").string(), 0, 0, Domain::source}};
    CHECK_THROWS_WITH(load_image_batch(broken, 16), doctest::Contains("bad.png"));
  }
}

TEST_CASE("normalization round-trip stays within 1/255") {
  Rng rng(5);
  ImageU8 img;
  img.width = 8;
  img.height = 8;
  img.pixels.resize(8 * 8 * 3);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));

  Tensor t = images_to_tensor({img});
  ImageU8 back = tensor_to_image(t, 0);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    CHECK(std::abs(static_cast<int>(img.pixels[i]) - static_cast<int>(back.pixels[i])) <= 1);
}
