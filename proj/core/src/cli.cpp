#include "davr/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "davr/attnet.hpp"
#include "davr/metrics.hpp"
#include "davr/plot.hpp"
#include "davr/train.hpp"

namespace davr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// DAVR_DATA_ROOT prefixes relative dataset paths.
std::string resolve_root(const std::string& root) {
  if (root.empty() || fs::path(root).is_absolute() || fs::exists(root)) return root;
  if (const char* env = std::getenv("DAVR_DATA_ROOT")) return (fs::path(env) / root).string();
  return root;
}

train::TrainConfig load_effective_config(const std::string& config_path,
                                         const std::vector<std::string>& overrides,
                                         const std::string& out_dir, int64_t seed_override) {
  json j;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config file: " + config_path);
    j = json::parse(in);
    // Validate before applying overrides so typos in the file surface first.
    (void)train::config_from_json(j);
  } else {
    j = train::config_to_json(train::TrainConfig{});
  }
  for (const std::string& o : overrides) train::apply_override(j, o);
  train::TrainConfig cfg = train::config_from_json(j);
  if (!out_dir.empty()) cfg.checkpoint_dir = out_dir;
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  return cfg;
}

void echo_config(const json& j) { std::cout << "config: " << j.dump() << "\n"; }

DatasetIndex load_index_arg(const std::string& root, const std::string& layout,
                            const std::string& list, const std::string& index_json,
                            Domain domain) {
  if (!index_json.empty()) return load_index_json(index_json);
  if (root.empty())
    throw CLI::ValidationError("dataset", "either an index JSON or a dataset root is required");
  return load_dataset_index(resolve_root(root), layout_from_string(layout), list, domain);
}

DatasetIndex index_from_sidecar(const fs::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw std::runtime_error("cannot read sidecar: " + sidecar.string());
  json j = json::parse(in);
  DatasetIndex index;
  int max_id = -1;
  for (const json& r : j.at("records")) {
    DatasetRecord rec;
    rec.image_path = r.at("path").get<std::string>();
    rec.vehicle_id = r.at("vehicle_id").get<int>();
    rec.camera_id = r.at("camera_id").get<int>();
    rec.domain = r.at("domain").get<std::string>() == "target" ? Domain::target : Domain::source;
    max_id = std::max(max_id, rec.vehicle_id);
    index.records.push_back(std::move(rec));
  }
  index.num_identities = max_id + 1;
  return index;
}

void print_report(const metrics::EvalReport& report) {
  std::printf("mAP=%.4f\n", report.mAP);
  for (size_t k = 0; k < report.cmc.size(); ++k) {
    size_t rank = k + 1;
    if (rank == 1 || rank == 5 || rank == 10 || rank == 20 || rank == report.cmc.size())
      std::printf("rank%zu=%.4f\n", rank, report.cmc[k]);
  }
  if (report.num_skipped > 0)
    std::printf("skipped_queries=%d\n", report.num_skipped);
}

// ---- subcommand bodies ----

int run_synth(const std::string& out, int ids, int per_id, int size, uint64_t seed,
              double src_brightness, double tgt_brightness, double src_blur, double tgt_blur) {
  SyntheticSpec spec;
  spec.num_identities = ids;
  spec.images_per_id = per_id;
  spec.image_size = size;
  spec.seed = seed;
  spec.source_style.brightness_offset = src_brightness;
  spec.source_style.blur_radius = src_blur;
  spec.target_style.brightness_offset = tgt_brightness;
  spec.target_style.blur_radius = tgt_blur;
  echo_config(json{{"command", "synth"},
                   {"out", out},
                   {"ids", ids},
                   {"per_id", per_id},
                   {"size", size},
                   {"seed", seed},
                   {"source_brightness", src_brightness},
                   {"target_brightness", tgt_brightness},
                   {"source_blur", src_blur},
                   {"target_blur", tgt_blur}});
  auto [source, target] = generate_synthetic_domains(spec, out);
  std::cout << "wrote " << source.records.size() << " source and " << target.records.size()
            << " target images under " << out << "\n";
  return 0;
}

int run_train_dan(const train::TrainConfig& cfg) {
  echo_config(train::config_to_json(cfg));
  DatasetIndex source = load_index_arg(cfg.data.source_root, cfg.data.source_layout,
                                       cfg.data.source_list, "", Domain::source);
  DatasetIndex target = load_index_arg(cfg.data.target_root, cfg.data.target_layout,
                                       cfg.data.target_list, "", Domain::target);
  train::DanCheckpoint ckpt = train::train_dan(cfg, source, target);
  std::cout << "finished " << ckpt.epoch << " epoch(s); checkpoints in " << cfg.checkpoint_dir
            << "\n";
  return 0;
}

int run_translate(const std::string& ckpt_dir, const std::string& direction,
                  const std::string& root, const std::string& layout, const std::string& list,
                  const std::string& index_json, const std::string& out, bool force) {
  echo_config(json{{"command", "translate"}, {"ckpt", ckpt_dir}, {"direction", direction},
                   {"root", root}, {"out", out}});
  train::LoadOptions opts;
  opts.force = force;
  train::DanCheckpoint ckpt = train::load_dan_checkpoint(ckpt_dir, opts);
  Domain domain =
      direction == "source_to_target" ? Domain::source : Domain::target;
  DatasetIndex index = load_index_arg(root, layout, list, index_json, domain);
  DatasetIndex translated = train::translate_dataset(
      ckpt, index, train::direction_from_string(direction), out);
  std::cout << "translated " << translated.records.size() << " image(s) into " << out << "\n";
  return 0;
}

int run_train_reid(const train::TrainConfig& cfg) {
  echo_config(train::config_to_json(cfg));
  DatasetIndex train_index = load_index_arg(cfg.data.train_root, cfg.data.train_layout,
                                            cfg.data.train_list, "", Domain::source);
  train::ReidCheckpoint ckpt = train::train_reid(cfg, train_index);
  std::cout << "finished " << ckpt.epoch << " epoch(s); checkpoints in " << cfg.checkpoint_dir
            << "\n";
  return 0;
}

struct EmbeddingSource {
  std::string ckpt;
  std::string root, layout = "flat", list, index_json;
  std::string emb_bin, emb_sidecar;
};

std::pair<DatasetIndex, Tensor> resolve_embeddings(const EmbeddingSource& src, Domain domain,
                                                   bool force) {
  if (!src.emb_bin.empty()) {
    fs::path sidecar = src.emb_sidecar.empty()
                           ? fs::path(src.emb_bin).replace_extension(".json")
                           : fs::path(src.emb_sidecar);
    return {index_from_sidecar(sidecar), metrics::import_embeddings(src.emb_bin, sidecar)};
  }
  if (src.ckpt.empty())
    throw CLI::ValidationError("embeddings",
                               "provide either --*-emb files or a --ckpt to extract from");
  train::LoadOptions opts;
  opts.force = force;
  train::ReidCheckpoint ckpt = train::load_reid_checkpoint(src.ckpt, opts);
  DatasetIndex index = load_index_arg(src.root, src.layout, src.list, src.index_json, domain);
  Tensor emb = attnet::extract_embeddings_eval(ckpt.model, index);
  return {index, emb};
}

int run_eval(const EmbeddingSource& query, const EmbeddingSource& gallery,
             const std::string& protocol_name, const std::string& metric_name, int max_rank,
             int test_size, int trials, uint64_t seed, const std::string& out, bool force) {
  echo_config(json{{"command", "eval"},
                   {"protocol", protocol_name},
                   {"metric", metric_name},
                   {"max_rank", max_rank},
                   {"test_size", test_size},
                   {"trials", trials},
                   {"seed", seed}});
  metrics::Protocol protocol = metrics::protocol_from_string(protocol_name);
  metrics::DistanceMetric metric = metrics::metric_from_string(metric_name);

  metrics::EvalReport report;
  if (protocol == metrics::Protocol::vehicleid_random_gallery) {
    auto [index, emb] = resolve_embeddings(query, Domain::target, force);
    report = metrics::vehicleid_multi_trial_eval(index, emb, test_size, trials, seed, max_rank,
                                                 metric);
  } else {
    auto [qindex, qemb] = resolve_embeddings(query, Domain::target, force);
    auto [gindex, gemb] = resolve_embeddings(gallery, Domain::target, force);
    report = metrics::evaluate(qindex, gindex, qemb, gemb, protocol, max_rank, metric);
  }
  print_report(report);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream jr(fs::path(out) / "report.json");
    jr << report.to_json() << "\n";
    report.write_csv(fs::path(out) / "cmc.csv");
    std::cout << "report written to " << out << "\n";
  }
  return 0;
}

int run_export_embeddings(const std::string& ckpt_dir, const std::string& root,
                          const std::string& layout, const std::string& list,
                          const std::string& index_json, const std::string& out_prefix,
                          bool force) {
  echo_config(json{{"command", "export-embeddings"}, {"ckpt", ckpt_dir}, {"root", root},
                   {"out", out_prefix}});
  train::LoadOptions opts;
  opts.force = force;
  train::ReidCheckpoint ckpt = train::load_reid_checkpoint(ckpt_dir, opts);
  DatasetIndex index = load_index_arg(root, layout, list, index_json, Domain::source);
  Tensor emb = attnet::extract_embeddings_eval(ckpt.model, index);
  fs::path prefix(out_prefix);
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  metrics::export_embeddings(emb, index, out_prefix + ".bin", out_prefix + ".json");
  std::cout << "exported " << emb.dim(0) << " embeddings of dim " << emb.dim(1) << " to "
            << out_prefix << ".bin\n";
  return 0;
}

int run_plot_cmc(const std::vector<std::string>& report_files, const std::string& out) {
  echo_config(json{{"command", "plot-cmc"}, {"reports", report_files}, {"out", out}});
  std::vector<metrics::EvalReport> reports;
  std::vector<std::string> labels;
  for (const std::string& f : report_files) {
    std::ifstream in(f);
    if (!in) throw std::runtime_error("cannot read report: " + f);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    reports.push_back(metrics::eval_report_from_json(text));
    labels.push_back(fs::path(f).stem().string());
  }
  plot_cmc(reports, out, labels);
  std::cout << "wrote " << (fs::path(out) / "cmc.png").string() << " and cmc.csv\n";
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"DAVR: cross-domain vehicle re-identification pipeline"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic two-domain dataset");
  std::string synth_out = "synth";
  int synth_ids = 20, synth_per_id = 8, synth_size = 64;
  int64_t synth_seed = 1;
  double src_b = 0.2, tgt_b = -0.2, src_blur = 0.0, tgt_blur = 1.5;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--ids", synth_ids, "number of identities");
  synth->add_option("--per-id", synth_per_id, "images per identity per domain");
  synth->add_option("--size", synth_size, "image size (divisible by 4)");
  synth->add_option("--seed", synth_seed, "render seed");
  synth->add_option("--source-brightness", src_b, "source brightness offset");
  synth->add_option("--target-brightness", tgt_b, "target brightness offset");
  synth->add_option("--source-blur", src_blur, "source blur radius");
  synth->add_option("--target-blur", tgt_blur, "target blur radius");

  // shared config plumbing for the train stages
  struct ConfigArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    int64_t seed = -1;
  };
  auto add_config_args = [](CLI::App* cmd, ConfigArgs& a) {
    cmd->add_option("--config", a.config, "config JSON path");
    cmd->add_option("--set", a.sets, "dotted-key override, e.g. --set dan.lr=0.001");
    cmd->add_option("--out", a.out, "checkpoint/output directory (overrides config)");
    cmd->add_option("--seed", a.seed, "seed override");
  };

  auto* train_dan_cmd = app.add_subcommand("train-dan", "train the translation network");
  ConfigArgs dan_args;
  add_config_args(train_dan_cmd, dan_args);

  auto* train_reid_cmd = app.add_subcommand("train-reid", "train the reID feature learner");
  ConfigArgs reid_args;
  add_config_args(train_reid_cmd, reid_args);

  // translate
  auto* translate_cmd = app.add_subcommand("translate", "translate a dataset with a DAN checkpoint");
  std::string tr_ckpt, tr_direction = "source_to_target", tr_root, tr_layout = "flat", tr_list,
              tr_index, tr_out = "translated";
  bool tr_force = false;
  translate_cmd->add_option("--ckpt", tr_ckpt, "DAN checkpoint directory")->required();
  translate_cmd->add_option("--direction", tr_direction,
                            "source_to_target or target_to_source");
  translate_cmd->add_option("--root", tr_root, "dataset root to translate");
  translate_cmd->add_option("--layout", tr_layout, "dataset layout");
  translate_cmd->add_option("--list", tr_list, "vehicleid split list file");
  translate_cmd->add_option("--index", tr_index, "index JSON instead of a root");
  translate_cmd->add_option("--out", tr_out, "output directory");
  translate_cmd->add_flag("--force", tr_force, "load despite config-hash mismatch");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "retrieval evaluation (mAP, CMC)");
  EmbeddingSource ev_query, ev_gallery;
  std::string ev_protocol = "plain", ev_metric = "cosine", ev_out;
  int ev_max_rank = 50, ev_test_size = 800, ev_trials = 10;
  int64_t ev_seed = 1;
  bool ev_force = false;
  eval_cmd->add_option("--ckpt", ev_query.ckpt, "reID checkpoint to extract embeddings with");
  eval_cmd->add_option("--query-root", ev_query.root, "query dataset root");
  eval_cmd->add_option("--query-layout", ev_query.layout, "query layout");
  eval_cmd->add_option("--query-list", ev_query.list, "query vehicleid list");
  eval_cmd->add_option("--query-index", ev_query.index_json, "query index JSON");
  eval_cmd->add_option("--query-emb", ev_query.emb_bin, "query embeddings .bin");
  eval_cmd->add_option("--query-sidecar", ev_query.emb_sidecar, "query embeddings sidecar");
  eval_cmd->add_option("--gallery-root", ev_gallery.root, "gallery dataset root");
  eval_cmd->add_option("--gallery-layout", ev_gallery.layout, "gallery layout");
  eval_cmd->add_option("--gallery-list", ev_gallery.list, "gallery vehicleid list");
  eval_cmd->add_option("--gallery-index", ev_gallery.index_json, "gallery index JSON");
  eval_cmd->add_option("--gallery-emb", ev_gallery.emb_bin, "gallery embeddings .bin");
  eval_cmd->add_option("--gallery-sidecar", ev_gallery.emb_sidecar, "gallery sidecar");
  eval_cmd->add_option("--protocol", ev_protocol,
                       "plain | veri_cross_camera | vehicleid_random_gallery");
  eval_cmd->add_option("--metric", ev_metric, "cosine | euclidean");
  eval_cmd->add_option("--max-rank", ev_max_rank, "CMC depth");
  eval_cmd->add_option("--test-size", ev_test_size, "vehicleid gallery identity count");
  eval_cmd->add_option("--trials", ev_trials, "vehicleid sampling trials");
  eval_cmd->add_option("--seed", ev_seed, "vehicleid sampling seed");
  eval_cmd->add_option("--out", ev_out, "directory for report.json + cmc.csv");
  eval_cmd->add_flag("--force", ev_force, "load despite config-hash mismatch");

  // export-embeddings
  auto* export_cmd = app.add_subcommand("export-embeddings", "extract and export f_a embeddings");
  std::string ex_ckpt, ex_root, ex_layout = "flat", ex_list, ex_index, ex_out = "embeddings";
  bool ex_force = false;
  export_cmd->add_option("--ckpt", ex_ckpt, "reID checkpoint")->required();
  export_cmd->add_option("--root", ex_root, "dataset root");
  export_cmd->add_option("--layout", ex_layout, "dataset layout");
  export_cmd->add_option("--list", ex_list, "vehicleid list file");
  export_cmd->add_option("--index", ex_index, "index JSON instead of a root");
  export_cmd->add_option("--out", ex_out, "output prefix (.bin/.json appended)");
  export_cmd->add_flag("--force", ex_force, "load despite config-hash mismatch");

  // plot-cmc
  auto* plot_cmd = app.add_subcommand("plot-cmc", "render CMC curves to PNG + CSV");
  std::vector<std::string> plot_reports;
  std::string plot_out = "plots";
  plot_cmd->add_option("--report", plot_reports, "report JSON file (repeatable)")->required();
  plot_cmd->add_option("--out", plot_out, "output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (synth->parsed())
      return run_synth(synth_out, synth_ids, synth_per_id, synth_size,
                       static_cast<uint64_t>(synth_seed), src_b, tgt_b, src_blur, tgt_blur);
    if (train_dan_cmd->parsed())
      return run_train_dan(
          load_effective_config(dan_args.config, dan_args.sets, dan_args.out, dan_args.seed));
    if (train_reid_cmd->parsed())
      return run_train_reid(
          load_effective_config(reid_args.config, reid_args.sets, reid_args.out, reid_args.seed));
    if (translate_cmd->parsed())
      return run_translate(tr_ckpt, tr_direction, tr_root, tr_layout, tr_list, tr_index, tr_out,
                           tr_force);
    if (eval_cmd->parsed())
      return run_eval(ev_query, ev_gallery, ev_protocol, ev_metric, ev_max_rank, ev_test_size,
                      ev_trials, static_cast<uint64_t>(ev_seed), ev_out, ev_force);
    if (export_cmd->parsed())
      return run_export_embeddings(ex_ckpt, ex_root, ex_layout, ex_list, ex_index, ex_out,
                                   ex_force);
    if (plot_cmd->parsed()) return run_plot_cmc(plot_reports, plot_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace davr::cli
