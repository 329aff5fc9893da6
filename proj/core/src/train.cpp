#include "davr/train.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <numeric>

#include "davr/rng.hpp"

namespace davr::train {

namespace fs = std::filesystem;
using nlohmann::json;

Direction direction_from_string(const std::string& s) {
  if (s == "source_to_target") return Direction::source_to_target;
  if (s == "target_to_source") return Direction::target_to_source;
  throw std::runtime_error("unknown direction '" + s +
                           "' (source_to_target|target_to_source)");
}

const char* to_string(Direction d) {
  return d == Direction::source_to_target ? "source_to_target" : "target_to_source";
}

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void append_runlog(const fs::path& dir, const json& record) {
  fs::create_directories(dir);
  std::ofstream out(dir / "runlog.jsonl", std::ios::app);
  out << record.dump() << "\n";
}

std::vector<int> shuffled_range(int n, Rng& rng) {
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    int64_t j = rng.uniform_int(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  return order;
}

// CycleGAN-style pool of previously generated fakes for discriminator updates.
class ImagePool {
public:
  ImagePool(int capacity, uint64_t seed) : capacity_(capacity), rng_(seed) {}

  // Per sample: below capacity, store and return the new fake; afterwards
  // return the new fake or swap it with a stored one, 50/50.
  Tensor query(const Tensor& fakes) {
    if (capacity_ <= 0) return fakes;
    int64_t n = fakes.dim(0);
    Tensor out(fakes.shape());
    int64_t item = fakes.numel() / n;
    for (int64_t i = 0; i < n; ++i) {
      const double* src = fakes.data() + i * item;
      std::vector<double> sample(src, src + item);
      std::vector<double> chosen;
      if (static_cast<int>(pool_.size()) < capacity_) {
        pool_.push_back(sample);
        chosen = std::move(sample);
      } else if (rng_.uniform() < 0.5) {
        chosen = std::move(sample);
      } else {
        size_t slot = static_cast<size_t>(rng_.uniform_int(0, capacity_ - 1));
        chosen = pool_[slot];
        pool_[slot] = std::move(sample);
      }
      std::copy(chosen.begin(), chosen.end(), out.data() + i * item);
    }
    return out;
  }

private:
  int capacity_;
  Rng rng_;
  std::vector<std::vector<double>> pool_;
};

// Epoch-end bookkeeping shared by both stages: write epoch_<n>, refresh
// `best` when improved, prune everything older than the previous epoch.
template <class SaveFn>
void rotate_checkpoints(const fs::path& root, int epoch, double loss, double* best_loss,
                        SaveFn save) {
  fs::path dir = root / ("epoch_" + std::to_string(epoch));
  save(dir);
  if (loss < *best_loss) {
    *best_loss = loss;
    fs::remove_all(root / "best");
    save(root / "best");
  }
  for (int old = epoch - 2; old >= 0; --old) fs::remove_all(root / ("epoch_" + std::to_string(old)));
}

std::map<std::string, Tensor> merged_optimizer_state(const AdamOptimizer& g,
                                                     const AdamOptimizer& d) {
  std::map<std::string, Tensor> out;
  for (auto& [k, v] : g.export_state()) out["gen." + k] = v;
  for (auto& [k, v] : d.export_state()) out["disc." + k] = v;
  return out;
}

json dan_report_json(const dan::DanLossReport& r) {
  return json{{"l_adv_G", r.l_adv_G}, {"l_adv_F", r.l_adv_F}, {"l_disc_S", r.l_disc_S},
              {"l_disc_T", r.l_disc_T}, {"l_cyc", r.l_cyc},   {"l_id", r.l_id},
              {"l_style", r.l_style},   {"total", r.total}};
}

dan::DanLossReport dan_report_from_json(const json& j) {
  dan::DanLossReport r;
  r.l_adv_G = j.at("l_adv_G").get<double>();
  r.l_adv_F = j.at("l_adv_F").get<double>();
  r.l_disc_S = j.at("l_disc_S").get<double>();
  r.l_disc_T = j.at("l_disc_T").get<double>();
  r.l_cyc = j.at("l_cyc").get<double>();
  r.l_id = j.at("l_id").get<double>();
  r.l_style = j.at("l_style").get<double>();
  r.total = j.at("total").get<double>();
  return r;
}

}  // namespace

DanCheckpoint init_dan(const TrainConfig& config) {
  dan::DanArch arch;
  arch.base_channels = config.dan.base_channels;
  arch.num_resblocks = config.dan.num_resblocks;
  arch.disc_base_channels = config.dan.disc_base_channels;
  arch.disc_downsamples = config.dan.disc_downsamples;

  DanCheckpoint ckpt{.model = dan::DanModel::create(arch, config.seed),
                     .opt_g = AdamOptimizer(config.dan.lr, config.dan.beta1, config.dan.beta2),
                     .opt_d = AdamOptimizer(config.dan.lr, config.dan.beta1, config.dan.beta2),
                     .config = config};
  return ckpt;
}

void save_dan_checkpoint(const DanCheckpoint& ckpt, const fs::path& dir) {
  ManifestInfo info;
  info.stage = "dan";
  info.config = config_to_json(ckpt.config);
  info.config_hash = config_hash(info.config);
  info.epoch = ckpt.epoch;
  json hist = json::array();
  for (const auto& r : ckpt.history) hist.push_back(dan_report_json(r));
  info.loss_history = hist;
  info.extra = json{{"initial", dan_report_json(ckpt.initial)}};
  write_checkpoint(dir, info, ckpt.model.all_params(), {},
                   merged_optimizer_state(ckpt.opt_g, ckpt.opt_d));
}

DanCheckpoint load_dan_checkpoint(const fs::path& dir, const LoadOptions& options) {
  ManifestInfo info = read_manifest(dir);
  if (info.stage != "dan")
    throw std::runtime_error("checkpoint at " + dir.string() + " is stage '" + info.stage +
                             "', expected 'dan'");
  TrainConfig config = config_from_json(info.config);
  DanCheckpoint ckpt = init_dan(config);
  ckpt.epoch = info.epoch;
  for (const json& r : info.loss_history) ckpt.history.push_back(dan_report_from_json(r));
  if (info.extra.contains("initial")) ckpt.initial = dan_report_from_json(info.extra["initial"]);

  std::map<std::string, Tensor> opt_state;
  LoadOptions opts = options;
  if (opts.expected_config_hash.empty()) opts.expected_config_hash = config_hash(config);
  load_checkpoint_into(dir, ckpt.model.all_params(), {}, &opt_state, opts);
  std::map<std::string, Tensor> gen_state, disc_state;
  for (auto& [k, v] : opt_state) {
    if (k.rfind("gen.", 0) == 0) gen_state[k.substr(4)] = v;
    if (k.rfind("disc.", 0) == 0) disc_state[k.substr(5)] = v;
  }
  ckpt.opt_g.import_state(gen_state);
  ckpt.opt_d.import_state(disc_state);
  return ckpt;
}

DanCheckpoint train_dan(const TrainConfig& config, const DatasetIndex& source,
                        const DatasetIndex& target) {
  if (source.records.empty() || target.records.empty())
    throw std::runtime_error("train_dan: both domains need at least one image");

  DanCheckpoint ckpt = init_dan(config);
  const fs::path root = config.checkpoint_dir;
  json effective = config_to_json(config);
  append_runlog(root, json{{"event", "config"}, {"stage", "dan"}, {"config", effective},
                           {"config_hash", config_hash(effective)}});

  // The loop sees image paths only; labels stay behind.
  std::vector<std::string> source_paths, target_paths;
  for (const auto& r : source.records) source_paths.push_back(r.image_path);
  for (const auto& r : target.records) target_paths.push_back(r.image_path);

  auto load_paths = [&](const std::vector<std::string>& paths, const std::vector<int>& order,
                        int64_t start, int count) {
    std::vector<DatasetRecord> recs;
    for (int k = 0; k < count; ++k) {
      size_t pos = static_cast<size_t>(order[static_cast<size_t>(
          (start + k) % static_cast<int64_t>(order.size()))]);
      recs.push_back({paths[pos], 0, 0, Domain::source});
    }
    return load_image_batch(recs, config.image_size);
  };

  Rng run_rng(config.seed);
  ImagePool pool_T(config.dan.buffer_size, run_rng.fork(101).next_u64());
  ImagePool pool_S(config.dan.buffer_size, run_rng.fork(102).next_u64());

  auto gen_params = ckpt.model.generator_params();
  auto disc_params = ckpt.model.discriminator_params();
  auto all_params = ckpt.model.all_params();
  dan::DanLossWeights weights{config.dan.lambda_cycle, config.dan.lambda_identity,
                              config.dan.lambda_style};

  int64_t per_epoch = std::max<int64_t>(
      1, static_cast<int64_t>(std::max(source_paths.size(), target_paths.size())) /
             config.batch_size);
  double best_loss = 1e300;
  bool have_initial = false;

  if (config.epochs == 0) {
    save_dan_checkpoint(ckpt, root / "epoch_0");
    fs::remove_all(root / "best");
    save_dan_checkpoint(ckpt, root / "best");
    return ckpt;
  }

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double t0 = now_seconds();
    Rng epoch_rng = run_rng.fork(static_cast<uint64_t>(epoch) + 1);
    std::vector<int> s_order = shuffled_range(static_cast<int>(source_paths.size()), epoch_rng);
    std::vector<int> t_order = shuffled_range(static_cast<int>(target_paths.size()), epoch_rng);

    dan::DanLossReport epoch_mean;
    for (int64_t it = 0; it < per_epoch; ++it) {
      Var x = Var::leaf(load_paths(source_paths, s_order, it * config.batch_size,
                                   config.batch_size));
      Var y = Var::leaf(load_paths(target_paths, t_order, it * config.batch_size,
                                   config.batch_size));

      // ---- generator objective ----
      dan::TranslateTrace g_x = dan::translate_traced(ckpt.model.G, x);   // fake target
      dan::TranslateTrace f_y = dan::translate_traced(ckpt.model.F, y);   // fake source
      Var x_rec = dan::translate(ckpt.model.F, g_x.output);
      Var y_rec = dan::translate(ckpt.model.G, f_y.output);
      dan::TranslateTrace g_y = dan::translate_traced(ckpt.model.G, y);   // identity terms
      dan::TranslateTrace f_x = dan::translate_traced(ckpt.model.F, x);

      Var l_adv_G = mean_all(square(add_scalar(
          dan::discriminator_score(ckpt.model.D_T, g_x.output), -1.0)));
      Var l_adv_F = mean_all(square(add_scalar(
          dan::discriminator_score(ckpt.model.D_S, f_y.output), -1.0)));
      Var l_cyc = dan::cycle_loss(x, x_rec, y, y_rec);
      Var l_id = add(dan::l1_mean(g_y.output, y), dan::l1_mean(f_x.output, x));
      // gram statistics of E_g^s(x) vs E_g^s(y), and E_f^s(y) vs E_f^s(x)
      Var l_style = dan::style_loss(g_x.style, g_y.style, f_x.style, f_y.style);

      // ---- discriminator objective, fakes via history pool ----
      Var fake_y_pool = Var::leaf(pool_T.query(g_x.output.value()));
      Var fake_x_pool = Var::leaf(pool_S.query(f_y.output.value()));
      Var l_disc_T = add(
          mean_all(square(add_scalar(dan::discriminator_score(ckpt.model.D_T, y), -1.0))),
          mean_all(square(dan::discriminator_score(ckpt.model.D_T, fake_y_pool))));
      Var l_disc_S = add(
          mean_all(square(add_scalar(dan::discriminator_score(ckpt.model.D_S, x), -1.0))),
          mean_all(square(dan::discriminator_score(ckpt.model.D_S, fake_x_pool))));

      dan::DanLossReport report;
      Var total_g;
      try {
        total_g = dan::dan_total_loss(l_adv_G, l_adv_F, l_cyc, l_id, l_style, l_disc_S, l_disc_T,
                                      weights, &report);
      } catch (const std::exception& e) {
        // abort, leaving the last epoch checkpoint as the good state
        append_runlog(root, json{{"event", "abort"}, {"epoch", epoch}, {"error", e.what()}});
        throw;
      }
      if (!have_initial) {
        ckpt.initial = report;
        have_initial = true;
      }

      AdamOptimizer::zero_grad(all_params);
      backward(total_g);
      ckpt.opt_g.step(gen_params);

      AdamOptimizer::zero_grad(all_params);
      backward(add(l_disc_S, l_disc_T));
      ckpt.opt_d.step(disc_params);

      epoch_mean.l_adv_G += report.l_adv_G;
      epoch_mean.l_adv_F += report.l_adv_F;
      epoch_mean.l_disc_S += report.l_disc_S;
      epoch_mean.l_disc_T += report.l_disc_T;
      epoch_mean.l_cyc += report.l_cyc;
      epoch_mean.l_id += report.l_id;
      epoch_mean.l_style += report.l_style;
      epoch_mean.total += report.total;
    }
    double inv = 1.0 / static_cast<double>(per_epoch);
    epoch_mean.l_adv_G *= inv;
    epoch_mean.l_adv_F *= inv;
    epoch_mean.l_disc_S *= inv;
    epoch_mean.l_disc_T *= inv;
    epoch_mean.l_cyc *= inv;
    epoch_mean.l_id *= inv;
    epoch_mean.l_style *= inv;
    epoch_mean.total *= inv;
    epoch_mean.weights = weights;

    ckpt.history.push_back(epoch_mean);
    ckpt.epoch = epoch + 1;
    append_runlog(root, json{{"event", "epoch"},
                             {"epoch", epoch},
                             {"losses", dan_report_json(epoch_mean)},
                             {"lr", config.dan.lr},
                             {"wall_time", now_seconds() - t0}});
    std::cout << "[dan] epoch " << epoch << " total " << epoch_mean.total << " (cyc "
              << epoch_mean.l_cyc << ", id " << epoch_mean.l_id << ", style "
              << epoch_mean.l_style << ")\n";
    rotate_checkpoints(root, epoch, epoch_mean.total, &best_loss,
                       [&](const fs::path& dir) { save_dan_checkpoint(ckpt, dir); });
  }
  return ckpt;
}

DatasetIndex translate_dataset(const DanCheckpoint& ckpt, const DatasetIndex& index,
                               Direction direction, const fs::path& out_root) {
  const dan::GeneratorParams& gen =
      direction == Direction::source_to_target ? ckpt.model.G : ckpt.model.F;
  fs::path base = out_root / to_string(direction);

  DatasetIndex out;
  out.split = index.split;
  out.num_identities = index.num_identities;
  NoGradGuard guard;

  const int batch = 8;
  for (size_t start = 0; start < index.records.size(); start += batch) {
    size_t end = std::min(index.records.size(), start + batch);
    std::vector<DatasetRecord> recs(index.records.begin() + static_cast<std::ptrdiff_t>(start),
                                    index.records.begin() + static_cast<std::ptrdiff_t>(end));
    Var imgs = Var::leaf(load_image_batch(recs, ckpt.config.image_size));
    Var translated = dan::translate(gen, imgs);
    for (size_t i = 0; i < recs.size(); ++i) {
      const DatasetRecord& r = recs[i];
      fs::path dir = base / std::to_string(r.vehicle_id);
      fs::create_directories(dir);
      fs::path file = dir / (fs::path(r.image_path).stem().string() + ".png");
      for (int suffix = 1; fs::exists(file); ++suffix)
        file = dir / (fs::path(r.image_path).stem().string() + "_" + std::to_string(suffix) +
                      ".png");
      try {
        write_png(file, tensor_to_image(translated.value(), static_cast<int64_t>(i)));
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string("translate_dataset: ") + e.what());
      }
      out.records.push_back({file.string(), r.vehicle_id, r.camera_id, r.domain});
    }
  }
  save_index_json(out, out_root / ("index_" + std::string(to_string(direction)) + ".json"));
  return out;
}

// ---------------------------------------------------------------------------
// reid stage
// ---------------------------------------------------------------------------

attnet::AttNetArch reid_arch_from_config(const TrainConfig& config, int num_identities) {
  attnet::AttNetArch arch;
  const std::string& kind = config.reid.backbone;
  if (kind == "resnet50") {
    arch = attnet::AttNetArch::resnet50(num_identities);
  } else if (kind == "smoke") {
    arch = attnet::AttNetArch::smoke(num_identities, config.image_size);
  } else if (kind == "tiny") {
    arch = attnet::AttNetArch::tiny(num_identities, config.image_size);
  } else {
    throw std::runtime_error("unknown reid backbone '" + kind + "' (resnet50|smoke|tiny)");
  }
  arch.dropout = config.reid.dropout;
  return arch;
}

namespace {

double lr_for_epoch(const ReidTrainConfig& reid, int epoch) {
  int consumed = 0;
  for (const LrPhase& p : reid.lr_schedule) {
    consumed += p.epochs;
    if (epoch < consumed) return p.lr;
  }
  return reid.lr_schedule.empty() ? 0.1 : reid.lr_schedule.back().lr;
}

json reid_history_json(const std::vector<ReidEpochLoss>& hist) {
  json out = json::array();
  for (const auto& h : hist)
    out.push_back({{"total", h.total},
                   {"identification", h.identification},
                   {"verification", h.verification}});
  return out;
}

}  // namespace

ReidCheckpoint init_reid(const TrainConfig& config, int num_identities) {
  attnet::AttNetArch arch = reid_arch_from_config(config, num_identities);
  ReidCheckpoint ckpt{.model = attnet::AttNetParams::create(arch, config.seed),
                      .opt = SgdOptimizer(lr_for_epoch(config.reid, 0), config.reid.momentum,
                                          config.reid.weight_decay),
                      .config = config};
  return ckpt;
}

void save_reid_checkpoint(const ReidCheckpoint& ckpt, const fs::path& dir) {
  ManifestInfo info;
  info.stage = "reid";
  info.config = config_to_json(ckpt.config);
  info.config_hash = config_hash(info.config);
  info.epoch = ckpt.epoch;
  info.loss_history = reid_history_json(ckpt.history);
  info.extra = json{{"num_identities", ckpt.model.arch.num_identities}};
  write_checkpoint(dir, info, ckpt.model.params(), ckpt.model.buffers(),
                   ckpt.opt.export_state());
}

ReidCheckpoint load_reid_checkpoint(const fs::path& dir, const LoadOptions& options) {
  ManifestInfo info = read_manifest(dir);
  if (info.stage != "reid")
    throw std::runtime_error("checkpoint at " + dir.string() + " is stage '" + info.stage +
                             "', expected 'reid'");
  TrainConfig config = config_from_json(info.config);
  int num_ids = info.extra.at("num_identities").get<int>();
  ReidCheckpoint ckpt = init_reid(config, num_ids);
  ckpt.epoch = info.epoch;
  for (const json& h : info.loss_history)
    ckpt.history.push_back({h.at("total").get<double>(), h.at("identification").get<double>(),
                            h.at("verification").get<double>()});
  std::map<std::string, Tensor> opt_state;
  LoadOptions opts = options;
  if (opts.expected_config_hash.empty()) opts.expected_config_hash = config_hash(config);
  load_checkpoint_into(dir, ckpt.model.params(), ckpt.model.buffers(), &opt_state, opts);
  ckpt.opt.import_state(opt_state);
  return ckpt;
}

ReidCheckpoint train_reid(const TrainConfig& config, const DatasetIndex& train_index) {
  if (train_index.records.empty()) throw std::runtime_error("train_reid: empty train index");

  ReidCheckpoint ckpt = init_reid(config, train_index.num_identities);
  const fs::path root = config.checkpoint_dir;
  json effective = config_to_json(config);
  append_runlog(root, json{{"event", "config"}, {"stage", "reid"}, {"config", effective},
                           {"config_hash", config_hash(effective)}});
  if (config.reid.backbone == "resnet50")
    append_runlog(root, json{{"event", "note"},
                             {"message", "backbone randomly initialized (no pretrained "
                                         "weights available)"}});

  auto params = ckpt.model.params();
  int64_t per_epoch = std::max<int64_t>(
      1, static_cast<int64_t>(train_index.records.size()) / config.batch_size);
  Rng run_rng(config.seed);
  double best_loss = 1e300;

  if (config.epochs == 0) {
    save_reid_checkpoint(ckpt, root / "epoch_0");
    fs::remove_all(root / "best");
    save_reid_checkpoint(ckpt, root / "best");
    return ckpt;
  }

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double t0 = now_seconds();
    double lr = lr_for_epoch(config.reid, epoch);
    ckpt.opt.set_lr(lr);
    Rng epoch_rng = run_rng.fork(static_cast<uint64_t>(epoch) + 1);

    ReidEpochLoss mean;
    for (int64_t it = 0; it < per_epoch; ++it) {
      uint64_t pair_seed = epoch_rng.fork(static_cast<uint64_t>(it)).next_u64();
      PairBatch pair = sample_verification_pairs(train_index, config.batch_size,
                                                 config.reid.pos_ratio, pair_seed);
      load_pair_images(train_index, pair, ckpt.model.arch.input_size);

      Rng dropout_rng = epoch_rng.fork(1000 + static_cast<uint64_t>(it));
      attnet::AttNetLoss loss = attnet::attnet_total_loss(ckpt.model, pair, true, &dropout_rng);
      if (!std::isfinite(loss.total.item())) {
        append_runlog(root, json{{"event", "abort"}, {"epoch", epoch},
                                 {"error", "non-finite reid loss"}});
        throw std::runtime_error("train_reid: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      SgdOptimizer::zero_grad(params);
      backward(loss.total);
      ckpt.opt.step(params);

      mean.total += loss.total.item();
      mean.identification += loss.identification;
      mean.verification += loss.verification;
    }
    mean.total /= static_cast<double>(per_epoch);
    mean.identification /= static_cast<double>(per_epoch);
    mean.verification /= static_cast<double>(per_epoch);

    ckpt.history.push_back(mean);
    ckpt.epoch = epoch + 1;
    append_runlog(root, json{{"event", "epoch"},
                             {"epoch", epoch},
                             {"losses",
                              {{"total", mean.total},
                               {"identification", mean.identification},
                               {"verification", mean.verification}}},
                             {"lr", lr},
                             {"wall_time", now_seconds() - t0}});
    std::cout << "[reid] epoch " << epoch << " total " << mean.total << " (id "
              << mean.identification << ", verif " << mean.verification << ") lr " << lr << "\n";
    rotate_checkpoints(root, epoch, mean.total, &best_loss,
                       [&](const fs::path& dir) { save_reid_checkpoint(ckpt, dir); });
  }
  return ckpt;
}

}  // namespace davr::train
