#include "fsra/train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "fsra/data/dataset.hpp"
#include "fsra/data/image_cache.hpp"
#include "fsra/data/sampler.hpp"
#include "fsra/util/hash.hpp"
#include "fsra/util/rng.hpp"

namespace fsra {

namespace fs = std::filesystem;

namespace {

enum : std::uint64_t { kAugmentStream = 22, kDropoutStream = 23 };

constexpr const char* kLogHeader = "epoch,step,id_loss,triplet,kl,total";

NamedArray u64_entry(const std::string& name, std::uint64_t v) {
  return {name, {4}, pack_u64(v)};
}

NamedArray bytes_entry(const std::string& name, const std::string& bytes) {
  NamedArray a{name, {static_cast<std::uint32_t>(bytes.size())}, {}};
  for (unsigned char c : bytes) a.values.push_back(static_cast<float>(c));
  return a;
}

std::string entry_bytes(const NamedArray& a) {
  std::string s;
  for (float v : a.values) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return s;
}

std::string join_lines(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += x + "\n";
  return s;
}

std::string log_row(std::size_t epoch, std::size_t step, double id, double tri, double kl,
                    double total) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu,%zu,%.9g,%.9g,%.9g,%.9g", epoch, step, id, tri, kl, total);
  return buf;
}

// Keeps the header and rows of epochs <= `epoch`.
void truncate_log(const fs::path& path, std::size_t epoch) {
  std::ifstream in(path);
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (kept.empty()) {
      kept.push_back(line);
      continue;
    }
    if (std::stoul(line.substr(0, line.find(','))) <= epoch) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  if (kept.empty()) kept.push_back(kLogHeader);
  for (const auto& l : kept) out << l << '\n';
}

}  // namespace

fs::path checkpoint_path(const fs::path& dir, std::size_t epoch) {
  return dir / ("ckpt_epoch_" + std::to_string(epoch) + ".bin");
}

TrainResult train(const RunConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const DatasetIndex index = scan_dataset(cfg.train_root);
  const auto paired = index.paired();
  if (paired.empty()) throw ConfigError("training set has no class with both drone and satellite images");
  std::vector<std::string> class_ids;
  for (auto ci : paired) class_ids.push_back(index.classes[ci].id);

  ModelConfig mc = cfg.model;
  mc.head.num_classes = paired.size();
  FsraModel<float> model(mc);
  init_params(model.parameters(), cfg.train.seed ^ 0x5eedull);
  Sgd<float> optimizer(model.parameters(), cfg.train.sgd);
  const LrSchedule schedule = cfg.train.schedule();
  const std::string hash = config_hash(cfg);

  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (!fs::is_directory(cfg.out)) throw ConfigError("cannot create output directory '" + cfg.out.string() + "'");
  {
    std::ofstream rc(cfg.out / "run_config.json");
    rc << to_json(cfg).dump(2) << '\n';
    if (!rc) throw std::runtime_error("cannot write run_config.json");
  }

  std::size_t start_epoch = 0;
  const fs::path log_path = cfg.out / "train_log.csv";
  if (!options.resume.empty()) {
    const auto ckpt = load_checkpoint(options.resume);
    if (ckpt.config_hash != hash) {
      throw ConfigError("checkpoint '" + options.resume.string() + "' was written with a different config");
    }
    if (ckpt.class_ids != class_ids) throw ConfigError("checkpoint classes do not match the training set");
    model.load_state(ckpt.arrays);
    optimizer.load_state(ckpt.arrays);
    start_epoch = ckpt.epoch;
    truncate_log(log_path, start_epoch);
  } else {
    std::ofstream log(log_path, std::ios::trunc);
    log << kLogHeader << '\n';
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw std::runtime_error("cannot write '" + log_path.string() + "'");

  ImageCache cache(cfg.model.backbone.image_size);
  const std::size_t last_epoch = options.stop_after_epoch == 0
                                     ? cfg.train.epochs
                                     : std::min(options.stop_after_epoch, cfg.train.epochs);
  TrainResult result;
  for (std::size_t epoch = start_epoch + 1; epoch <= last_epoch; ++epoch) {
    const auto sched = multiple_sample(index, cfg.sampler, epoch - 1);
    const double lr_mult = schedule.multiplier(epoch - 1);
    EpochSummary summary;
    summary.epoch = epoch;
    summary.replacement_warnings = sched.replacement_warnings;
    summary.images = sched.image_count();
    for (std::size_t step = 0; step < sched.steps(); ++step) {
      const auto pairs = sched.batch(step);
      std::vector<Image> drone_imgs, sat_imgs;
      std::vector<int> labels;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        const auto& entry = index.classes[p.class_index];
        const auto& sats = entry.images(ViewTag::kSatellite);
        auto rs = make_rng(cfg.train.seed, {kAugmentStream, epoch, step, i, 0});
        sat_imgs.push_back(augment(cache.get(sats[p.satellite_copy % sats.size()]), cfg.train.augment, rs));
        auto rd = make_rng(cfg.train.seed, {kAugmentStream, epoch, step, i, 1});
        drone_imgs.push_back(augment(cache.get(entry.images(ViewTag::kDrone)[p.drone_image]),
                                     cfg.train.augment, rd));
        labels.push_back(p.label);
      }
      std::vector<const Image*> dp, sp;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        dp.push_back(&drone_imgs[i]);
        sp.push_back(&sat_imgs[i]);
      }
      auto drop_d = make_rng(cfg.train.seed, {kDropoutStream, epoch, step, 0});
      auto drop_s = make_rng(cfg.train.seed, {kDropoutStream, epoch, step, 1});
      const auto out_d = model.forward(images_to_tensor(dp), ForwardContext{true, &drop_d});
      const auto out_s = model.forward(images_to_tensor(sp), ForwardContext{true, &drop_s});
      auto loss = total_loss(out_d.bundle, out_s.bundle, labels, labels, cfg.loss);
      if (!std::isfinite(loss.total_value)) {
        Tape<float>::current().clear();
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << " step " << step << " (id " << loss.id
           << ", triplet " << loss.triplet << ", kl " << loss.kl << ")";
        throw TrainingHalted(os.str());
      }
      loss.total.backward();
      try {
        optimizer.step(lr_mult);
      } catch (const std::runtime_error& e) {
        throw TrainingHalted(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                             " step " + std::to_string(step));
      }
      optimizer.zero_grad();

      log << log_row(epoch, step, loss.id, loss.triplet, loss.kl, loss.total_value) << '\n';
      summary.mean_id += loss.id;
      summary.mean_triplet += loss.triplet;
      summary.mean_kl += loss.kl;
      summary.mean_total += loss.total_value;
      summary.triplet_skipped += loss.triplet_skipped;
      ++summary.steps;
    }
    log.flush();
    const double n = static_cast<double>(std::max<std::size_t>(summary.steps, 1));
    summary.mean_id /= n;
    summary.mean_triplet /= n;
    summary.mean_kl /= n;
    summary.mean_total /= n;

    auto entries = model.state();
    auto opt_state = optimizer.state();
    entries.insert(entries.end(), opt_state.begin(), opt_state.end());
    entries.push_back(u64_entry("meta.epoch", epoch));
    entries.push_back(u64_entry("meta.seed", cfg.train.seed));
    entries.push_back(u64_entry("meta.config_hash", std::stoull(hash, nullptr, 16)));
    entries.push_back(bytes_entry("meta.config", to_json(cfg).dump()));
    entries.push_back(bytes_entry("meta.class_ids", join_lines(class_ids)));
    const fs::path ckpt = checkpoint_path(cfg.out, epoch);
    write_checkpoint(ckpt, entries);
    if (cfg.train.keep_checkpoints == "last" && epoch > 1) {
      fs::remove(checkpoint_path(cfg.out, epoch - 1), ec);
    }
    result.final_checkpoint = ckpt;
    result.epochs.push_back(summary);
    if (options.on_epoch) options.on_epoch(summary);
  }
  if (result.final_checkpoint.empty() && start_epoch > 0) {
    result.final_checkpoint = options.resume;
  }
  return result;
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  LoadedCheckpoint out;
  out.arrays = read_checkpoint(path);
  std::unordered_map<std::string, const NamedArray*> by_name;
  for (const auto& a : out.arrays) by_name[a.name] = &a;
  auto need = [&](const std::string& name) -> const NamedArray& {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint '" + path.string() + "' has no '" + name + "' entry");
    }
    return *it->second;
  };
  out.epoch = static_cast<std::size_t>(unpack_u64(need("meta.epoch").values));
  out.config_hash = hex64(unpack_u64(need("meta.config_hash").values));
  const auto config_text = entry_bytes(need("meta.config"));
  auto j = nlohmann::json::parse(config_text, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("checkpoint '" + path.string() + "' has a corrupt config");
  out.config = run_config_from_json(j);
  std::istringstream ids(entry_bytes(need("meta.class_ids")));
  for (std::string line; std::getline(ids, line);) {
    if (!line.empty()) out.class_ids.push_back(line);
  }
  return out;
}

FsraModel<float> model_from_checkpoint(const LoadedCheckpoint& ckpt) {
  ModelConfig mc = ckpt.config.model;
  mc.head.num_classes = ckpt.class_ids.size();
  FsraModel<float> model(mc);
  model.load_state(ckpt.arrays);
  return model;
}

}  // namespace fsra
