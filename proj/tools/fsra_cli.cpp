#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fsra/data/dataset.hpp"
#include "fsra/data/image.hpp"
#include "fsra/data/synth.hpp"
#include "fsra/eval/experiment.hpp"
#include "fsra/train/trainer.hpp"
#include "fsra/util/alloc.hpp"
#include "fsra/util/hash.hpp"

namespace fs = std::filesystem;
using namespace fsra;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("FSRA_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  char* end = nullptr;
  const auto v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("FSRA_SEED must be an unsigned integer, got '") + s + "'");
  return v;
}

bool file_has_seed(const fs::path& config) {
  std::ifstream in(config);
  auto j = nlohmann::json::parse(in, nullptr, false);
  return !j.is_discarded() && j.contains("train") && j["train"].is_object() && j["train"].contains("seed");
}

// FSRA_SEED fills in train.seed when neither the file nor an override sets it.
RunConfig load_with_seed(const fs::path& config, std::vector<std::string> overrides) {
  if (!file_has_seed(config)) {
    if (auto s = env_seed()) overrides.insert(overrides.begin(), "train.seed=" + std::to_string(*s));
  }
  return load_run_config(config, overrides);
}

std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (tok.empty()) continue;
    std::size_t pos = 0;
    const auto v = std::stoul(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument("bad pad width '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("no pad widths given");
  return out;
}

void print_epoch(const EpochSummary& s) {
  std::fprintf(stderr, "epoch %zu: %zu steps, %zu images, id %.4f triplet %.4f kl %.4f total %.4f\n",
               s.epoch, s.steps, s.images, s.mean_id, s.mean_triplet, s.mean_kl, s.mean_total);
  if (s.replacement_warnings > 0) {
    std::fprintf(stderr, "  %zu classes sampled drone images with replacement\n", s.replacement_warnings);
  }
}

struct SynthArgs {
  SynthSpec spec;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  SynthSpec spec = a.spec;
  if (a.seed) {
    spec.seed = *a.seed;
  } else if (auto s = env_seed()) {
    spec.seed = *s;
  }
  const auto manifest = synth_generate(spec, a.out);
  std::cout << manifest.string() << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string resume;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  auto overrides = a.overrides;
  if (!a.out.empty()) overrides.push_back("out=" + nlohmann::json(a.out).dump());
  const RunConfig cfg = load_with_seed(a.config, overrides);
  TrainOptions opts;
  opts.resume = a.resume;
  opts.on_epoch = print_epoch;
  const auto result = train(cfg, opts);
  if (result.final_checkpoint.empty() || !fs::is_regular_file(result.final_checkpoint)) {
    std::cerr << "no checkpoint was written\n";
    return 1;
  }
  std::cout << result.final_checkpoint.string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string dataset;
  std::string direction = "d2s";
  std::string pad_mode;
  std::string pad_widths;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const auto ckpt = load_checkpoint(a.ckpt);
  auto model = model_from_checkpoint(ckpt);
  const fs::path dataset = a.dataset.empty() ? ckpt.config.test_root : fs::path(a.dataset);
  if (dataset.empty()) throw ConfigError("no --dataset given and the checkpoint names no test set");
  const auto direction = parse_direction(a.direction);
  std::optional<RobustnessRequest> robustness;
  if (!a.pad_mode.empty() || !a.pad_widths.empty()) {
    robustness = RobustnessRequest{parse_pad_mode(a.pad_mode.empty() ? "BP" : a.pad_mode),
                                   parse_widths(a.pad_widths.empty() ? "0" : a.pad_widths)};
  }
  const auto outcome = evaluate_model(model, dataset, direction, ckpt.config.eval, robustness);
  const fs::path out = a.out.empty() ? fs::path(a.ckpt).parent_path() : fs::path(a.out);
  fs::create_directories(out);
  write_eval_report(out / "eval_report.json", outcome.report, direction, ckpt.config_hash, ckpt.epoch,
                    dataset_fingerprint(dataset));
  std::cout << (out / "eval_report.json").string() << '\n';
  if (robustness) {
    const auto csv = out / (std::string("robustness_") + pad_mode_name(robustness->mode) + ".csv");
    write_robustness_csv(csv, outcome.robustness);
    std::cout << csv.string() << '\n';
  }
  const auto& r = outcome.report;
  std::fprintf(stderr, "%s: R@1 %.4f AP %.4f R@Top1%% %.4f over %zu queries (%zu excluded)\n",
               direction_name(direction), r.recall_at.count(1) ? r.recall_at.at(1) : 0.0, r.ap,
               r.recall_top1pct, r.queries, r.excluded);
  return 0;
}

struct HeatArgs {
  std::string ckpt;
  std::string image;
  std::optional<std::size_t> regions;
  std::string out;
  bool graymap = false;
};

int cmd_heat(const HeatArgs& a) {
  const auto ckpt = load_checkpoint(a.ckpt);
  auto model = model_from_checkpoint(ckpt);
  const auto img = read_image(a.image);
  const std::size_t n = a.regions.value_or(std::max<std::size_t>(ckpt.config.model.head.regions, 1));
  const auto map = heat_map(model, img, n);
  fs::create_directories(a.out);
  const std::string stem = fs::path(a.image).stem().string();
  write_heat_map(map, a.out, stem, a.graymap);
  std::cout << (fs::path(a.out) / (stem + ".heat.csv")).string() << '\n';
  return 0;
}

struct SweepArgs {
  std::string param;
  std::vector<std::string> values;
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
};

int cmd_sweep(const SweepArgs& a) {
  if (a.param != "regions" && a.param != "k" && a.param != "image-size") {
    throw std::invalid_argument("--param must be regions, k or image-size");
  }
  if (a.values.empty()) throw std::invalid_argument("--values is empty");
  const RunConfig base = load_with_seed(a.config, a.overrides);
  const fs::path out = a.out.empty() ? base.out / ("sweep_" + a.param) : fs::path(a.out);
  fs::create_directories(out);
  const fs::path csv_path = out / ("sweep_" + a.param + ".csv");
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write '" + csv_path.string() + "'");
  csv << "param,value,R@1_d2s,AP_d2s,R@1_s2d,AP_s2d,status\n";
  std::size_t failures = 0;
  for (const auto& v : a.values) {
    auto overrides = a.overrides;
    overrides.push_back(a.param + "=" + v);
    overrides.push_back("out=" + nlohmann::json((out / (a.param + "_" + v)).generic_string()).dump());
    std::string row = a.param + "," + v + ",";
    try {
      const RunConfig cfg = load_with_seed(a.config, overrides);
      if (cfg.test_root.empty()) throw ConfigError("config names no data.test_root");
      TrainOptions opts;
      opts.on_epoch = print_epoch;
      const auto result = train(cfg, opts);
      auto model = model_from_checkpoint(load_checkpoint(result.final_checkpoint));
      const auto d2s = evaluate_model(model, cfg.test_root, Direction::kDroneToSatellite, cfg.eval).report;
      const auto s2d = evaluate_model(model, cfg.test_root, Direction::kSatelliteToDrone, cfg.eval).report;
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,ok", d2s.recall_at.at(1), d2s.ap,
                    s2d.recall_at.at(1), s2d.ap);
      row += buf;
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << a.param << "=" << v << " failed: " << e.what() << '\n';
      row += "nan,nan,nan,nan,failed";
    }
    csv << row << '\n';
    csv.flush();
  }
  if (!csv) throw std::runtime_error("write failed for '" + csv_path.string() + "'");
  std::cout << csv_path.string() << '\n';
  if (failures > 0) std::cerr << failures << " of " << a.values.size() << " runs failed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"FSRA cross-view geo-localization lab"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Generate a synthetic drone/satellite dataset");
  s->add_option("--classes", synth.spec.classes)->capture_default_str();
  s->add_option("--drone-per-class", synth.spec.drone_per_class)->capture_default_str();
  s->add_option("--size", synth.spec.image_size)->capture_default_str();
  s->add_option("--seed", synth.seed, "Defaults to FSRA_SEED, then 7");
  s->add_option("--distractors", synth.spec.distractors)->capture_default_str();
  s->add_option("--test-drone-per-class", synth.spec.test_drone_per_class)->capture_default_str();
  s->add_option("--format", synth.spec.format)->check(CLI::IsMember({"png", "raw"}))->capture_default_str();
  s->add_option("--out", synth.out)->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model from a run config");
  t->add_option("--config", tr.config)->required()->check(CLI::ExistingFile);
  t->add_option("--override", tr.overrides, "key=value, repeatable");
  t->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Output directory (overrides the config)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a test split");
  e->add_option("--ckpt", ev.ckpt)->required()->check(CLI::ExistingFile);
  e->add_option("--dataset", ev.dataset, "Test split root (default: the config's test_root)");
  e->add_option("--direction", ev.direction)->check(CLI::IsMember({"d2s", "s2d"}))->capture_default_str();
  e->add_option("--pad-mode", ev.pad_mode, "BP or FP");
  e->add_option("--pad-widths", ev.pad_widths, "Comma-separated widths in pixels");
  e->add_option("--out", ev.out, "Output directory (default: the checkpoint's directory)");

  HeatArgs hd;
  auto* h = app.add_subcommand("heat-dump", "Write the heat map and region map of one image");
  h->add_option("--ckpt", hd.ckpt)->required()->check(CLI::ExistingFile);
  h->add_option("--image", hd.image)->required()->check(CLI::ExistingFile);
  h->add_option("--regions", hd.regions, "Default: the model's region count");
  h->add_option("--out", hd.out)->required();
  h->add_flag("--graymap", hd.graymap, "Also write PGM graymaps");

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "Train and evaluate once per parameter value");
  w->add_option("--param", sw.param)->required()->check(CLI::IsMember({"regions", "k", "image-size"}));
  w->add_option("--values", sw.values)->required()->delimiter(',');
  w->add_option("--config", sw.config)->required()->check(CLI::ExistingFile);
  w->add_option("--override", sw.overrides, "key=value applied to every run, repeatable");
  w->add_option("--out", sw.out, "Output directory (default: <config out>/sweep_<param>)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (h->parsed()) return cmd_heat(hd);
    if (w->parsed()) return cmd_sweep(sw);
  } catch (const TrainingHalted& ex) {
    std::cerr << "training halted: " << ex.what() << '\n';
    return 3;
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}
