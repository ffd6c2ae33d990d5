#include "fsra/eval/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "fsra/util/hash.hpp"

namespace fsra {

namespace fs = std::filesystem;

Direction parse_direction(const std::string& s) {
  if (s == "d2s") return Direction::kDroneToSatellite;
  if (s == "s2d") return Direction::kSatelliteToDrone;
  throw std::invalid_argument("direction must be d2s or s2d, got '" + s + "'");
}

const char* direction_name(Direction d) {
  return d == Direction::kDroneToSatellite ? "d2s" : "s2d";
}

std::string dataset_fingerprint(const fs::path& root) {
  for (const auto& candidate : {root / "manifest.json", root.parent_path() / "manifest.json"}) {
    if (fs::is_regular_file(candidate)) return file_hash(candidate);
  }
  std::vector<std::pair<std::string, std::uintmax_t>> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), root).generic_string(), e.file_size());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a64("");
  for (const auto& [name, size] : files) h = fnv1a64(name + ":" + std::to_string(size) + "\n", h);
  return hex64(h);
}

EvalOutcome evaluate_model(FsraModel<float>& model, const fs::path& test_root, Direction direction,
                           const EvalConfig& eval, const std::optional<RobustnessRequest>& robustness) {
  const auto index = scan_dataset(test_root);
  const std::size_t side = model.config().backbone.image_size;
  const ViewTag qv = direction == Direction::kDroneToSatellite ? ViewTag::kDrone : ViewTag::kSatellite;
  const ViewTag gv = direction == Direction::kDroneToSatellite ? ViewTag::kSatellite : ViewTag::kDrone;
  const auto queries = load_view(index, qv, side);
  const auto gallery_images = load_view(index, gv, side);
  if (queries.size() == 0 || gallery_images.size() == 0) {
    throw ConfigError("dataset '" + test_root.string() + "' has no " + view_name(qv) + " queries or " +
                      view_name(gv) + " gallery images");
  }
  const auto gallery = extract(model, gallery_images.images, gallery_images.labels, eval.batch_size);
  EvalOutcome out;
  out.report = evaluate(extract(model, queries.images, queries.labels, eval.batch_size), gallery,
                        eval.recall_ks);
  if (robustness) {
    out.robustness = robustness_sweep(model, queries, gallery, robustness->mode, robustness->widths,
                                      eval.batch_size);
  }
  return out;
}

nlohmann::json report_json(const RetrievalReport& r) {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [k, v] : r.recall_at) recall["R@" + std::to_string(k)] = v;
  return {{"recall", recall},
          {"AP", r.ap},
          {"R@Top1%", r.recall_top1pct},
          {"top1pct_k", r.top1pct_k},
          {"queries", r.queries},
          {"excluded_queries", r.excluded}};
}

void write_eval_report(const fs::path& path, const RetrievalReport& report, Direction direction,
                       const std::string& config_hash, std::size_t epoch,
                       const std::string& dataset_hash) {
  nlohmann::json j;
  j["direction"] = direction_name(direction);
  j["metrics"] = report_json(report);
  j["config_hash"] = config_hash;
  j["checkpoint_epoch"] = epoch;
  j["dataset_manifest_hash"] = dataset_hash;
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

HeatMap heat_map(FsraModel<float>& model, const Image& image, std::size_t regions) {
  const auto& bc = model.config().backbone;
  const Image sized = resize_bilinear(image, bc.image_size, bc.image_size);
  BackboneOutput<float> out;
  {
    NoGradGuard no_grad;
    out = model.backbone()(images_to_tensor({&sized}), ForwardContext{});
  }
  const auto heat = patch_heat(out.patches);
  const auto part = partition(heat, regions);
  HeatMap m;
  m.grid = bc.grid();
  m.sizes = part.sizes;
  for (std::size_t c = 0; c < part.num_patches; ++c) {
    m.heat.push_back(heat.data()[c]);
    m.region.push_back(part.region_of(0, c) + 1);
  }
  return m;
}

void write_heat_map(const HeatMap& map, const fs::path& dir, const std::string& stem, bool graymaps) {
  auto write_csv = [&](const fs::path& path, auto value) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out.precision(9);
    for (std::size_t y = 0; y < map.grid; ++y) {
      for (std::size_t x = 0; x < map.grid; ++x) {
        out << value(y * map.grid + x) << (x + 1 == map.grid ? '\n' : ',');
      }
    }
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
  };
  write_csv(dir / (stem + ".heat.csv"), [&](std::size_t i) { return map.heat[i]; });
  write_csv(dir / (stem + ".region.csv"), [&](std::size_t i) { return map.region[i]; });
  if (graymaps) {
    const auto [lo, hi] = std::minmax_element(map.heat.begin(), map.heat.end());
    write_graymap(dir / (stem + ".heat.pgm"), map.heat, map.grid, map.grid, *lo, *hi);
    std::vector<double> r(map.region.begin(), map.region.end());
    write_graymap(dir / (stem + ".region.pgm"), r, map.grid, map.grid, 1.0,
                  static_cast<double>(std::max<std::size_t>(map.sizes.size(), 2)));
  }
}

}  // namespace fsra
