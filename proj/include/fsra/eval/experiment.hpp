#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsra/eval/retrieval.hpp"
#include "fsra/train/trainer.hpp"

namespace fsra {

enum class Direction { kDroneToSatellite, kSatelliteToDrone };

Direction parse_direction(const std::string& s);  // "d2s" or "s2d"
const char* direction_name(Direction d);

// manifest.json in `root` or its parent when present, otherwise the sorted
// file list with sizes. 16 hex digits.
std::string dataset_fingerprint(const std::filesystem::path& root);

struct RobustnessRequest {
  PadMode mode = PadMode::kBlack;
  std::vector<std::size_t> widths;
};

struct EvalOutcome {
  RetrievalReport report;
  std::vector<RobustnessRow> robustness;
};

// Query and gallery views of `test_root` for `direction`.
EvalOutcome evaluate_model(FsraModel<float>& model, const std::filesystem::path& test_root,
                           Direction direction, const EvalConfig& eval,
                           const std::optional<RobustnessRequest>& robustness = std::nullopt);

nlohmann::json report_json(const RetrievalReport& report);

// eval_report.json: direction, metrics, config hash, checkpoint epoch and the
// dataset fingerprint.
void write_eval_report(const std::filesystem::path& path, const RetrievalReport& report,
                       Direction direction, const std::string& config_hash, std::size_t epoch,
                       const std::string& dataset_hash);

struct HeatMap {
  std::size_t grid = 0;                  // patches per side
  std::vector<double> heat;              // row-major grid
  std::vector<std::uint32_t> region;     // 1-based region ids, row-major grid
  std::vector<std::size_t> sizes;
};

// Patch heat of one image and its split into `regions` regions.
HeatMap heat_map(FsraModel<float>& model, const Image& image, std::size_t regions);

// <stem>.heat.csv and <stem>.region.csv (grid rows as CSV lines), plus
// <stem>.heat.pgm and <stem>.region.pgm when `graymaps` is set.
void write_heat_map(const HeatMap& map, const std::filesystem::path& dir, const std::string& stem,
                    bool graymaps);

}  // namespace fsra
