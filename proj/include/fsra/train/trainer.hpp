#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsra/model/fsra_model.hpp"
#include "fsra/train/run_config.hpp"

namespace fsra {

// Raised on a non-finite loss or gradient. The newest checkpoint on disk is
// the last good state.
class TrainingHalted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochSummary {
  std::size_t epoch = 0;  // 1-based
  std::size_t steps = 0;
  std::size_t images = 0;
  double mean_id = 0.0;
  double mean_triplet = 0.0;
  double mean_kl = 0.0;
  double mean_total = 0.0;
  std::size_t triplet_skipped = 0;
  std::size_t replacement_warnings = 0;
};

struct TrainOptions {
  // Continue from this checkpoint (written by a run with the same config).
  std::filesystem::path resume;
  // Stop after this epoch; 0 runs to train.epochs.
  std::size_t stop_after_epoch = 0;
  std::function<void(const EpochSummary&)> on_epoch;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<EpochSummary> epochs;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch);

/// Runs the recipe in `config` on config.train_root and writes, under
/// config.out: run_config.json, train_log.csv (epoch, step, id_loss,
/// triplet, kl, total) and ckpt_epoch_<e>.bin after every epoch.
TrainResult train(const RunConfig& config, const TrainOptions& options = {});

struct LoadedCheckpoint {
  RunConfig config;
  std::size_t epoch = 0;
  std::string config_hash;
  std::vector<std::string> class_ids;  // training labels, in label order
  std::vector<NamedArray> arrays;
};

// Reads a checkpoint written by train(). Throws std::runtime_error on a
// malformed file.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Model with the checkpoint's architecture and weights.
FsraModel<float> model_from_checkpoint(const LoadedCheckpoint& ckpt);

}  // namespace fsra
