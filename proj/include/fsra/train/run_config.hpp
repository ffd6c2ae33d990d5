#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsra/data/augment.hpp"
#include "fsra/data/sampler.hpp"
#include "fsra/losses.hpp"
#include "fsra/model/fsra_model.hpp"
#include "fsra/train/optimizer.hpp"

namespace fsra {

struct TrainConfig {
  std::size_t epochs = 120;
  SgdConfig sgd;
  std::vector<std::size_t> milestones{70, 110};
  // Milestones are stated for a run of this many epochs and rescaled to `epochs`.
  std::size_t milestone_reference = 120;
  double decay_factor = 0.1;
  std::uint64_t seed = 0;
  // "all" keeps every ckpt_epoch_<e>.bin, "last" only the newest.
  std::string keep_checkpoints = "all";
  AugmentConfig augment;

  LrSchedule schedule() const;
  void validate() const;
};

struct EvalConfig {
  std::vector<std::size_t> recall_ks{1, 5, 10};
  std::size_t batch_size = 32;
};

/// Everything needed to reproduce a run. Serialized as a JSON tree:
///   model.backbone.*, model.head.*, loss.*, sampler.*, train.*, eval.*,
///   data.train_root, data.test_root, out
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  SamplerConfig sampler;  // seed is taken from train.seed
  TrainConfig train;
  EvalConfig eval;
  std::filesystem::path train_root;
  std::filesystem::path test_root;
  std::filesystem::path out;

  // Vit-Micro with n=3, k=1 and the default recipe.
  static RunConfig defaults();

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);

// Fields absent from `j` keep their defaults. Unknown keys throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);

// key=value with a dotted key or one of the short aliases (regions, k,
// image-size, epochs, seed, batch-size). The value is parsed as JSON when
// possible, otherwise taken as a string.
void apply_override(nlohmann::json& tree, const std::string& assignment);

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

// Hash of the canonical JSON without the output directory, 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace fsra
