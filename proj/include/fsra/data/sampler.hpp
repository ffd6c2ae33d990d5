#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fsra/data/dataset.hpp"

namespace fsra {

struct SamplerConfig {
  std::size_t k = 1;
  std::size_t batch_size = 8;  // pairs per step
  std::uint64_t seed = 0;

  void validate() const;
};

// One class-aligned training pair: a satellite copy and a drone image.
struct TrainPair {
  int label = 0;              // position in DatasetIndex::paired()
  std::size_t class_index = 0;  // position in DatasetIndex::classes
  std::size_t drone_image = 0;
  std::uint32_t satellite_copy = 0;  // 0..k−1, each augmented independently
};

struct EpochSchedule {
  std::vector<TrainPair> pairs;
  std::size_t batch_size = 0;
  // Number of classes whose drone images had to be drawn with replacement.
  std::size_t replacement_warnings = 0;

  std::size_t steps() const { return (pairs.size() + batch_size - 1) / batch_size; }
  // The last batch may be partial.
  std::vector<TrainPair> batch(std::size_t step) const;
  std::size_t image_count() const { return 2 * pairs.size(); }
};

/// Every paired class contributes k satellite copies and k drone images
/// (distinct where the class has at least k), shuffled by (seed, epoch).
EpochSchedule multiple_sample(const DatasetIndex& index, const SamplerConfig& config,
                              std::size_t epoch);

}  // namespace fsra
