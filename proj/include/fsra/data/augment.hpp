#pragma once

#include <cstddef>
#include <random>

#include "fsra/data/image.hpp"

namespace fsra {

struct AugmentConfig {
  double flip_p = 0.5;
  double pad_crop_p = 0.5;
  std::size_t max_pad = 10;    // edge-replicate fill
  double shift_p = 0.5;
  std::size_t max_shift = 10;  // edge-replicate fill
  double jitter_p = 0.5;
  double max_jitter = 0.1;  // brightness and contrast, relative

  static AugmentConfig none() { return {0.0, 0.0, 0, 0.0, 0, 0.0, 0.0}; }
};

// Flip, pad-then-crop, shift and brightness/contrast jitter, each applied
// with its own probability. Output size equals input size.
Image augment(const Image& image, const AugmentConfig& config, std::mt19937_64& rng);

}  // namespace fsra
