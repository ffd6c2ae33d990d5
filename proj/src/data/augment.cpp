#include "fsra/data/augment.hpp"

#include <algorithm>

#include "fsra/util/rng.hpp"

namespace fsra {

namespace {

long random_offset(std::mt19937_64& rng, std::size_t max) {
  return std::uniform_int_distribution<long>(-static_cast<long>(max), static_cast<long>(max))(rng);
}

// out(y, x) = in(y − dy, x − dx), clamped to the nearest edge.
Image translate(const Image& in, long dx, long dy) {
  Image out(in.width, in.height);
  const long w = static_cast<long>(in.width), h = static_cast<long>(in.height);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const long sy = std::clamp(y - dy, 0L, h - 1), sx = std::clamp(x - dx, 0L, w - 1);
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            in.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
      }
    }
  }
  return out;
}

}  // namespace

Image augment(const Image& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
  Image img = image;
  if (bernoulli(rng, cfg.flip_p)) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width / 2; ++x) {
        for (std::size_t c = 0; c < 3; ++c) std::swap(img.at(y, x, c), img.at(y, img.width - 1 - x, c));
      }
    }
  }
  // Edge padding by `max_pad` on every side, then a random crop of the
  // original size, is a translation with edge fill.
  if (bernoulli(rng, cfg.pad_crop_p) && cfg.max_pad > 0) {
    img = translate(img, random_offset(rng, cfg.max_pad), random_offset(rng, cfg.max_pad));
  }
  if (bernoulli(rng, cfg.shift_p) && cfg.max_shift > 0) {
    img = translate(img, random_offset(rng, cfg.max_shift), random_offset(rng, cfg.max_shift));
  }
  if (bernoulli(rng, cfg.jitter_p) && cfg.max_jitter > 0.0) {
    const float brightness = static_cast<float>(1.0 + uniform(rng, -cfg.max_jitter, cfg.max_jitter));
    const float contrast = static_cast<float>(1.0 + uniform(rng, -cfg.max_jitter, cfg.max_jitter));
    double mean = 0.0;
    for (float v : img.pixels) mean += v;
    const float m = static_cast<float>(mean / static_cast<double>(img.pixels.size()));
    for (auto& v : img.pixels) v = std::clamp((m + (v - m) * contrast) * brightness, 0.0f, 1.0f);
  }
  return img;
}

}  // namespace fsra
