#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "fsra/data/image.hpp"

namespace fsra {

struct SynthSpec {
  std::size_t classes = 32;
  std::size_t drone_per_class = 8;
  std::size_t image_size = 64;
  std::uint64_t seed = 7;
  // Extra satellite-only classes added to the test gallery.
  std::size_t distractors = 16;
  // Unseen drone views per class in the test split.
  std::size_t test_drone_per_class = 8;
  std::string format = "png";  // or "raw"

  double max_rotation_deg = 15.0;
  double min_scale = 0.7;
  double max_scale = 1.3;
  double max_translation = 0.12;  // fraction of the width
  double max_brightness = 0.15;
  double max_hue_deg = 10.0;

  void validate() const;
};

// Parameters of one drone view relative to its satellite scene.
struct ViewTransform {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double tx = 0.0;  // fraction of the width
  double ty = 0.0;
  double brightness = 1.0;
  double hue_deg = 0.0;
};

// Renders class `cls`'s scene under `t`. The identity transform gives the
// satellite image.
Image render_scene(const SynthSpec& spec, std::size_t cls, const ViewTransform& t);

// Writes
//   out/train/{satellite,drone}/<class>/...   the `classes` paired classes
//   out/test/drone/<class>/...                held-out drone views
//   out/test/satellite/<class>/...            all paired classes plus distractors
//   out/manifest.json
// and returns the manifest path. Same spec, same bytes.
std::filesystem::path synth_generate(const SynthSpec& spec, const std::filesystem::path& out_root);

std::string class_id(std::size_t cls);

}  // namespace fsra
