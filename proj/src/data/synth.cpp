#include "fsra/data/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsra/data/dataset.hpp"
#include "fsra/util/rng.hpp"

namespace fsra {

namespace fs = std::filesystem;
using Rgb = std::array<double, 3>;

namespace {

enum : std::uint64_t { kSceneStream = 1, kTrainStream = 2, kTestStream = 3 };

struct Shape2D {
  bool disc = false;
  double cx = 0, cy = 0;
  double hw = 0, hh = 0;  // half extents (disc: radius in hw)
  double angle = 0;
  Rgb color{};
};

struct Scene {
  Rgb base{};
  Rgb tint{};
  std::array<double, 2> freq{}, phase{}, dir{};
  std::uint64_t noise_key = 0;
  std::vector<Shape2D> shapes;
};

Rgb hsv(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(h);
  const double f = h - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Scene make_scene(const SynthSpec& spec, std::size_t cls) {
  auto rng = make_rng(spec.seed, {kSceneStream, cls});
  Scene s;
  s.base = hsv(uniform(rng, 0, 1), uniform(rng, 0.2, 0.5), uniform(rng, 0.3, 0.6));
  s.tint = hsv(uniform(rng, 0, 1), uniform(rng, 0.2, 0.6), uniform(rng, 0.4, 0.8));
  for (int i = 0; i < 2; ++i) {
    s.freq[i] = uniform(rng, 3.0, 9.0);
    s.phase[i] = uniform(rng, 0, 2 * std::numbers::pi);
    s.dir[i] = uniform(rng, 0, std::numbers::pi);
  }
  s.noise_key = rng();
  // A central landmark, then surrounding structures.
  Shape2D landmark;
  landmark.disc = bernoulli(rng, 0.5);
  landmark.cx = 0.5 + uniform(rng, -0.05, 0.05);
  landmark.cy = 0.5 + uniform(rng, -0.05, 0.05);
  landmark.hw = uniform(rng, 0.10, 0.18);
  landmark.hh = uniform(rng, 0.08, 0.18);
  landmark.angle = uniform(rng, 0, std::numbers::pi);
  landmark.color = hsv(uniform(rng, 0, 1), uniform(rng, 0.5, 1.0), uniform(rng, 0.6, 1.0));
  s.shapes.push_back(landmark);
  const int extra = 3 + static_cast<int>(rng() % 4);
  for (int i = 0; i < extra; ++i) {
    Shape2D sh;
    sh.disc = bernoulli(rng, 0.4);
    sh.cx = uniform(rng, 0.1, 0.9);
    sh.cy = uniform(rng, 0.1, 0.9);
    sh.hw = uniform(rng, 0.04, 0.12);
    sh.hh = uniform(rng, 0.04, 0.12);
    sh.angle = uniform(rng, 0, std::numbers::pi);
    sh.color = hsv(uniform(rng, 0, 1), uniform(rng, 0.3, 1.0), uniform(rng, 0.2, 1.0));
    s.shapes.push_back(sh);
  }
  return s;
}

double lattice(std::uint64_t key, long x, long y) {
  std::uint64_t h = key ^ (static_cast<std::uint64_t>(x) * 0x9e3779b97f4a7c15ull) ^
                    (static_cast<std::uint64_t>(y) * 0xc2b2ae3d27d4eb4full);
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(std::uint64_t key, double u, double v) {
  const double x = u * 16.0, y = v * 16.0;
  const long x0 = static_cast<long>(std::floor(x)), y0 = static_cast<long>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
  const double a = lattice(key, x0, y0), b = lattice(key, x0 + 1, y0);
  const double c = lattice(key, x0, y0 + 1), d = lattice(key, x0 + 1, y0 + 1);
  return (a * (1 - sx) + b * sx) * (1 - sy) + (c * (1 - sx) + d * sx) * sy;
}

Rgb shade(const Scene& s, double u, double v) {
  double wave = 0.0;
  for (int i = 0; i < 2; ++i) {
    wave += std::sin(s.freq[i] * 2 * std::numbers::pi *
                         (u * std::cos(s.dir[i]) + v * std::sin(s.dir[i])) +
                     s.phase[i]);
  }
  const double mix = 0.5 + 0.25 * wave;
  const double grain = value_noise(s.noise_key, u, v) - 0.5;
  Rgb c;
  for (int k = 0; k < 3; ++k) c[k] = s.base[k] * (1 - 0.35 * mix) + s.tint[k] * 0.35 * mix + 0.12 * grain;
  for (const auto& sh : s.shapes) {
    const double dx = u - sh.cx, dy = v - sh.cy;
    bool inside;
    if (sh.disc) {
      inside = dx * dx + dy * dy <= sh.hw * sh.hw;
    } else {
      const double ca = std::cos(sh.angle), sa = std::sin(sh.angle);
      const double lx = ca * dx + sa * dy, ly = -sa * dx + ca * dy;
      inside = std::abs(lx) <= sh.hw && std::abs(ly) <= sh.hh;
    }
    if (inside) c = sh.color;
  }
  return c;
}

Rgb hue_rotate(const Rgb& c, double deg) {
  const double a = deg * std::numbers::pi / 180.0;
  const double cs = std::cos(a), sn = std::sin(a), k = 1.0 / 3.0, r = std::sqrt(k);
  const double m0 = cs + (1 - cs) * k, m1 = k * (1 - cs) - r * sn, m2 = k * (1 - cs) + r * sn;
  return {c[0] * m0 + c[1] * m1 + c[2] * m2, c[0] * m2 + c[1] * m0 + c[2] * m1,
          c[0] * m1 + c[1] * m2 + c[2] * m0};
}

ViewTransform random_transform(const SynthSpec& spec, std::mt19937_64& rng) {
  ViewTransform t;
  t.rotation_deg = uniform(rng, -spec.max_rotation_deg, spec.max_rotation_deg);
  t.scale = uniform(rng, spec.min_scale, spec.max_scale);
  t.tx = uniform(rng, -spec.max_translation, spec.max_translation);
  t.ty = uniform(rng, -spec.max_translation, spec.max_translation);
  t.brightness = 1.0 + uniform(rng, -spec.max_brightness, spec.max_brightness);
  t.hue_deg = uniform(rng, -spec.max_hue_deg, spec.max_hue_deg);
  return t;
}

nlohmann::json transform_json(const ViewTransform& t) {
  return {{"rotation_deg", t.rotation_deg}, {"scale", t.scale},       {"tx", t.tx},
          {"ty", t.ty},                     {"brightness", t.brightness}, {"hue_deg", t.hue_deg}};
}

}  // namespace

void SynthSpec::validate() const {
  if (classes == 0) throw std::invalid_argument("synth: classes must be positive");
  if (drone_per_class == 0) throw std::invalid_argument("synth: drone_per_class must be positive");
  if (image_size < 8) throw std::invalid_argument("synth: image size must be at least 8");
  if (!(min_scale > 0.0) || min_scale > max_scale) throw std::invalid_argument("synth: bad scale range");
  if (format != "png" && format != "raw") throw std::invalid_argument("synth: format is png or raw");
}

std::string class_id(std::size_t cls) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", cls);
  return buf;
}

Image render_scene(const SynthSpec& spec, std::size_t cls, const ViewTransform& t) {
  const Scene scene = make_scene(spec, cls);
  const std::size_t n = spec.image_size;
  Image img(n, n);
  const double a = t.rotation_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  constexpr int kSuper = 2;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      Rgb acc{0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = (x + (sx + 0.5) / kSuper) / n - 0.5;
          const double py = (y + (sy + 0.5) / kSuper) / n - 0.5;
          const double u = (ca * px - sa * py) / t.scale + 0.5 + t.tx;
          const double v = (sa * px + ca * py) / t.scale + 0.5 + t.ty;
          const Rgb c = shade(scene, u, v);
          for (int k = 0; k < 3; ++k) acc[k] += c[k];
        }
      }
      Rgb c;
      for (int k = 0; k < 3; ++k) c[k] = acc[k] / (kSuper * kSuper);
      if (t.hue_deg != 0.0) c = hue_rotate(c, t.hue_deg);
      for (int k = 0; k < 3; ++k) {
        img.at(y, x, k) = static_cast<float>(std::clamp(c[k] * t.brightness, 0.0, 1.0));
      }
    }
  }
  return img;
}

fs::path synth_generate(const SynthSpec& spec, const fs::path& out_root) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec || !fs::is_directory(out_root)) {
    throw std::runtime_error("cannot create output directory '" + out_root.string() + "'");
  }
  const std::string ext = "." + spec.format;
  nlohmann::json images = nlohmann::json::array();
  auto emit = [&](const std::string& split, ViewTag view, std::size_t cls, std::size_t idx,
                  const ViewTransform& t) {
    const fs::path rel = fs::path(split) / view_name(view) / class_id(cls) /
                         (std::string(view_name(view)) + "_" + std::to_string(idx) + ext);
    fs::create_directories((out_root / rel).parent_path());
    write_image(out_root / rel, render_scene(spec, cls, t));
    auto rec = transform_json(t);
    rec["path"] = rel.generic_string();
    rec["split"] = split;
    rec["view"] = view_name(view);
    rec["class"] = class_id(cls);
    images.push_back(std::move(rec));
  };

  for (std::size_t c = 0; c < spec.classes; ++c) {
    emit("train", ViewTag::kSatellite, c, 0, ViewTransform{});
    auto train_rng = make_rng(spec.seed, {kTrainStream, c});
    for (std::size_t i = 0; i < spec.drone_per_class; ++i) {
      emit("train", ViewTag::kDrone, c, i, random_transform(spec, train_rng));
    }
    auto test_rng = make_rng(spec.seed, {kTestStream, c});
    for (std::size_t i = 0; i < spec.test_drone_per_class; ++i) {
      emit("test", ViewTag::kDrone, c, i, random_transform(spec, test_rng));
    }
  }
  for (std::size_t c = 0; c < spec.classes + spec.distractors; ++c) {
    emit("test", ViewTag::kSatellite, c, 0, ViewTransform{});
  }

  nlohmann::json manifest;
  manifest["generator"] = {
      {"classes", spec.classes},
      {"drone_per_class", spec.drone_per_class},
      {"image_size", spec.image_size},
      {"distractors", spec.distractors},
      {"test_drone_per_class", spec.test_drone_per_class},
      {"format", spec.format},
      {"bounds",
       {{"rotation_deg", spec.max_rotation_deg},
        {"scale", {spec.min_scale, spec.max_scale}},
        {"translation", spec.max_translation},
        {"brightness", spec.max_brightness},
        {"hue_deg", spec.max_hue_deg}}}};
  manifest["seed"] = spec.seed;
  manifest["images"] = std::move(images);
  const fs::path path = out_root / "manifest.json";
  std::ofstream out(path);
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return path;
}

}  // namespace fsra
