#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fsra/data/dataset.hpp"
#include "fsra/data/image.hpp"
#include "fsra/data/sampler.hpp"
#include "fsra/data/synth.hpp"
#include "fsra/eval/experiment.hpp"
#include "fsra/losses.hpp"
#include "fsra/model/head.hpp"
#include "fsra/train/trainer.hpp"
#include "fsra/util/alloc.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace fsra;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const F64Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Image to_image(const F32Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("image must be an [H,W,3] array");
  Image img(static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

py::array_t<float> from_image(const Image& img) {
  py::array_t<float> out({img.height, img.width, std::size_t{3}});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

py::dict report_dict(const RetrievalReport& r) {
  py::dict recall;
  for (const auto& [k, v] : r.recall_at) recall[py::int_(k)] = v;
  py::dict d;
  d["recall"] = recall;
  d["ap"] = r.ap;
  d["recall_top1pct"] = r.recall_top1pct;
  d["top1pct_k"] = r.top1pct_k;
  d["queries"] = r.queries;
  d["excluded"] = r.excluded;
  d["first_match_rank"] = r.first_match_rank;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "FSRA cross-view geo-localization lab";
  tune_allocator();

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<TrainingHalted>(m, "TrainingHalted", PyExc_RuntimeError);

  m.def(
      "synth_data",
      [](const fs::path& out, std::size_t classes, std::size_t drone_per_class, std::size_t size,
         std::uint64_t seed, std::size_t distractors, std::size_t test_drone_per_class) {
        SynthSpec s;
        s.classes = classes;
        s.drone_per_class = drone_per_class;
        s.image_size = size;
        s.seed = seed;
        s.distractors = distractors;
        s.test_drone_per_class = test_drone_per_class;
        return synth_generate(s, out);
      },
      py::arg("out"), py::arg("classes") = 32, py::arg("drone_per_class") = 8, py::arg("size") = 64,
      py::arg("seed") = 7, py::arg("distractors") = 16, py::arg("test_drone_per_class") = 8,
      "Writes a synthetic dataset and returns the manifest path.");

  m.def("read_image", [](const fs::path& p) { return from_image(read_image(p)); }, py::arg("path"));
  m.def(
      "black_pad", [](const F32Array& img, std::size_t w) { return from_image(black_pad(to_image(img), w)); },
      py::arg("image"), py::arg("width"));
  m.def(
      "flip_pad", [](const F32Array& img, std::size_t w) { return from_image(flip_pad(to_image(img), w)); },
      py::arg("image"), py::arg("width"));

  m.def("region_sizes", &region_sizes, py::arg("num_patches"), py::arg("regions"));
  m.def(
      "partition",
      [](const F64Array& heat, std::size_t regions) {
        if (heat.ndim() != 2) throw std::invalid_argument("heat must be [B,N]");
        const auto p = partition(to_tensor(heat), regions);
        py::array_t<std::uint32_t> out({p.batch, p.num_patches});
        std::copy(p.assignment.begin(), p.assignment.end(), out.mutable_data());
        return out;
      },
      py::arg("heat"), py::arg("regions"), "0-based region id of every patch, hottest first.");

  m.def(
      "id_loss",
      [](const F64Array& logits, const std::vector<int>& labels) {
        return id_loss(to_tensor(logits), labels).item();
      },
      py::arg("logits"), py::arg("labels"));
  m.def(
      "kl_mutual",
      [](const F64Array& a, const F64Array& b, bool literal) {
        return kl_mutual(to_tensor(a), to_tensor(b), literal).item();
      },
      py::arg("logits_a"), py::arg("logits_b"), py::arg("literal") = false);
  m.def(
      "cross_view_triplet",
      [](const F64Array& features, const std::vector<int>& labels, const std::vector<std::string>& views,
         double margin) {
        std::vector<ViewTag> v;
        for (const auto& s : views) v.push_back(parse_view(s));
        return cross_view_triplet(to_tensor(features), labels, v, margin).loss.item();
      },
      py::arg("features"), py::arg("labels"), py::arg("views"), py::arg("margin") = 0.3);

  m.def(
      "evaluate_distances",
      [](const F64Array& dist, const std::vector<int>& ql, const std::vector<int>& gl,
         const std::vector<std::size_t>& ks) {
        if (dist.ndim() != 2) throw std::invalid_argument("distances must be [Q,G]");
        return report_dict(evaluate_distances(std::vector<double>(dist.data(), dist.data() + dist.size()), ql,
                                              gl, ks));
      },
      py::arg("distances"), py::arg("query_labels"), py::arg("gallery_labels"),
      py::arg("ks") = std::vector<std::size_t>{1, 5, 10});

  m.def(
      "epoch_image_count",
      [](const fs::path& root, std::size_t k, std::size_t batch_size, std::uint64_t seed, std::size_t epoch) {
        return multiple_sample(scan_dataset(root), {k, batch_size, seed}, epoch).image_count();
      },
      py::arg("train_root"), py::arg("k"), py::arg("batch_size") = 8, py::arg("seed") = 0, py::arg("epoch") = 0);

  m.def(
      "train",
      [](const fs::path& config, const std::vector<std::string>& overrides,
         const std::optional<fs::path>& resume) {
        const auto cfg = load_run_config(config, overrides);
        TrainOptions opts;
        if (resume) opts.resume = *resume;
        py::gil_scoped_release release;
        return train(cfg, opts).final_checkpoint;
      },
      py::arg("config"), py::arg("overrides") = std::vector<std::string>{}, py::arg("resume") = py::none(),
      "Trains from a run config and returns the final checkpoint path.");

  m.def(
      "evaluate",
      [](const fs::path& ckpt_path, const std::optional<fs::path>& dataset, const std::string& direction,
         const std::string& pad_mode, const std::vector<std::size_t>& pad_widths) {
        const auto ckpt = load_checkpoint(ckpt_path);
        auto model = model_from_checkpoint(ckpt);
        std::optional<RobustnessRequest> req;
        if (!pad_widths.empty()) req = RobustnessRequest{parse_pad_mode(pad_mode), pad_widths};
        EvalOutcome out;
        {
          py::gil_scoped_release release;
          out = evaluate_model(model, dataset ? *dataset : ckpt.config.test_root,
                               parse_direction(direction), ckpt.config.eval, req);
        }
        auto d = report_dict(out.report);
        py::list rows;
        for (const auto& r : out.robustness) {
          py::dict row;
          row["width"] = r.width;
          row["recall1"] = r.recall1;
          row["ap"] = r.ap;
          row["delta_ap"] = r.delta_ap;
          rows.append(row);
        }
        d["robustness"] = rows;
        return d;
      },
      py::arg("checkpoint"), py::arg("dataset") = py::none(), py::arg("direction") = "d2s",
      py::arg("pad_mode") = "BP", py::arg("pad_widths") = std::vector<std::size_t>{});

  m.def(
      "heat_map",
      [](const fs::path& ckpt_path, const fs::path& image, std::size_t regions) {
        const auto ckpt = load_checkpoint(ckpt_path);
        auto model = model_from_checkpoint(ckpt);
        const auto h = heat_map(model, read_image(image), regions);
        py::array_t<double> heat({h.grid, h.grid});
        std::copy(h.heat.begin(), h.heat.end(), heat.mutable_data());
        py::array_t<std::uint32_t> region({h.grid, h.grid});
        std::copy(h.region.begin(), h.region.end(), region.mutable_data());
        return py::make_tuple(heat, region);
      },
      py::arg("checkpoint"), py::arg("image"), py::arg("regions"),
      "Heat grid and 1-based region grid of one image.");
}
