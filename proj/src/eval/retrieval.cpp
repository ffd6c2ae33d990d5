#include "fsra/eval/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace fsra {

RetrievalReport evaluate_distances(const std::vector<double>& distances,
                                   const std::vector<int>& query_labels,
                                   const std::vector<int>& gallery_labels,
                                   const std::vector<std::size_t>& ks) {
  const std::size_t q = query_labels.size();
  const std::size_t g = gallery_labels.size();
  if (q == 0 || g == 0) throw std::invalid_argument("evaluate: query and gallery must be nonempty");
  if (distances.size() != q * g) throw std::invalid_argument("evaluate: distance matrix size mismatch");
  RetrievalReport r;
  r.top1pct_k = (g + 99) / 100;
  for (auto k : ks) r.recall_at[k] = 0.0;
  std::size_t top1pct_hits = 0;
  double ap_sum = 0.0;
  std::vector<std::size_t> order(g);
  for (std::size_t i = 0; i < q; ++i) {
    const double* row = distances.data() + i * g;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [row](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    std::size_t hits = 0, first = 0;
    double precision_sum = 0.0;
    for (std::size_t rank = 0; rank < g; ++rank) {
      if (gallery_labels[order[rank]] != query_labels[i]) continue;
      ++hits;
      if (first == 0) first = rank + 1;
      precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
    if (hits == 0) {
      ++r.excluded;
      continue;
    }
    ++r.queries;
    r.first_match_rank.push_back(first);
    ap_sum += precision_sum / static_cast<double>(hits);
    for (auto& [k, v] : r.recall_at) {
      if (first <= k) v += 1.0;
    }
    if (first <= r.top1pct_k) ++top1pct_hits;
  }
  if (r.queries > 0) {
    const double n = static_cast<double>(r.queries);
    r.ap = ap_sum / n;
    for (auto& [k, v] : r.recall_at) v /= n;
    r.recall_top1pct = static_cast<double>(top1pct_hits) / n;
  }
  return r;
}

ImageSet load_view(const DatasetIndex& index, ViewTag view, std::size_t side) {
  ImageSet s;
  for (const auto& c : index.classes) {
    for (const auto& p : c.images(view)) {
      s.images.push_back(resize_bilinear(read_image(p), side, side));
      s.labels.push_back(c.id);
      s.paths.push_back(p);
    }
  }
  return s;
}

EmbeddingSet extract(FsraModel<float>& model, const std::vector<Image>& images,
                     const std::vector<std::string>& labels, std::size_t batch_size) {
  if (images.size() != labels.size()) throw std::invalid_argument("extract: one label per image");
  if (batch_size == 0) throw std::invalid_argument("extract: batch size must be positive");
  const std::size_t side = model.config().backbone.image_size;
  for (const auto& img : images) {
    if (img.width != side || img.height != side) {
      throw std::invalid_argument("extract: image is " + std::to_string(img.width) + "x" +
                                  std::to_string(img.height) + ", model expects " +
                                  std::to_string(side) + "x" + std::to_string(side));
    }
  }
  EmbeddingSet out;
  out.dim = model.descriptor_dim();
  out.labels = labels;
  out.descriptors.reserve(images.size() * out.dim);
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, images.size());
    std::vector<const Image*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&images[i]);
    const auto d = model.describe(images_to_tensor(batch));
    out.descriptors.insert(out.descriptors.end(), d.data().begin(), d.data().end());
  }
  return out;
}

RetrievalReport evaluate(const EmbeddingSet& query, const EmbeddingSet& gallery,
                         const std::vector<std::size_t>& ks) {
  if (query.dim != gallery.dim) throw std::invalid_argument("evaluate: descriptor sizes differ");
  std::unordered_map<std::string, int> ids;
  auto id_of = [&](const std::string& s) {
    return ids.emplace(s, static_cast<int>(ids.size())).first->second;
  };
  std::vector<int> ql, gl;
  for (const auto& s : gallery.labels) gl.push_back(id_of(s));
  for (const auto& s : query.labels) ql.push_back(id_of(s));
  const std::size_t q = query.size(), g = gallery.size(), d = query.dim;
  std::vector<double> dist(q * g);
  for (std::size_t i = 0; i < q; ++i) {
    const float* a = query.descriptors.data() + i * d;
    for (std::size_t j = 0; j < g; ++j) {
      const float* b = gallery.descriptors.data() + j * d;
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = static_cast<double>(a[t]) - static_cast<double>(b[t]);
        s += diff * diff;
      }
      dist[i * g + j] = std::sqrt(s);
    }
  }
  return evaluate_distances(dist, ql, gl, ks);
}

PadMode parse_pad_mode(const std::string& s) {
  if (s == "BP" || s == "bp" || s == "black") return PadMode::kBlack;
  if (s == "FP" || s == "fp" || s == "flip") return PadMode::kFlip;
  throw std::invalid_argument("pad mode must be BP or FP, got '" + s + "'");
}

const char* pad_mode_name(PadMode m) { return m == PadMode::kBlack ? "BP" : "FP"; }

std::vector<RobustnessRow> robustness_sweep(FsraModel<float>& model, const ImageSet& queries,
                                            const EmbeddingSet& gallery, PadMode mode,
                                            const std::vector<std::size_t>& widths,
                                            std::size_t batch_size) {
  auto run = [&](std::size_t w) {
    std::vector<Image> padded;
    padded.reserve(queries.size());
    for (const auto& img : queries.images) {
      padded.push_back(mode == PadMode::kBlack ? black_pad(img, w) : flip_pad(img, w));
    }
    const auto report = evaluate(extract(model, padded, queries.labels, batch_size), gallery, {1});
    RobustnessRow row;
    row.width = w;
    row.recall1 = report.recall_at.at(1);
    row.ap = report.ap;
    return row;
  };
  std::vector<RobustnessRow> rows;
  for (auto w : widths) rows.push_back(run(w));
  auto zero = std::find_if(rows.begin(), rows.end(), [](const RobustnessRow& r) { return r.width == 0; });
  const double ap0 = zero != rows.end() ? zero->ap : run(0).ap;
  for (auto& r : rows) r.delta_ap = r.ap - ap0;
  return rows;
}

void write_robustness_csv(const std::filesystem::path& path, const std::vector<RobustnessRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "width,R@1,AP,ΔAP\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f\n", r.width, r.recall1, r.ap, r.delta_ap);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace fsra
