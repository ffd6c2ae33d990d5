#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fsra/data/dataset.hpp"
#include "fsra/data/image.hpp"
#include "fsra/model/fsra_model.hpp"

namespace fsra {

struct RetrievalReport {
  std::map<std::size_t, double> recall_at;  // K -> fraction of queries
  double ap = 0.0;                          // mean over evaluated queries
  double recall_top1pct = 0.0;
  std::size_t top1pct_k = 0;                // ⌈gallery / 100⌉
  std::size_t queries = 0;                  // evaluated
  std::size_t excluded = 0;                 // no true match in the gallery
  // 1-based rank of each evaluated query's first true match.
  std::vector<std::size_t> first_match_rank;
};

/// Metrics from a row-major [Q,G] distance matrix. Each query's gallery is
/// sorted by ascending distance with ties broken by gallery index. AP is the
/// mean of the precision at every true-match rank.
RetrievalReport evaluate_distances(const std::vector<double>& distances,
                                   const std::vector<int>& query_labels,
                                   const std::vector<int>& gallery_labels,
                                   const std::vector<std::size_t>& ks);

// Labelled images of one view of a split, resized to `side`.
struct ImageSet {
  std::vector<Image> images;
  std::vector<std::string> labels;  // class ids
  std::vector<std::filesystem::path> paths;

  std::size_t size() const { return images.size(); }
};

ImageSet load_view(const DatasetIndex& index, ViewTag view, std::size_t side);

struct EmbeddingSet {
  std::vector<float> descriptors;  // row-major [size, dim]
  std::size_t dim = 0;
  std::vector<std::string> labels;

  std::size_t size() const { return labels.size(); }
};

// Evaluation-mode descriptors in batches of `batch_size`. Throws
// std::invalid_argument when an image does not match the model input size.
EmbeddingSet extract(FsraModel<float>& model, const std::vector<Image>& images,
                     const std::vector<std::string>& labels, std::size_t batch_size);

RetrievalReport evaluate(const EmbeddingSet& query, const EmbeddingSet& gallery,
                         const std::vector<std::size_t>& ks);

enum class PadMode { kBlack, kFlip };

PadMode parse_pad_mode(const std::string& s);
const char* pad_mode_name(PadMode m);

struct RobustnessRow {
  std::size_t width = 0;
  double recall1 = 0.0;
  double ap = 0.0;
  double delta_ap = 0.0;  // AP(width) − AP(0)
};

// Pads queries only, re-extracts them and ranks against the fixed gallery.
std::vector<RobustnessRow> robustness_sweep(FsraModel<float>& model, const ImageSet& queries,
                                            const EmbeddingSet& gallery, PadMode mode,
                                            const std::vector<std::size_t>& widths,
                                            std::size_t batch_size);

// Columns: width, R@1, AP, ΔAP.
void write_robustness_csv(const std::filesystem::path& path, const std::vector<RobustnessRow>& rows);

}  // namespace fsra
