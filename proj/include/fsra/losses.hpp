#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fsra/model/head.hpp"
#include "fsra/tensor/tensor.hpp"

namespace fsra {

enum class ViewTag : int { kDrone = 0, kSatellite = 1, kStreet = 2 };

const char* view_name(ViewTag view);
ViewTag parse_view(const std::string& name);

enum class TripletFeatures {
  kPreClassifier,  // pooled branch features (global f, V1..Vn)
  kBottleneck,     // classifier hidden features after batch norm
};

struct LossConfig {
  double margin = 0.3;
  bool use_triplet = true;
  bool use_kl = false;
  // Mutual learning on every branch instead of the global branch only.
  bool kl_all_branches = false;
  // Uses log-probabilities on the left-hand side of the divergence, as the
  // formula is typeset, instead of the standard KL between distributions.
  bool kl_literal = false;
  TripletFeatures triplet_features = TripletFeatures::kPreClassifier;
  // Per-branch weights (global first); empty means 1.0 everywhere.
  std::vector<double> branch_weights;

  void validate() const;
  double branch_weight(std::size_t branch) const;
};

// Mean cross entropy without label smoothing. logits: [B,K].
template <typename T>
Tensor<T> id_loss(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
struct TripletResult {
  Tensor<T> loss;  // scalar
  std::size_t valid_anchors = 0;
  // Anchors with no cross-view positive or negative; they contribute 0.
  std::size_t skipped_anchors = 0;
};

/// Batch-hard triplet loss restricted to pairs from different views: each
/// anchor's hardest positive and negative are chosen only among elements whose
/// view differs from the anchor's. Mean over anchors with both.
template <typename T>
TripletResult<T> cross_view_triplet(const Tensor<T>& features, std::span<const int> labels,
                                    std::span<const ViewTag> views, double margin);

// Same loss over a precomputed [B,B] distance matrix. Only entries between
// different views are ever read.
template <typename T>
TripletResult<T> cross_view_triplet_from_distances(const Tensor<T>& distances,
                                                   std::span<const int> labels,
                                                   std::span<const ViewTag> views, double margin);

// KL(softmax(a) ‖ softmax(b)) + KL(softmax(b) ‖ softmax(a)), averaged over the batch.
template <typename T>
Tensor<T> kl_mutual(const Tensor<T>& logits_a, const Tensor<T>& logits_b, bool literal = false);

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  double id = 0.0;
  double triplet = 0.0;
  double kl = 0.0;
  double total_value = 0.0;
  std::size_t triplet_skipped = 0;
};

/// Σ_branches id_loss + [triplet] Σ_branches cross-view triplet + [kl] mutual
/// learning. Drone and satellite batches must be class-aligned element-wise
/// when KL is enabled.
template <typename T>
LossBreakdown<T> total_loss(const FeatureBundle<T>& drone, const FeatureBundle<T>& satellite,
                            std::span<const int> drone_labels,
                            std::span<const int> satellite_labels, const LossConfig& config);

}  // namespace fsra
