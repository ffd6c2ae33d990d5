#include "fsra/losses.hpp"

#include <algorithm>
#include <stdexcept>

#include "fsra/tensor/ops.hpp"

namespace fsra {

const char* view_name(ViewTag view) {
  switch (view) {
    case ViewTag::kDrone:
      return "drone";
    case ViewTag::kSatellite:
      return "satellite";
    case ViewTag::kStreet:
      return "street";
  }
  return "unknown";
}

ViewTag parse_view(const std::string& name) {
  if (name == "drone") return ViewTag::kDrone;
  if (name == "satellite") return ViewTag::kSatellite;
  if (name == "street") return ViewTag::kStreet;
  throw std::invalid_argument("unknown view '" + name + "'");
}

void LossConfig::validate() const {
  if (!(margin >= 0.0)) throw std::invalid_argument("loss: margin must be >= 0");
  for (double w : branch_weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("loss: branch weights must be >= 0");
  }
}

double LossConfig::branch_weight(std::size_t branch) const {
  if (branch_weights.empty()) return 1.0;
  if (branch >= branch_weights.size()) {
    throw std::invalid_argument("loss: no weight configured for branch " + std::to_string(branch));
  }
  return branch_weights[branch];
}

template <typename T>
Tensor<T> id_loss(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.shape()[0] != labels.size()) {
    throw std::invalid_argument("id_loss: logits " + shape_string(logits.shape()) +
                                " do not match " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.shape()[0];
  const std::size_t k = logits.shape()[1];
  std::vector<std::size_t> picks(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::invalid_argument("id_loss: label " + std::to_string(labels[i]) +
                                  " outside [0," + std::to_string(k) + ")");
    }
    picks[i] = i * k + static_cast<std::size_t>(labels[i]);
  }
  auto flat = reshape(log_softmax(logits, 1), {b * k});
  return mul_scalar(sum(index_select(flat, 0, picks)), T(-1) / static_cast<T>(b));
}

template <typename T>
TripletResult<T> cross_view_triplet(const Tensor<T>& features, std::span<const int> labels,
                                    std::span<const ViewTag> views, double margin) {
  if (features.rank() != 2 || features.shape()[0] != labels.size()) {
    throw std::invalid_argument("cross_view_triplet: features, labels and views disagree");
  }
  return cross_view_triplet_from_distances(pairwise_euclidean(features, features), labels, views,
                                           margin);
}

template <typename T>
TripletResult<T> cross_view_triplet_from_distances(const Tensor<T>& dist,
                                                   std::span<const int> labels,
                                                   std::span<const ViewTag> views, double margin) {
  const std::size_t b = labels.size();
  if (dist.rank() != 2 || dist.shape()[0] != b || dist.shape()[1] != b || views.size() != b) {
    throw std::invalid_argument("cross_view_triplet: distances, labels and views disagree");
  }
  const T* d = dist.data().data();

  TripletResult<T> result;
  std::vector<std::size_t> pos_idx, neg_idx;
  for (std::size_t a = 0; a < b; ++a) {
    std::size_t best_p = b, best_n = b;
    for (std::size_t j = 0; j < b; ++j) {
      if (views[j] == views[a]) continue;
      const T v = d[a * b + j];
      if (labels[j] == labels[a]) {
        if (best_p == b || v > d[a * b + best_p]) best_p = j;
      } else {
        if (best_n == b || v < d[a * b + best_n]) best_n = j;
      }
    }
    if (best_p == b || best_n == b) {
      ++result.skipped_anchors;
      continue;
    }
    pos_idx.push_back(a * b + best_p);
    neg_idx.push_back(a * b + best_n);
  }
  result.valid_anchors = pos_idx.size();
  if (pos_idx.empty()) {
    result.loss = Tensor<T>::scalar(T(0));
    return result;
  }
  auto flat = reshape(dist, {b * b});
  auto hinge = relu(add_scalar(sub(index_select(flat, 0, pos_idx), index_select(flat, 0, neg_idx)),
                               static_cast<T>(margin)));
  result.loss = mean(hinge);
  return result;
}

template <typename T>
Tensor<T> kl_mutual(const Tensor<T>& logits_a, const Tensor<T>& logits_b, bool literal) {
  if (logits_a.rank() != 2 || logits_a.shape() != logits_b.shape()) {
    throw std::invalid_argument("kl_mutual: logits must share a [B,K] shape");
  }
  const T inv_b = T(1) / static_cast<T>(logits_a.shape()[0]);
  auto la = log_softmax(logits_a, 1);
  auto lb = log_softmax(logits_b, 1);
  // Each direction is Σ w·(log p_src − log p_dst); the weight is p_src, or
  // log p_src in the literal form.
  auto direction = [&](const Tensor<T>& src, const Tensor<T>& dst) {
    auto weight = literal ? src : exp(src);
    return sum(mul(weight, sub(src, dst)));
  };
  return mul_scalar(add(direction(la, lb), direction(lb, la)), inv_b);
}

template <typename T>
LossBreakdown<T> total_loss(const FeatureBundle<T>& drone, const FeatureBundle<T>& satellite,
                            std::span<const int> drone_labels,
                            std::span<const int> satellite_labels, const LossConfig& config) {
  config.validate();
  if (drone.branch_count() != satellite.branch_count()) {
    throw std::invalid_argument("total_loss: branch counts differ between views");
  }
  LossBreakdown<T> out;
  Tensor<T> total = Tensor<T>::scalar(T(0));
  Tensor<T> id_total = Tensor<T>::scalar(T(0));
  for (std::size_t i = 0; i < drone.branch_count(); ++i) {
    const T w = static_cast<T>(config.branch_weight(i));
    auto term = add(id_loss(drone.logits[i], drone_labels), id_loss(satellite.logits[i], satellite_labels));
    id_total = add(id_total, mul_scalar(term, w));
  }
  total = add(total, id_total);
  out.id = static_cast<double>(id_total.item());

  if (config.use_triplet) {
    std::vector<int> labels(drone_labels.begin(), drone_labels.end());
    labels.insert(labels.end(), satellite_labels.begin(), satellite_labels.end());
    std::vector<ViewTag> views(drone_labels.size(), ViewTag::kDrone);
    views.resize(labels.size(), ViewTag::kSatellite);
    Tensor<T> tri_total = Tensor<T>::scalar(T(0));
    for (std::size_t i = 0; i < drone.branch_count(); ++i) {
      const bool bottleneck = config.triplet_features == TripletFeatures::kBottleneck;
      const auto& fd = bottleneck ? drone.bottlenecks[i] : drone.branch_features[i];
      const auto& fs = bottleneck ? satellite.bottlenecks[i] : satellite.branch_features[i];
      auto tri = cross_view_triplet(concat<T>({fd, fs}, 0), labels, views, config.margin);
      out.triplet_skipped += tri.skipped_anchors;
      tri_total = add(tri_total, mul_scalar(tri.loss, static_cast<T>(config.branch_weight(i))));
    }
    total = add(total, tri_total);
    out.triplet = static_cast<double>(tri_total.item());
  }

  if (config.use_kl) {
    if (drone_labels.size() != satellite_labels.size() ||
        !std::equal(drone_labels.begin(), drone_labels.end(), satellite_labels.begin())) {
      throw std::invalid_argument("total_loss: mutual learning needs class-aligned view batches");
    }
    const std::size_t branches = config.kl_all_branches ? drone.branch_count() : 1;
    Tensor<T> kl_total = Tensor<T>::scalar(T(0));
    for (std::size_t i = 0; i < branches; ++i) {
      kl_total = add(kl_total, kl_mutual(drone.logits[i], satellite.logits[i], config.kl_literal));
    }
    total = add(total, kl_total);
    out.kl = static_cast<double>(kl_total.item());
  }
  out.total = total;
  out.total_value = static_cast<double>(total.item());
  return out;
}

template Tensor<float> id_loss(const Tensor<float>&, std::span<const int>);
template Tensor<double> id_loss(const Tensor<double>&, std::span<const int>);
template TripletResult<float> cross_view_triplet(const Tensor<float>&, std::span<const int>,
                                                 std::span<const ViewTag>, double);
template TripletResult<double> cross_view_triplet(const Tensor<double>&, std::span<const int>,
                                                  std::span<const ViewTag>, double);
template TripletResult<float> cross_view_triplet_from_distances(const Tensor<float>&,
                                                                std::span<const int>,
                                                                std::span<const ViewTag>, double);
template TripletResult<double> cross_view_triplet_from_distances(const Tensor<double>&,
                                                                 std::span<const int>,
                                                                 std::span<const ViewTag>, double);
template Tensor<float> kl_mutual(const Tensor<float>&, const Tensor<float>&, bool);
template Tensor<double> kl_mutual(const Tensor<double>&, const Tensor<double>&, bool);
template LossBreakdown<float> total_loss(const FeatureBundle<float>&, const FeatureBundle<float>&,
                                         std::span<const int>, std::span<const int>,
                                         const LossConfig&);
template LossBreakdown<double> total_loss(const FeatureBundle<double>&,
                                          const FeatureBundle<double>&, std::span<const int>,
                                          std::span<const int>, const LossConfig&);

}  // namespace fsra
