#include <gtest/gtest.h>

#include <cmath>

#include "fsra/losses.hpp"
#include "fsra/tensor/grad_check.hpp"
#include "fsra/tensor/ops.hpp"
#include "test_util.hpp"

namespace fsra {
namespace {

using testing_util::random_tensor;

TEST(IdLoss, UniformLogitsGiveLogK) {
  auto logits = Tensor<double>::zeros({3, 4});
  const std::vector<int> labels{0, 2, 3};
  EXPECT_NEAR(id_loss(logits, labels).item(), std::log(4.0), 1e-12);
}

TEST(IdLoss, ConfidentCorrectLogitIsNearZero) {
  Tensor<double> logits({1, 3}, {0.0, 80.0, 0.0});
  const std::vector<int> labels{1};
  EXPECT_LT(id_loss(logits, labels).item(), 1e-30);
}

TEST(IdLoss, MatchesDirectCrossEntropy) {
  auto logits = random_tensor({8, 10}, 1, 3.0);
  const std::vector<int> labels{0, 9, 3, 3, 5, 1, 7, 2};
  double expected = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    double z = 0.0;
    for (std::size_t k = 0; k < 10; ++k) z += std::exp(logits.at({i, k}));
    expected += -(logits.at({i, static_cast<std::size_t>(labels[i])}) - std::log(z));
  }
  EXPECT_NEAR(id_loss(logits, labels).item(), expected / 8.0, 1e-9);
}

TEST(IdLoss, RejectsBadLabels) {
  auto logits = Tensor<double>::zeros({2, 3});
  EXPECT_THROW(id_loss(logits, std::vector<int>{0, 3}), std::invalid_argument);
  EXPECT_THROW(id_loss(logits, std::vector<int>{-1, 0}), std::invalid_argument);
  EXPECT_THROW(id_loss(logits, std::vector<int>{0}), std::invalid_argument);
}

TEST(IdLoss, GradientMatchesFiniteDifferences) {
  const std::vector<int> labels{1, 0, 3, 2, 2};
  for (int trial = 0; trial < 10; ++trial) {
    auto r = grad_check([&](const Tensor<double>& x) { return id_loss(x, labels); },
                        random_tensor({5, 4}, 10 + trial));
    EXPECT_TRUE(r.passed) << r.diagnostic;
  }
}

TEST(PairwiseDistance, Examples) {
  Tensor<double> a({1, 2}, {0, 0});
  Tensor<double> b({1, 2}, {3, 4});
  EXPECT_DOUBLE_EQ(pairwise_euclidean(a, b).item(), 5.0);
  EXPECT_DOUBLE_EQ(pairwise_euclidean(b, b).item(), 0.0);
}

std::vector<ViewTag> drone_then_satellite(std::size_t per_view) {
  std::vector<ViewTag> v(per_view, ViewTag::kDrone);
  v.resize(2 * per_view, ViewTag::kSatellite);
  return v;
}

TEST(CrossViewTriplet, SatisfiedMarginGivesZero) {
  // Anchor a (drone); p and n are satellite. Only a has both a positive and a negative.
  Tensor<double> f({3, 2}, {0.0, 0.0, 0.2, 0.0, 1.0, 0.0});
  const std::vector<int> labels{0, 0, 1};
  const std::vector<ViewTag> views{ViewTag::kDrone, ViewTag::kSatellite, ViewTag::kSatellite};
  auto r = cross_view_triplet(f, labels, views, 0.3);
  EXPECT_EQ(r.valid_anchors, 1u);
  EXPECT_EQ(r.skipped_anchors, 2u);
  EXPECT_NEAR(r.loss.item(), 0.0, 1e-12);
}

TEST(CrossViewTriplet, EqualDistancesGiveMargin) {
  Tensor<double> f({3, 2}, {0.0, 0.0, 0.5, 0.0, 0.0, 0.5});
  const std::vector<int> labels{0, 0, 1};
  const std::vector<ViewTag> views{ViewTag::kDrone, ViewTag::kSatellite, ViewTag::kSatellite};
  EXPECT_NEAR(cross_view_triplet(f, labels, views, 0.3).loss.item(), 0.3, 1e-12);
}

TEST(CrossViewTriplet, NoValidAnchorGivesZero) {
  auto f = random_tensor({2, 3}, 1);
  const std::vector<int> labels{0, 0};
  const std::vector<ViewTag> views{ViewTag::kDrone, ViewTag::kDrone};
  auto r = cross_view_triplet(f, labels, views, 0.3);
  EXPECT_EQ(r.valid_anchors, 0u);
  EXPECT_EQ(r.skipped_anchors, 2u);
  EXPECT_EQ(r.loss.item(), 0.0);
}

// Eight drone and eight satellite samples, four classes with two of each per view.
struct MixedBatch {
  Tensor<double> features;
  std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3, 0, 0, 1, 1, 2, 2, 3, 3};
  std::vector<ViewTag> views = drone_then_satellite(8);
};

double brute_force_triplet(const MixedBatch& m, double margin) {
  const std::size_t b = m.labels.size();
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t d = 0; d < m.features.shape()[1]; ++d) {
      const double t = m.features.at({i, d}) - m.features.at({j, d});
      s += t * t;
    }
    return std::sqrt(s);
  };
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < b; ++a) {
    double worst = -1.0;
    bool any = false;
    // Every (p, n) cross-view triplet; batch-hard keeps the largest hinge term.
    for (std::size_t p = 0; p < b; ++p) {
      if (m.views[p] == m.views[a] || m.labels[p] != m.labels[a]) continue;
      for (std::size_t n = 0; n < b; ++n) {
        if (m.views[n] == m.views[a] || m.labels[n] == m.labels[a]) continue;
        any = true;
        worst = std::max(worst, dist(a, p) - dist(a, n));
      }
    }
    if (!any) continue;
    total += std::max(0.0, worst + margin);
    ++count;
  }
  return total / static_cast<double>(count);
}

TEST(CrossViewTriplet, MixedBatchMatchesTripletEnumeration) {
  for (int trial = 0; trial < 20; ++trial) {
    MixedBatch m{random_tensor({16, 6}, 40 + trial, 0.5)};
    auto r = cross_view_triplet(m.features, m.labels, m.views, 0.3);
    EXPECT_EQ(r.valid_anchors, 16u);
    EXPECT_NEAR(r.loss.item(), brute_force_triplet(m, 0.3), 1e-12);
  }
}

TEST(CrossViewTriplet, SameViewDistancesAreIgnored) {
  MixedBatch m{random_tensor({16, 6}, 3)};
  auto dist = pairwise_euclidean(m.features, m.features);
  auto masked = dist.clone();
  auto data = masked.mutable_data();
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      if (m.views[i] == m.views[j]) data[i * 16 + j] = (i == j) ? 0.0 : 1e6 * (i % 2 ? 1 : -1);
    }
  }
  EXPECT_EQ(cross_view_triplet_from_distances(dist, m.labels, m.views, 0.3).loss.item(),
            cross_view_triplet_from_distances(masked, m.labels, m.views, 0.3).loss.item());
}

TEST(CrossViewTriplet, NonNegativeAndGradientChecks) {
  for (int trial = 0; trial < 10; ++trial) {
    MixedBatch m{random_tensor({16, 5}, 80 + trial)};
    auto f = [&](const Tensor<double>& x) {
      return cross_view_triplet(x, m.labels, m.views, 0.3).loss;
    };
    EXPECT_GE(f(m.features).item(), 0.0);
    auto r = grad_check(f, m.features);
    EXPECT_TRUE(r.passed) << r.diagnostic;
  }
}

TEST(MutualKl, IdenticalInputsGiveZero) {
  auto a = random_tensor({4, 6}, 1);
  EXPECT_NEAR(kl_mutual(a, a).item(), 0.0, 1e-12);
}

TEST(MutualKl, SymmetricNonNegativeAndShiftInvariant) {
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_tensor({3, 5}, 10 + trial);
    auto b = random_tensor({3, 5}, 20 + trial);
    const double ab = kl_mutual(a, b).item();
    EXPECT_NEAR(ab, kl_mutual(b, a).item(), 1e-9);
    EXPECT_GE(ab, 0.0);
    EXPECT_NEAR(kl_mutual(add_scalar(a, 4.0), b).item(), ab, 1e-9);
  }
}

TEST(MutualKl, MatchesProbabilitySpaceFormula) {
  auto a = random_tensor({2, 3}, 5);
  auto b = random_tensor({2, 3}, 6);
  double expected = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    double za = 0.0, zb = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      za += std::exp(a.at({i, k}));
      zb += std::exp(b.at({i, k}));
    }
    for (std::size_t k = 0; k < 3; ++k) {
      const double p = std::exp(a.at({i, k})) / za;
      const double q = std::exp(b.at({i, k})) / zb;
      expected += p * std::log(p / q) + q * std::log(q / p);
    }
  }
  EXPECT_NEAR(kl_mutual(a, b).item(), expected / 2.0, 1e-9);
}

TEST(MutualKl, LiteralFormUsesLogProbabilityWeights) {
  auto a = random_tensor({2, 3}, 7);
  auto b = random_tensor({2, 3}, 8);
  auto la = log_softmax(a, 1);
  auto lb = log_softmax(b, 1);
  double expected = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const double x = la.data()[i], y = lb.data()[i];
    expected += x * (x - y) + y * (y - x);
  }
  EXPECT_NEAR(kl_mutual(a, b, true).item(), expected / 2.0, 1e-12);
  EXPECT_GT(std::abs(kl_mutual(a, b, true).item() - kl_mutual(a, b).item()), 1e-6);
}

TEST(MutualKl, GradientMatchesFiniteDifferences) {
  auto b = random_tensor({3, 4}, 9);
  for (int trial = 0; trial < 10; ++trial) {
    auto r = grad_check([&](const Tensor<double>& x) { return kl_mutual(x, b); },
                        random_tensor({3, 4}, 30 + trial));
    EXPECT_TRUE(r.passed) << r.diagnostic;
  }
}

FeatureBundle<double> fake_bundle(std::size_t branches, int seed) {
  FeatureBundle<double> f;
  for (std::size_t i = 0; i < branches; ++i) {
    f.branch_features.push_back(random_tensor({4, 3}, seed + 10 * static_cast<int>(i)));
    f.bottlenecks.push_back(random_tensor({4, 5}, seed + 10 * static_cast<int>(i) + 1));
    f.logits.push_back(random_tensor({4, 6}, seed + 10 * static_cast<int>(i) + 2));
  }
  return f;
}

TEST(TotalLoss, IdOnlyBaselineIsSumOfCrossEntropies) {
  auto d = fake_bundle(1, 1);
  auto s = fake_bundle(1, 100);
  const std::vector<int> labels{0, 1, 2, 3};
  LossConfig cfg;
  cfg.use_triplet = false;
  auto out = total_loss(d, s, labels, labels, cfg);
  const double expected = id_loss(d.logits[0], labels).item() + id_loss(s.logits[0], labels).item();
  EXPECT_NEAR(out.total_value, expected, 1e-12);
  EXPECT_EQ(out.triplet, 0.0);
  EXPECT_EQ(out.kl, 0.0);
}

TEST(TotalLoss, ComponentsAddUp) {
  auto d = fake_bundle(4, 1);
  auto s = fake_bundle(4, 100);
  const std::vector<int> labels{0, 1, 2, 0};
  LossConfig cfg;
  cfg.use_kl = true;
  auto out = total_loss(d, s, labels, labels, cfg);
  EXPECT_NEAR(out.total_value, out.id + out.triplet + out.kl, 1e-12);
  EXPECT_GT(out.triplet, 0.0);
  EXPECT_NEAR(out.kl, kl_mutual(d.logits[0], s.logits[0]).item(), 1e-12);

  std::vector<int> shuffled{1, 0, 2, 0};
  EXPECT_THROW(total_loss(d, s, labels, shuffled, cfg), std::invalid_argument);
  cfg.margin = -1.0;
  EXPECT_THROW(total_loss(d, s, labels, labels, cfg), std::invalid_argument);
}

TEST(TotalLoss, BranchWeightsScaleTerms) {
  auto d = fake_bundle(2, 1);
  auto s = fake_bundle(2, 100);
  const std::vector<int> labels{0, 1, 2, 3};
  LossConfig cfg;
  cfg.use_triplet = false;
  cfg.branch_weights = {1.0, 0.0};
  auto out = total_loss(d, s, labels, labels, cfg);
  const double expected = id_loss(d.logits[0], labels).item() + id_loss(s.logits[0], labels).item();
  EXPECT_NEAR(out.total_value, expected, 1e-12);
}

}  // namespace
}  // namespace fsra
