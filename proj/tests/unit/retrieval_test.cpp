#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fsra/eval/retrieval.hpp"
#include "fsra/tensor/tensor.hpp"

namespace fsra {
namespace {

// Ranks by (distance, index) and counts; no sorting shortcuts.
struct Oracle {
  double ap = 0.0;
  std::size_t first = 0;
  bool has_match = false;
};

Oracle brute_force(const std::vector<double>& row, const std::vector<int>& gl, int ql) {
  const std::size_t g = row.size();
  auto rank_of = [&](std::size_t j) {
    std::size_t r = 1;
    for (std::size_t i = 0; i < g; ++i)
      if (row[i] < row[j] || (row[i] == row[j] && i < j)) ++r;
    return r;
  };
  Oracle o;
  std::vector<std::size_t> ranks;
  for (std::size_t j = 0; j < g; ++j)
    if (gl[j] == ql) ranks.push_back(rank_of(j));
  if (ranks.empty()) return o;
  o.has_match = true;
  std::sort(ranks.begin(), ranks.end());
  o.first = ranks.front();
  for (std::size_t m = 0; m < ranks.size(); ++m) o.ap += static_cast<double>(m + 1) / static_cast<double>(ranks[m]);
  o.ap /= static_cast<double>(ranks.size());
  return o;
}

TEST(Metrics, SingleMatchAtRankRGivesApOneOverR) {
  for (std::size_t r = 1; r <= 6; ++r) {
    std::vector<double> d{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    std::vector<int> gl(6, 9);
    gl[r - 1] = 1;
    const auto rep = evaluate_distances(d, {1}, gl, {1, 5});
    EXPECT_DOUBLE_EQ(rep.ap, 1.0 / static_cast<double>(r));
    EXPECT_EQ(rep.recall_at.at(1), r == 1 ? 1.0 : 0.0);
    EXPECT_EQ(rep.recall_at.at(5), r <= 5 ? 1.0 : 0.0);
    EXPECT_EQ(rep.first_match_rank.front(), r);
  }
}

TEST(Metrics, TwoMatchesWorkedExample) {
  // True matches at ranks 2 and 4: AP = (1/2 + 2/4) / 2.
  const auto rep = evaluate_distances({0.1, 0.2, 0.3, 0.4}, {3}, {0, 3, 1, 3}, {1, 2});
  EXPECT_DOUBLE_EQ(rep.ap, 0.5);
  EXPECT_EQ(rep.recall_at.at(1), 0.0);
  EXPECT_EQ(rep.recall_at.at(2), 1.0);
}

TEST(Metrics, TiesBreakByGalleryIndex) {
  auto rep = evaluate_distances({1.0, 1.0}, {5}, {5, 4}, {1});
  EXPECT_EQ(rep.recall_at.at(1), 1.0);
  rep = evaluate_distances({1.0, 1.0}, {5}, {4, 5}, {1});
  EXPECT_EQ(rep.recall_at.at(1), 0.0);
  EXPECT_DOUBLE_EQ(rep.ap, 0.5);
}

TEST(Metrics, QueriesWithoutMatchesAreExcluded) {
  const auto rep = evaluate_distances({0.1, 0.2, 0.3, 0.4}, {0, 7}, {0, 1}, {1});
  EXPECT_EQ(rep.queries, 1u);
  EXPECT_EQ(rep.excluded, 1u);
  EXPECT_EQ(rep.recall_at.at(1), 1.0);
}

TEST(Metrics, TopOnePercentUsesCeiling) {
  std::vector<int> gl(250, 0);
  gl[2] = 1;
  std::vector<double> d(250);
  for (std::size_t i = 0; i < 250; ++i) d[i] = static_cast<double>(i);
  const auto rep = evaluate_distances(d, {1}, gl, {1});
  EXPECT_EQ(rep.top1pct_k, 3u);
  EXPECT_EQ(rep.recall_top1pct, 1.0);
  EXPECT_EQ(rep.recall_at.at(1), 0.0);
}

TEST(Metrics, RejectsShapeMismatch) {
  EXPECT_THROW(evaluate_distances({0.1}, {0}, {0, 1}, {1}), std::invalid_argument);
  EXPECT_THROW(evaluate_distances({}, {}, {0}, {1}), std::invalid_argument);
}

TEST(Metrics, MatchesBruteForceOracle) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t g = 1 + rng() % 20;
    const std::size_t q = 1 + rng() % 6;
    std::vector<int> gl(g);
    for (auto& l : gl) l = static_cast<int>(rng() % 6);
    std::vector<int> ql(q);
    for (auto& l : ql) l = static_cast<int>(rng() % 6);
    std::vector<double> d(q * g);
    // Coarse values force ties.
    for (auto& v : d) v = static_cast<double>(rng() % 8);
    const auto rep = evaluate_distances(d, ql, gl, {1, 5, 10});
    std::size_t n = 0, excluded = 0;
    double ap = 0.0, r1 = 0.0, r5 = 0.0, r10 = 0.0;
    for (std::size_t i = 0; i < q; ++i) {
      const auto o = brute_force({d.begin() + i * g, d.begin() + (i + 1) * g}, gl, ql[i]);
      if (!o.has_match) {
        ++excluded;
        continue;
      }
      ++n;
      ap += o.ap;
      r1 += o.first <= 1;
      r5 += o.first <= 5;
      r10 += o.first <= 10;
    }
    ASSERT_EQ(rep.queries, n);
    ASSERT_EQ(rep.excluded, excluded);
    if (n == 0) continue;
    EXPECT_DOUBLE_EQ(rep.ap, ap / n);
    EXPECT_DOUBLE_EQ(rep.recall_at.at(1), r1 / n);
    EXPECT_DOUBLE_EQ(rep.recall_at.at(5), r5 / n);
    EXPECT_DOUBLE_EQ(rep.recall_at.at(10), r10 / n);
  }
}

EmbeddingSet random_set(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<float> nd;
  EmbeddingSet s;
  s.dim = dim;
  for (std::size_t i = 0; i < n * dim; ++i) s.descriptors.push_back(nd(rng));
  for (std::size_t i = 0; i < n; ++i) s.labels.push_back(std::to_string(rng() % 5));
  return s;
}

// Random orthogonal matrix from Gram-Schmidt.
std::vector<double> random_rotation(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> m(d * d);
  for (auto& v : m) v = nd(rng);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += m[i * d + t] * m[j * d + t];
      for (std::size_t t = 0; t < d; ++t) m[i * d + t] -= dot * m[j * d + t];
    }
    double norm = 0.0;
    for (std::size_t t = 0; t < d; ++t) norm += m[i * d + t] * m[i * d + t];
    for (std::size_t t = 0; t < d; ++t) m[i * d + t] /= std::sqrt(norm);
  }
  return m;
}

TEST(Metrics, InvariantUnderIsometry) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 6;
    auto q = random_set(9, d, rng), g = random_set(14, d, rng);
    const auto rot = random_rotation(d, rng);
    std::vector<double> shift(d);
    for (auto& s : shift) s = static_cast<double>(rng() % 100) / 10.0;
    auto apply = [&](EmbeddingSet s) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        std::vector<double> y(d, 0.0);
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t c = 0; c < d; ++c) y[r] += rot[r * d + c] * s.descriptors[i * d + c];
        for (std::size_t r = 0; r < d; ++r) s.descriptors[i * d + r] = static_cast<float>(y[r] + shift[r]);
      }
      return s;
    };
    const auto a = evaluate(q, g, {1, 3});
    const auto b = evaluate(apply(q), apply(g), {1, 3});
    EXPECT_EQ(a.first_match_rank, b.first_match_rank);
    EXPECT_NEAR(a.ap, b.ap, 1e-12);
    EXPECT_EQ(a.recall_at, b.recall_at);
  }
}

TEST(Metrics, LabelsMatchByClassId) {
  EmbeddingSet q{{0.0f, 0.0f}, 2, {"0007"}};
  EmbeddingSet g{{1.0f, 0.0f, 0.5f, 0.0f}, 2, {"0003", "0007"}};
  const auto r = evaluate(q, g, {1});
  EXPECT_EQ(r.recall_at.at(1), 1.0);
  g.dim = 4;
  EXPECT_THROW(evaluate(q, g, {1}), std::invalid_argument);
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.backbone = BackboneConfig::vit_micro();
  mc.backbone.image_size = 16;
  mc.backbone.patch_size = 4;
  mc.backbone.embed_dim = 16;
  mc.backbone.depth = 1;
  mc.backbone.heads = 2;
  mc.head.regions = 3;
  mc.head.hidden = 8;
  mc.head.num_classes = 4;
  return mc;
}

std::vector<Image> noise_images(std::size_t n, std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<Image> v;
  for (std::size_t i = 0; i < n; ++i) {
    Image img(side, side);
    for (auto& p : img.pixels) p = u(rng);
    v.push_back(std::move(img));
  }
  return v;
}

TEST(Extract, DescriptorLengthAndBatchInvariance) {
  FsraModel<float> model(tiny_model());
  const auto imgs = noise_images(7, 16, 3);
  const std::vector<std::string> labels(7, "0000");
  const auto a = extract(model, imgs, labels, 7);
  const auto b = extract(model, imgs, labels, 2);
  EXPECT_EQ(a.dim, 4u * 16u);
  ASSERT_EQ(a.descriptors.size(), 7u * 64u);
  for (std::size_t i = 0; i < a.descriptors.size(); ++i) EXPECT_NEAR(a.descriptors[i], b.descriptors[i], 1e-5);
}

TEST(Extract, SizeMismatchIsExplained) {
  FsraModel<float> model(tiny_model());
  const auto imgs = noise_images(1, 20, 3);
  try {
    extract(model, imgs, {"0000"}, 4);
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("model expects 16x16"), std::string::npos);
  }
}

TEST(Robustness, WidthZeroRowEqualsUnperturbedEvaluation) {
  FsraModel<float> model(tiny_model());
  ImageSet queries;
  queries.images = noise_images(6, 16, 9);
  queries.labels = {"a", "b", "c", "a", "b", "c"};
  const auto gimgs = noise_images(3, 16, 10);
  const auto gallery = extract(model, gimgs, {"a", "b", "c"}, 4);
  const auto base = evaluate(extract(model, queries.images, queries.labels, 4), gallery, {1});
  for (auto mode : {PadMode::kBlack, PadMode::kFlip}) {
    const auto rows = robustness_sweep(model, queries, gallery, mode, {0, 4, 8}, 4);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].ap, base.ap);
    EXPECT_EQ(rows[0].recall1, base.recall_at.at(1));
    EXPECT_EQ(rows[0].delta_ap, 0.0);
    for (const auto& r : rows) {
      EXPECT_TRUE(std::isfinite(r.ap));
      EXPECT_DOUBLE_EQ(r.delta_ap, r.ap - base.ap);
    }
  }
  const auto no_zero = robustness_sweep(model, queries, gallery, PadMode::kBlack, {4}, 4);
  EXPECT_DOUBLE_EQ(no_zero[0].delta_ap, no_zero[0].ap - base.ap);
}

TEST(Robustness, PadModeNames) {
  EXPECT_EQ(parse_pad_mode("BP"), PadMode::kBlack);
  EXPECT_EQ(parse_pad_mode("FP"), PadMode::kFlip);
  EXPECT_STREQ(pad_mode_name(PadMode::kFlip), "FP");
  EXPECT_THROW(parse_pad_mode("XP"), std::invalid_argument);
}

}  // namespace
}  // namespace fsra
