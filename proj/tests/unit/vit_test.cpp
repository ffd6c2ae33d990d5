#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fsra/model/vit.hpp"
#include "fsra/tensor/grad_check.hpp"
#include "fsra/tensor/ops.hpp"
#include "fsra/train/optimizer.hpp"
#include "test_util.hpp"

namespace fsra {
namespace {

using testing_util::random_tensor;

BackboneConfig tiny_config() {
  BackboneConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.channels = 3;
  c.embed_dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.mlp_ratio = 2.0;
  return c;
}

void randomize(VitBackbone<double>& vit, int seed, double scale = 0.3) {
  int k = 0;
  for (auto& p : vit.parameters()) {
    auto r = random_tensor(p.value.shape(), seed * 101 + k++, scale);
    std::copy(r.data().begin(), r.data().end(), p.value.mutable_data().begin());
  }
}

TEST(Patchify, PatchCountFor256And224) {
  auto a = patchify(Tensor<float>::zeros({1, 256, 256, 3}), 16);
  EXPECT_EQ(a.shape(), (Shape{1, 256, 768}));
  auto b = patchify(Tensor<float>::zeros({1, 224, 224, 3}), 16);
  EXPECT_EQ(b.shape(), (Shape{1, 196, 768}));
}

TEST(Patchify, RoundTripIsIdentity) {
  auto img = random_tensor({2, 16, 24, 3}, 4);
  auto back = unpatchify(patchify(img, 8), 16, 24, 3, 8);
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(back.data()[i], img.data()[i]);
}

TEST(Patchify, LayoutIsRowMajorGrid) {
  auto img = random_tensor({1, 8, 12, 2}, 9);
  auto p = patchify(img, 4);
  ASSERT_EQ(p.shape(), (Shape{1, 6, 32}));
  // Patch 4 is grid row 1, column 1; element (py=2, px=3, c=1).
  EXPECT_EQ(p.at({0, 4, (2 * 4 + 3) * 2 + 1}), img.at({0, 4 + 2, 4 + 3, 1}));
}

TEST(Patchify, IndivisibleThrows) {
  EXPECT_THROW(patchify(Tensor<float>::zeros({1, 30, 32, 3}), 16), std::invalid_argument);
  BackboneConfig c;
  c.image_size = 60;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = BackboneConfig{};
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(VitEmbed, ZeroWeightsLeaveOnlyClassToken) {
  VitBackbone<double> vit(tiny_config());
  auto cls = vit.class_token().mutable_data();
  for (std::size_t i = 0; i < cls.size(); ++i) cls[i] = 0.5 + static_cast<double>(i);
  auto seq = vit.embed(patchify(random_tensor({2, 16, 16, 3}, 1), 8));
  ASSERT_EQ(seq.tokens.shape(), (Shape{2, 5, 8}));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t d = 0; d < 8; ++d) {
      EXPECT_EQ(seq.tokens.at({b, 0, d}), 0.5 + static_cast<double>(d));
      for (std::size_t t = 1; t < 5; ++t) EXPECT_EQ(seq.tokens.at({b, t, d}), 0.0);
    }
  }
}

TEST(VitEmbed, MatchesProjectionPlusPosition) {
  VitBackbone<double> vit(tiny_config());
  randomize(vit, 3);
  auto patches = patchify(random_tensor({1, 16, 16, 3}, 2), 8);
  auto seq = vit.embed(patches);
  const auto& w = vit.patch_weight();
  const auto& bias = vit.patch_bias();
  const auto& pos = vit.position_embedding();
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t d = 0; d < 8; ++d) {
      double acc = bias.data()[d];
      for (std::size_t k = 0; k < 192; ++k) acc += patches.at({0, t, k}) * w.at({k, d});
      acc += pos.at({t + 1, d});
      EXPECT_NEAR(seq.tokens.at({0, t + 1, d}), acc, 1e-12);
    }
  }
}

TEST(VitForward, EmptyStackReturnsEmbeddings) {
  auto c = tiny_config();
  c.depth = 0;
  VitBackbone<double> vit(c);
  randomize(vit, 5);
  auto seq = vit.embed(patchify(random_tensor({2, 16, 16, 3}, 6), 8));
  auto out = vit.forward(seq, ForwardContext{});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t d = 0; d < 8; ++d) {
      EXPECT_EQ(out.global.at({b, d}), seq.tokens.at({b, 0, d}));
      for (std::size_t t = 0; t < 4; ++t) {
        EXPECT_EQ(out.patches.at({b, t, d}), seq.tokens.at({b, t + 1, d}));
      }
    }
  }
}

TEST(VitForward, ShapesForMicroConfig) {
  VitBackbone<float> vit(BackboneConfig::vit_micro());
  std::vector<Parameter<float>> params = vit.parameters();
  init_params(params, 1);
  auto out = vit(Tensor<float>::zeros({2, 64, 64, 3}), ForwardContext{});
  EXPECT_EQ(out.global.shape(), (Shape{2, 64}));
  EXPECT_EQ(out.patches.shape(), (Shape{2, 64, 64}));
}

TEST(VitForward, AttentionRowsSumToOne) {
  VitBackbone<double> vit(tiny_config());
  randomize(vit, 7);
  std::vector<Tensor<double>> attn;
  vit.forward(vit.embed(patchify(random_tensor({2, 16, 16, 3}, 8), 8)), ForwardContext{}, &attn);
  ASSERT_EQ(attn.size(), 1u);
  ASSERT_EQ(attn[0].shape(), (Shape{2, 2, 5, 5}));
  const auto a = attn[0].data();
  for (std::size_t row = 0; row < a.size() / 5; ++row) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_GE(a[row * 5 + j], 0.0);
      s += a[row * 5 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(VitForward, GlobalTokenInvariantToJointPatchPermutation) {
  VitBackbone<double> vit(tiny_config());
  randomize(vit, 11);
  auto patches = patchify(random_tensor({1, 16, 16, 3}, 12), 8);
  auto seq = vit.embed(patches);
  const std::vector<std::size_t> perm{0, 3, 1, 4, 2};
  TokenSequence<double> shuffled{index_select(seq.tokens, 1, perm)};
  auto a = vit.forward(seq, ForwardContext{});
  auto b = vit.forward(shuffled, ForwardContext{});
  for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(a.global.at({0, d}), b.global.at({0, d}), 1e-12);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t d = 0; d < 8; ++d) {
      EXPECT_NEAR(b.patches.at({0, t, d}), a.patches.at({0, perm[t + 1] - 1, d}), 1e-12);
    }
  }
}

TEST(VitForward, EvalIsDeterministic) {
  VitBackbone<float> vit(BackboneConfig::vit_micro());
  std::vector<Parameter<float>> params = vit.parameters();
  init_params(params, 3);
  auto img = cast<float>(random_tensor({1, 64, 64, 3}, 13));
  auto a = vit(img, ForwardContext{});
  auto b = vit(img, ForwardContext{});
  for (std::size_t i = 0; i < a.patches.numel(); ++i) EXPECT_EQ(a.patches.data()[i], b.patches.data()[i]);
}

// Every parameter of the tiny trunk against central differences.
TEST(VitGradient, FullGraphMatchesFiniteDifferences) {
  for (int trial = 0; trial < 10; ++trial) {
    VitBackbone<double> vit(tiny_config());
    randomize(vit, 100 + trial, 0.4);
    auto images = random_tensor({2, 16, 16, 3}, 200 + trial);
    auto wg = random_tensor({2, 8}, 300 + trial);
    auto wp = random_tensor({2, 4, 8}, 400 + trial);
    std::vector<Tensor<double>> inputs;
    for (auto& p : vit.parameters()) inputs.push_back(p.value);
    auto f = [&] {
      auto out = vit(images, ForwardContext{});
      return add(sum(mul(out.global, wg)), sum(mul(gelu(out.patches), wp)));
    };
    auto r = grad_check_leaves(f, inputs, 1e-5, 1e-3);
    EXPECT_TRUE(r.passed) << "trial " << trial << ": " << r.diagnostic;
  }
}

}  // namespace
}  // namespace fsra
