#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fsra/model/fsra_model.hpp"
#include "fsra/train/optimizer.hpp"

namespace fsra {
namespace {

Parameter<double> param(const std::string& name, Shape shape, InitKind init, bool decay = true,
                        ParamGroup group = ParamGroup::kHead) {
  return {name, make_parameter<double>(std::move(shape)), group, decay, init};
}

TEST(InitParams, KaimingVarianceAndZeroBiases) {
  std::vector<Parameter<double>> ps{param("w", {100, 200}, InitKind::kKaimingNormal),
                                    param("b", {200}, InitKind::kZeros),
                                    param("g", {200}, InitKind::kOnes)};
  init_params(ps, 3);
  double s = 0.0, s2 = 0.0;
  for (double v : ps[0].value.data()) {
    s += v;
    s2 += v * v;
  }
  const double n = 20000.0;
  const double var = s2 / n - (s / n) * (s / n);
  EXPECT_NEAR(var, 2.0 / 100.0, 0.2 * 2.0 / 100.0);
  for (double v : ps[1].value.data()) EXPECT_EQ(v, 0.0);
  for (double v : ps[2].value.data()) EXPECT_EQ(v, 1.0);
}

TEST(InitParams, TruncatedNormalIsBounded) {
  std::vector<Parameter<double>> ps{param("w", {50, 50}, InitKind::kTruncNormal)};
  init_params(ps, 4);
  double s2 = 0.0;
  for (double v : ps[0].value.data()) {
    EXPECT_LE(std::abs(v), 0.04 + 1e-15);
    s2 += v * v;
  }
  EXPECT_GT(s2 / 2500.0, 0.5 * 0.02 * 0.02);
}

TEST(InitParams, SameSeedSameValues) {
  ModelConfig cfg;
  cfg.head.num_classes = 4;
  FsraModel<float> a(cfg), b(cfg);
  init_params(a.parameters(), 11);
  init_params(b.parameters(), 11);
  EXPECT_EQ(encode_checkpoint(a.state()), encode_checkpoint(b.state()));
  init_params(b.parameters(), 12);
  EXPECT_NE(encode_checkpoint(a.state()), encode_checkpoint(b.state()));
}

TEST(Sgd, VanillaStepAndFixedPoint) {
  auto p = param("x", {2}, InitKind::kZeros);
  p.value.mutable_data()[0] = 1.0;
  p.value.mutable_data()[1] = -2.0;
  SgdConfig cfg{0.1, 0.1, 0.0, 0.0};
  Sgd<double> opt({p}, cfg);
  p.value.mutable_grad()[0] = 0.5;
  p.value.mutable_grad()[1] = 0.0;
  opt.step();
  EXPECT_DOUBLE_EQ(p.value.data()[0], 0.95);
  EXPECT_DOUBLE_EQ(p.value.data()[1], -2.0);
  opt.zero_grad();
  opt.step();
  EXPECT_DOUBLE_EQ(p.value.data()[0], 0.95);
}

TEST(Sgd, MomentumMatchesHandRecurrence) {
  auto p = param("x", {1}, InitKind::kZeros);
  p.value.mutable_data()[0] = 1.0;
  SgdConfig cfg{0.1, 0.2, 0.9, 0.01};
  Sgd<double> opt({p}, cfg);
  double x = 1.0, v = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double g = 3.0 * x;
    p.value.mutable_grad()[0] = g;
    opt.step(0.5);
    v = 0.9 * v + g + 0.01 * x;
    x -= 0.2 * 0.5 * v;
    EXPECT_NEAR(p.value.data()[0], x, 1e-15);
  }
}

TEST(Sgd, QuadraticBowlConverges) {
  auto p = param("x", {3}, InitKind::kZeros);
  p.value.mutable_data()[0] = 1.0;
  p.value.mutable_data()[1] = -0.5;
  p.value.mutable_data()[2] = 2.0;
  Sgd<double> opt({p}, SgdConfig{0.1, 0.1, 0.9, 0.0});
  for (int i = 0; i < 200; ++i) {
    for (std::size_t j = 0; j < 3; ++j) p.value.mutable_grad()[j] = 2.0 * p.value.data()[j];
    opt.step();
  }
  double f = 0.0;
  for (double v : p.value.data()) f += v * v;
  EXPECT_LT(f, 1e-6);
}

TEST(Sgd, NoDecayParametersIgnoreWeightDecay) {
  auto decayed = param("w", {1}, InitKind::kZeros, true);
  auto exempt = param("norm", {1}, InitKind::kZeros, false);
  decayed.value.mutable_data()[0] = 1.0;
  exempt.value.mutable_data()[0] = 1.0;
  Sgd<double> opt({decayed, exempt}, SgdConfig{0.1, 0.1, 0.0, 0.5});
  decayed.value.mutable_grad()[0] = 0.0;
  exempt.value.mutable_grad()[0] = 0.0;
  opt.step();
  EXPECT_DOUBLE_EQ(decayed.value.data()[0], 0.95);
  EXPECT_DOUBLE_EQ(exempt.value.data()[0], 1.0);
}

TEST(Sgd, NonFiniteGradientAbortsWithoutUpdating) {
  auto a = param("good", {1}, InitKind::kZeros);
  auto b = param("bad.weight", {1}, InitKind::kZeros);
  Sgd<double> opt({a, b}, SgdConfig{});
  a.value.mutable_grad()[0] = 1.0;
  b.value.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step();
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("bad.weight"), std::string::npos);
  }
  EXPECT_EQ(a.value.data()[0], 0.0);
}

TEST(Sgd, GroupLearningRates) {
  auto bb = param("bb", {1}, InitKind::kZeros, true, ParamGroup::kBackbone);
  auto hd = param("hd", {1}, InitKind::kZeros, true, ParamGroup::kHead);
  Sgd<double> opt({bb, hd}, SgdConfig{});
  LrSchedule sched;
  EXPECT_DOUBLE_EQ(opt.lr_for(bb, sched.multiplier(0)), 0.003);
  EXPECT_DOUBLE_EQ(opt.lr_for(hd, sched.multiplier(0)), 0.01);
  EXPECT_NEAR(opt.lr_for(bb, sched.multiplier(70)), 0.0003, 1e-15);
  EXPECT_NEAR(opt.lr_for(bb, sched.multiplier(110)), 0.003 * 0.01, 1e-15);
  EXPECT_NEAR(opt.lr_for(hd, sched.multiplier(119)), 0.01 * 0.01, 1e-15);
  EXPECT_DOUBLE_EQ(sched.multiplier(69), 1.0);
}

TEST(LrSchedule, MilestonesScaleWithRunLength) {
  auto s = LrSchedule::scaled(50);
  EXPECT_EQ(s.milestones, (std::vector<std::size_t>{30, 46}));
  EXPECT_EQ(LrSchedule::scaled(120).milestones, (std::vector<std::size_t>{70, 110}));
  EXPECT_EQ(LrSchedule::scaled(200).milestones, (std::vector<std::size_t>{117, 184}));
}

TEST(Sgd, NormsAndTokensAreExemptFromDecay) {
  ModelConfig cfg;
  cfg.head.num_classes = 4;
  FsraModel<float> model(cfg);
  for (const auto& p : model.parameters()) {
    const bool exempt = p.name.find("norm") != std::string::npos ||
                        p.name.find(".bn.") != std::string::npos ||
                        p.name.find("cls_token") != std::string::npos ||
                        p.name.find("pos_embed") != std::string::npos;
    EXPECT_EQ(p.decay, !exempt) << p.name;
    const bool head = p.name.rfind("head.", 0) == 0;
    EXPECT_EQ(p.group, head ? ParamGroup::kHead : ParamGroup::kBackbone) << p.name;
  }
}

TEST(Sgd, StateRoundTrip) {
  auto p = param("x", {2}, InitKind::kZeros);
  Sgd<double> opt({p}, SgdConfig{});
  p.value.mutable_grad()[0] = 1.0;
  p.value.mutable_grad()[1] = 2.0;
  opt.step();
  auto state = opt.state();
  ASSERT_EQ(state.size(), 1u);
  EXPECT_EQ(state[0].name, "optim.momentum.x");
  auto q = param("x", {2}, InitKind::kZeros);
  Sgd<double> other({q}, SgdConfig{});
  other.load_state(state);
  EXPECT_EQ(encode_checkpoint(other.state()), encode_checkpoint(state));
  EXPECT_THROW(other.load_state({}), std::runtime_error);
}

}  // namespace
}  // namespace fsra
