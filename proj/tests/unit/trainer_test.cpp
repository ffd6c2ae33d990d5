#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fsra/data/synth.hpp"
#include "fsra/eval/experiment.hpp"
#include "fsra/train/trainer.hpp"
#include "fsra/util/hash.hpp"
#include "test_util.hpp"

namespace fsra {
namespace {

namespace fs = std::filesystem;
using testing_util::TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(RunConfig, JsonRoundTrip) {
  auto c = RunConfig::defaults();
  c.loss.use_kl = true;
  c.train.milestones = {30, 50};
  c.train_root = "a/train";
  const auto back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(RunConfig, AliasesReachNestedFields) {
  auto tree = to_json(RunConfig::defaults());
  apply_override(tree, "regions=0");
  apply_override(tree, "sampler.k=3");
  apply_override(tree, "image-size=32");
  apply_override(tree, "batch-size=4");
  apply_override(tree, "train.keep_checkpoints=last");
  const auto c = run_config_from_json(tree);
  EXPECT_EQ(c.model.head.regions, 0u);
  EXPECT_EQ(c.model.head.branches(), 1u);
  EXPECT_EQ(c.sampler.k, 3u);
  EXPECT_EQ(c.model.backbone.image_size, 32u);
  EXPECT_EQ(c.sampler.batch_size, 4u);
  EXPECT_EQ(c.train.keep_checkpoints, "last");
}

TEST(RunConfig, UnknownKeysAndBadValuesAreConfigErrors) {
  auto tree = to_json(RunConfig::defaults());
  tree["model"]["head"]["regoins"] = 2;
  EXPECT_THROW(run_config_from_json(tree), ConfigError);
  tree = to_json(RunConfig::defaults());
  EXPECT_THROW(apply_override(tree, "novalue"), ConfigError);
  tree["sampler"]["k"] = "three";
  EXPECT_THROW(run_config_from_json(tree), ConfigError);
  auto c = RunConfig::defaults();
  c.train.milestones = {110, 70};
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig::defaults();
  c.model.backbone.image_size = 60;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfig, HashIgnoresOutputDirectoryOnly) {
  auto a = RunConfig::defaults(), b = RunConfig::defaults();
  b.out = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.train.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(RunConfig, LoadResolvesDataPathsAgainstConfigFile) {
  TempDir dir("cfg");
  std::ofstream(dir.path() / "c.json") << R"({"data":{"train_root":"d/train"},"sampler":{"k":2}})";
  const auto c = load_run_config(dir.path() / "c.json", {"k=5", "epochs=9"});
  EXPECT_EQ(c.train_root, dir.path() / "d/train");
  EXPECT_EQ(c.sampler.k, 5u);
  EXPECT_EQ(c.train.epochs, 9u);
  EXPECT_THROW(load_run_config(dir.path() / "missing.json"), ConfigError);
}

class TrainerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new TempDir("trainer_data");
    SynthSpec s;
    s.classes = 4;
    s.drone_per_class = 3;
    s.image_size = 16;
    s.distractors = 1;
    s.test_drone_per_class = 2;
    synth_generate(s, data_->path());
  }
  static void TearDownTestSuite() {
    delete data_;
    data_ = nullptr;
  }

  RunConfig config(const fs::path& out) const {
    auto c = RunConfig::defaults();
    c.model.backbone.image_size = 16;
    c.model.backbone.patch_size = 4;
    c.model.backbone.embed_dim = 16;
    c.model.backbone.depth = 1;
    c.model.backbone.heads = 2;
    c.model.head.hidden = 8;
    c.sampler.k = 2;
    c.sampler.batch_size = 4;
    c.train.epochs = 4;
    c.train.seed = 3;
    c.loss.use_kl = true;
    c.train_root = data_->path() / "train";
    c.test_root = data_->path() / "test";
    c.out = out;
    return c;
  }

  static TempDir* data_;
};

TempDir* TrainerTest::data_ = nullptr;

TEST_F(TrainerTest, WritesArtifactsAndLogsEveryStep) {
  TempDir out("trainer_run");
  const auto result = train(config(out.path()));
  ASSERT_EQ(result.epochs.size(), 4u);
  EXPECT_EQ(result.final_checkpoint, checkpoint_path(out.path(), 4));
  for (std::size_t e = 1; e <= 4; ++e) EXPECT_TRUE(fs::is_regular_file(checkpoint_path(out.path(), e)));
  EXPECT_TRUE(fs::is_regular_file(out.path() / "run_config.json"));
  std::ifstream log(out.path() / "train_log.csv");
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "epoch,step,id_loss,triplet,kl,total");
  std::size_t rows = 0;
  while (std::getline(log, line)) ++rows;
  // 4 classes · k=2 = 8 pairs per epoch in batches of 4.
  EXPECT_EQ(rows, 4u * 2u);
  EXPECT_EQ(result.epochs[0].images, 16u);

  const auto ckpt = load_checkpoint(result.final_checkpoint);
  EXPECT_EQ(ckpt.epoch, 4u);
  EXPECT_EQ(ckpt.config_hash, config_hash(config(out.path())));
  EXPECT_EQ(ckpt.class_ids, (std::vector<std::string>{"0000", "0001", "0002", "0003"}));
  auto model = model_from_checkpoint(ckpt);
  EXPECT_EQ(model.descriptor_dim(), 4u * 16u);
}

TEST_F(TrainerTest, LossDecreases) {
  TempDir out("trainer_loss");
  auto c = config(out.path());
  c.train.epochs = 25;
  c.train.augment = AugmentConfig::none();
  c.train.keep_checkpoints = "last";
  const auto result = train(c);
  EXPECT_LT(result.epochs.back().mean_total, 0.7 * result.epochs.front().mean_total);
  EXPECT_FALSE(fs::exists(checkpoint_path(out.path(), 24)));
  EXPECT_TRUE(fs::exists(checkpoint_path(out.path(), 25)));
}

TEST_F(TrainerTest, SameConfigGivesBitIdenticalLogAndCheckpoint) {
  TempDir a("trainer_a"), b("trainer_b");
  train(config(a.path()));
  train(config(b.path()));
  EXPECT_EQ(slurp(a.path() / "train_log.csv"), slurp(b.path() / "train_log.csv"));
  const auto ca = load_checkpoint(checkpoint_path(a.path(), 4));
  const auto cb = load_checkpoint(checkpoint_path(b.path(), 4));
  ASSERT_EQ(ca.arrays.size(), cb.arrays.size());
  for (std::size_t i = 0; i < ca.arrays.size(); ++i) {
    // The stored config names the output directory.
    if (ca.arrays[i].name == "meta.config") continue;
    EXPECT_EQ(ca.arrays[i].values, cb.arrays[i].values) << ca.arrays[i].name;
  }
}

TEST_F(TrainerTest, ResumeMatchesUninterruptedRun) {
  TempDir full("trainer_full"), part("trainer_part");
  train(config(full.path()));
  TrainOptions stop;
  stop.stop_after_epoch = 2;
  train(config(part.path()), stop);
  TrainOptions resume;
  resume.resume = checkpoint_path(part.path(), 2);
  train(config(part.path()), resume);
  EXPECT_EQ(slurp(full.path() / "train_log.csv"), slurp(part.path() / "train_log.csv"));
  const auto a = load_checkpoint(checkpoint_path(full.path(), 4));
  const auto b = load_checkpoint(checkpoint_path(part.path(), 4));
  ASSERT_EQ(a.arrays.size(), b.arrays.size());
  for (std::size_t i = 0; i < a.arrays.size(); ++i) {
    ASSERT_EQ(a.arrays[i].name, b.arrays[i].name);
    if (a.arrays[i].name == "meta.config") continue;
    for (std::size_t j = 0; j < a.arrays[i].values.size(); ++j)
      EXPECT_NEAR(a.arrays[i].values[j], b.arrays[i].values[j], 1e-6) << a.arrays[i].name;
  }
}

TEST_F(TrainerTest, ResumeRejectsDifferentConfig) {
  TempDir out("trainer_mismatch");
  TrainOptions stop;
  stop.stop_after_epoch = 1;
  train(config(out.path()), stop);
  auto other = config(out.path());
  other.loss.margin = 0.5;
  TrainOptions resume;
  resume.resume = checkpoint_path(out.path(), 1);
  EXPECT_THROW(train(other, resume), ConfigError);
}

TEST_F(TrainerTest, MissingTrainingSetIsConfigError) {
  TempDir out("trainer_missing");
  auto c = config(out.path());
  c.train_root = out.path() / "nothing";
  EXPECT_THROW(train(c), ConfigError);
}

TEST_F(TrainerTest, DivergentLearningRateHalts) {
  TempDir out("trainer_halt");
  auto c = config(out.path());
  c.train.sgd.lr_backbone = 1e12;
  c.train.sgd.lr_heads = 1e12;
  c.train.epochs = 10;
  EXPECT_THROW(train(c), TrainingHalted);
}

TEST_F(TrainerTest, EvaluateAndReport) {
  TempDir out("trainer_eval");
  const auto result = train(config(out.path()));
  auto model = model_from_checkpoint(load_checkpoint(result.final_checkpoint));
  EvalConfig ec;
  const auto d2s = evaluate_model(model, data_->path() / "test", Direction::kDroneToSatellite, ec,
                                  RobustnessRequest{PadMode::kBlack, {0, 4}});
  EXPECT_EQ(d2s.report.queries, 8u);
  EXPECT_EQ(d2s.report.excluded, 0u);
  ASSERT_EQ(d2s.robustness.size(), 2u);
  EXPECT_EQ(d2s.robustness[0].ap, d2s.report.ap);
  const auto s2d = evaluate_model(model, data_->path() / "test", Direction::kSatelliteToDrone, ec);
  // The distractor satellite class has no drone views.
  EXPECT_EQ(s2d.report.queries, 4u);
  EXPECT_EQ(s2d.report.excluded, 1u);

  write_eval_report(out.path() / "eval_report.json", d2s.report, Direction::kDroneToSatellite, "abc", 4,
                    dataset_fingerprint(data_->path() / "test"));
  std::ifstream in(out.path() / "eval_report.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["direction"], "d2s");
  EXPECT_EQ(j["checkpoint_epoch"], 4);
  EXPECT_EQ(j["dataset_manifest_hash"], file_hash(data_->path() / "manifest.json"));
  EXPECT_TRUE(j["metrics"].contains("R@Top1%"));

  write_robustness_csv(out.path() / "r.csv", d2s.robustness);
  std::ifstream csv(out.path() / "r.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "width,R@1,AP,ΔAP");
}

TEST_F(TrainerTest, HeatMapRegionsFollowSizeLaw) {
  TempDir out("trainer_heat");
  const auto result = train(config(out.path()));
  auto model = model_from_checkpoint(load_checkpoint(result.final_checkpoint));
  const auto img = read_image(data_->path() / "test/drone/0001/drone_0.png");
  for (std::size_t n : {1u, 3u, 5u}) {
    const auto m = heat_map(model, img, n);
    ASSERT_EQ(m.grid, 4u);
    std::vector<std::size_t> hist(n, 0);
    for (auto r : m.region) {
      ASSERT_GE(r, 1u);
      ASSERT_LE(r, n);
      ++hist[r - 1];
    }
    EXPECT_EQ(hist, m.sizes);
  }
  const auto a = heat_map(model, img, 3);
  write_heat_map(a, out.path(), "x", true);
  const auto first = slurp(out.path() / "x.heat.csv");
  write_heat_map(heat_map(model, img, 3), out.path(), "x", true);
  EXPECT_EQ(slurp(out.path() / "x.heat.csv"), first);
  EXPECT_TRUE(fs::is_regular_file(out.path() / "x.region.pgm"));
}

}  // namespace
}  // namespace fsra
