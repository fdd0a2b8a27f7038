#include <gtest/gtest.h>

#include "tsconv/config.hpp"

using namespace tsconv;

TEST(Config, DefaultsMatchOptimizerSettings) {
  const RunConfig c;
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.weight_decay, 5e-4);
  EXPECT_EQ(c.lr, 5e-4);
  EXPECT_EQ(c.lr_min, 1e-6);
  EXPECT_EQ(c.threshold, 0.3);
  EXPECT_EQ(c.theta, 0.3);
  EXPECT_EQ(c.gamma, 2.0);
  EXPECT_EQ(c.nms, 0.4);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParseValues) {
  const auto c = RunConfig::parse(
      "# comment\n"
      "seed = 12\n"
      "lr=0.01   # trailing comment\n"
      "classes = a, b\n"
      "model.stages = 4,8,8,8\n"
      "model.head = plain\n"
      "assigner = static\n"
      "augment = flip_rot90\n"
      "synth.size_max = 40.5\n");
  EXPECT_EQ(c.seed, 12u);
  EXPECT_EQ(c.lr, 0.01);
  EXPECT_EQ(c.classes, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(c.model.num_classes, 2);
  EXPECT_EQ(c.synth.classes, 2);
  EXPECT_EQ(c.model.stages, (std::array<int, 4>{4, 8, 8, 8}));
  EXPECT_EQ(c.model.head, HeadKind::kPlain);
  EXPECT_EQ(c.assigner, AssignerKind::kStatic);
  EXPECT_EQ(c.augment, Augment::kFlipRot90);
  EXPECT_EQ(c.synth.size_max, 40.5);
}

TEST(Config, Rejections) {
  EXPECT_THROW(RunConfig::parse("bogus = 1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("seed 1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("lr = fast\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("batch = 2.5\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("batch = 0\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("threshold = 1.5\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("model.stages = 1,2,3\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("assigner = atss\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("lr = 0.1\nlr_min = 0.2\n"), ConfigError);
  EXPECT_THROW(RunConfig::load("/nonexistent/run.cfg"), ConfigError);
}

TEST(Config, RoundTripIsIdentity) {
  EXPECT_EQ(RunConfig::parse(RunConfig{}.serialize()), RunConfig{});
  const auto c = RunConfig::parse(
      "seed = 99\nlr = 0.0123456789012345\nlr_min = 1e-7\nclasses = x,y,z,w\nmodel.width = 24\n"
      "model.head = plain\nassigner = static\naugment = rotate\ntheta = 0.5\nval_scenes = 200\n"
      "synth.aspect_max = 3.3\ndata = /tmp/somewhere\n");
  const auto again = RunConfig::parse(c.serialize());
  EXPECT_EQ(again, c);
  EXPECT_EQ(again.serialize(), c.serialize());
}
