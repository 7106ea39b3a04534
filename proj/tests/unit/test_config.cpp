#include <gtest/gtest.h>

#include "optctl/config.hpp"
#include "optctl/errors.hpp"

using namespace optctl;

TEST(Config, KindDefaults) {
  const TrainConfig ode = TrainConfig::parse("kind = ode_spiral\n");
  EXPECT_EQ(ode.epochs, 300);
  EXPECT_EQ(ode.n_steps, 200);
  EXPECT_DOUBLE_EQ(ode.dt, 0.01);

  const TrainConfig oeo = TrainConfig::parse("kind = oeo_spiral");
  EXPECT_EQ(oeo.epochs, 100);
  EXPECT_EQ(oeo.t_over_tau, 5);
  EXPECT_DOUBLE_EQ(oeo.tau_us, 230.0);

  const TrainConfig mnist = TrainConfig::parse("kind = oeo_mnist");
  EXPECT_EQ(mnist.epochs, 50);
  EXPECT_EQ(mnist.batch_size, 100);
  EXPECT_EQ(mnist.m_tau, 23000);
  EXPECT_EQ(mnist.t_over_tau, 3);
  EXPECT_EQ(mnist.classes(), 10);
  EXPECT_EQ(mnist.encoding, InputEncoding::Image);
}

TEST(Config, KeysApplyInAnyOrder) {
  const TrainConfig c = TrainConfig::parse(
      "# comment\nepochs = 7   # trailing\n\nkind = oeo_spiral\nbeta=1.5\noptimizer = sgd\n");
  EXPECT_EQ(c.kind, ExperimentKind::OeoSpiral);
  EXPECT_EQ(c.epochs, 7);
  EXPECT_DOUBLE_EQ(c.beta, 1.5);
  EXPECT_EQ(c.optimizer, OptimizerKind::Sgd);
}

TEST(Config, UnknownKeyIsAnError) {
  try {
    TrainConfig::parse("kind = ode_spiral\nepohcs = 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("epohcs"), std::string::npos);
  }
}

TEST(Config, Rejections) {
  EXPECT_THROW(TrainConfig::parse("epochs = 0"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("epochs = 3\nepochs = 4"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("epochs = three"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("dt = nan"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("kind = resnet"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("threads = 0"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("just words"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("kind = oeo_spiral\nm_tau = 461"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("adam_beta1 = 1.0"), ConfigError);
}

TEST(Config, TextRoundTrip) {
  TrainConfig c = TrainConfig::defaults(ExperimentKind::OeoSpiral);
  c.set("beta", "2.25");
  c.set("m_tau", "460");
  c.set("metrics_path", "/tmp/x.csv");
  const TrainConfig back = TrainConfig::parse(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.model_hash(), c.model_hash());
}

TEST(Config, HashTracksModelFieldsOnly) {
  const TrainConfig base = TrainConfig::defaults(ExperimentKind::OeoSpiral);
  TrainConfig other = base;
  other.epochs = 3;
  other.alpha_u = 0.5;
  EXPECT_EQ(other.model_hash(), base.model_hash());
  other.m_tau = 460;
  EXPECT_NE(other.model_hash(), base.model_hash());
  EXPECT_EQ(fnv1a(""), 14695981039346656037ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Config, KeyValueParser) {
  const auto kv = parse_key_values("a = 1\n  b=two words \n# c = 3\n");
  EXPECT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv.at("b"), "two words");
}
