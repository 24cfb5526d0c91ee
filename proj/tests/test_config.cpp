#include <doctest.h>

#include <string>

#include "advforge/random.hpp"
#include "advforge/run_config.hpp"

using namespace advforge;

namespace {

std::string error_key(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("defaults follow the MNIST protocol") {
  const RunConfig cfg;
  const TrainConfig tc = cfg.train_config();
  CHECK(tc.attack.epsilon == 0.3f);
  CHECK(tc.attack.step == 0.01f);
  CHECK(tc.attack.iterations == 40);
  CHECK(tc.attack.random_start);
  CHECK(tc.lambda1 == 0.5f);
  CHECK(tc.lambda2 == 0.5f);
  CHECK(tc.lr == 3e-4f);
  CHECK(tc.lr_drop_epoch == 150);
  CHECK(tc.batch_size == 64);
  CHECK(cfg.model_config().input_shape == Shape{1, 28, 28});
}

TEST_CASE("sections prefix keys and comments are ignored") {
  const RunConfig cfg = RunConfig::parse(
      "seed = 7  # master seed\n"
      "[train]\n"
      "regime = cada\n"
      "epochs=3\n"
      "\n"
      "[attack]\n"
      "iterations = 10\n");
  CHECK(cfg.seed() == 7);
  CHECK(cfg.train_config().regime == Regime::cada);
  CHECK(cfg.train_config().epochs == 3);
  CHECK(cfg.train_config().attack.iterations == 10);
  CHECK(cfg.get("train.regime") == "cada");
}

TEST_CASE("dotted keys work without sections") {
  const RunConfig cfg = RunConfig::parse("attack.epsilon=0.1\ndata.source=synthetic\ndata.synthetic_side=12\n");
  CHECK(cfg.train_config().attack.epsilon == 0.1f);
  CHECK(cfg.model_config().input_shape == Shape{1, 12, 12});
}

TEST_CASE("errors name the offending key") {
  CHECK(error_key([] { RunConfig::parse("train.epoch=3\n"); }) == "train.epoch");
  CHECK(error_key([] { RunConfig::parse("[attack]\nepsilon=2\n"); }) == "attack.epsilon");
  CHECK(error_key([] { RunConfig::parse("train.lr=fast\n"); }) == "train.lr");
  CHECK(error_key([] { RunConfig::parse("train.regime=mixup\n"); }) == "train.regime");
  CHECK(error_key([] { RunConfig::parse("model.channels=6,x\n"); }) == "model.channels");
  CHECK(error_key([] { RunConfig::parse("attack.random_start=maybe\n"); }) == "attack.random_start");
  CHECK(error_key([] { RunConfig::parse("train.epochs=0\n"); }) == "train.epochs");
  CHECK_THROWS_AS(RunConfig::parse("no equals sign here\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/run.cfg"), ConfigError);
}

TEST_CASE("a rejected value leaves the previous one in place") {
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("attack.epsilon", "-1"), ConfigError);
  CHECK(cfg.get("attack.epsilon") == "0.3");
}

TEST_CASE("overrides apply after the file") {
  RunConfig cfg = RunConfig::parse("train.epochs=10\n");
  cfg.apply_override("train.epochs=1");
  CHECK(cfg.train_config().epochs == 1);
  CHECK_THROWS_AS(cfg.apply_override("train.epochs"), ConfigError);
}

TEST_CASE("section-free names resolve when unique") {
  RunConfig cfg;
  cfg.apply_override("epochs=1");
  CHECK(cfg.get("train.epochs") == "1");
  cfg.apply_override("regime=ca");
  CHECK(cfg.train_config().regime == Regime::ca);
  CHECK(error_key([&] { cfg.apply_override("limit=3"); }) == "limit");
  CHECK(error_key([&] { cfg.apply_override("bogus=3"); }) == "bogus");
}

TEST_CASE("canonical text is sorted and stable") {
  const RunConfig a = RunConfig::parse("[train]\nepochs=2\n[attack]\niterations=5\n");
  const RunConfig b = RunConfig::parse("attack.iterations = 5\ntrain.epochs = 2\n");
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  CHECK(RunConfig::parse(a.canonical()).canonical() == a.canonical());
  const std::string text = a.canonical();
  CHECK(text.find("attack.epsilon=") < text.find("train.epochs="));
  CHECK(RunConfig::parse("train.epochs=3\n").hash() != a.hash());
}

TEST_CASE("one master seed feeds distinct consumers") {
  const RunConfig cfg = RunConfig::parse("seed=4\n");
  CHECK(cfg.model_config().seed == derive_seed(4, "model"));
  CHECK(cfg.discriminator_seed() != cfg.model_config().seed);
  CHECK(cfg.train_config().seed == 4);
  CHECK(RunConfig::parse("seed=5\n").model_config().seed != cfg.model_config().seed);
}
