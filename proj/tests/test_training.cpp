#include <cmath>
#include <sstream>

#include "deepfv/gmm.hpp"
#include "deepfv/gradcheck.hpp"
#include "deepfv/training.hpp"
#include "doctest.h"

using namespace deepfv;

namespace {

std::string checkpoint_bytes(const Checkpoint& c) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, c);
  return os.str();
}

// Small training setup shared by the loop tests: 24x24 images, one conv
// block, K=2 codebook initialized from the descriptor statistics.
struct TinySetup {
  ModelConfig cfg;
  Dataset data;
  Checkpoint init;
};

TinySetup tiny_setup(std::uint64_t seed, int examples) {
  TinySetup t;
  t.cfg.backbone.conv_channels = {4};
  t.cfg.backbone.grid = 2;
  t.cfg.backbone.hidden_dim = 8;
  t.cfg.backbone.descriptor_dim = 6;
  t.cfg.backbone.init_std = 0.05;
  t.cfg.gmm_components = 2;
  t.cfg.patch_scales = {12};
  t.cfg.patch_step = 6;

  SyntheticSpec spec;
  spec.image_size = 32;
  spec.classes = 2;
  spec.max_objects = 2;
  spec.train_count = examples;
  spec.test_count = 1;
  spec.seed = seed;
  auto [train, test] = gen_dataset(spec);
  t.data = std::move(train);

  Network net = make_network(t.cfg, seed);
  // Codebook from the fresh network's own descriptors.
  std::vector<double> pool;
  for (const Example& ex : t.data.items) {
    const Tensor d = encode_descriptors(ex.image, net.backbone,
                                        t.cfg.patch_scales, t.cfg.patch_step,
                                        nullptr);
    pool.insert(pool.end(), d.data.begin(), d.data.end());
  }
  Tensor descriptors({pool.size() / 6, 6});
  descriptors.data = std::move(pool);
  EmConfig em;
  em.seed = seed;
  em.max_iters = 20;
  const GmmModel gmm = fit_em(descriptors, 2, em);
  net.gmm = gmm;
  net.fisher = init_params_from_gmm(gmm);
  Rng rng(seed + 1);
  net.score = make_score_head(t.data.classes, t.cfg.fisher_dim(), rng, 0.01);
  t.init = net.to_checkpoint();
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("loss at zero scores is exactly C ln 2") {
  const std::vector<double> scores(4, 0.0);
  const std::vector<double> labels = {1.0, 0.0, 1.0, 0.0};
  const auto [loss, grad] = sigmoid_ce_loss(scores, labels);
  CHECK(loss == 4.0 * std::log(2.0));
  CHECK(grad[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(grad[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("saturated correct prediction has negligible loss") {
  const std::vector<double> scores = {30.0};
  const std::vector<double> labels = {1.0};
  const auto [loss, grad] = sigmoid_ce_loss(scores, labels);
  CHECK(loss <= 1e-12);
  CHECK(std::abs(grad[0]) <= 1e-12);
}

TEST_CASE("loss stays finite at |s| = 100") {
  const std::vector<double> scores = {100.0, -100.0};
  const std::vector<double> labels = {0.0, 1.0};
  const auto [loss, grad] = sigmoid_ce_loss(scores, labels);
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(200.0).epsilon(1e-12));
  CHECK(grad[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(grad[1] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("loss rejects non-binary labels") {
  CHECK_THROWS_AS(sigmoid_ce_loss(std::vector<double>{0.0},
                                  std::vector<double>{0.5}),
                  Error);
}

TEST_CASE("loss gradient matches finite differences") {
  const CheckResult r = gradcheck_loss(3);
  CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("plain sgd subtracts lr times gradient") {
  Tensor p({3});
  p.data = {1.0, -2.0, 0.5};
  Tensor g({3});
  g.data = {0.5, 0.25, -1.0};
  Tensor v({3});
  sgd_step(p, g, v, 0.1, 0.0, 0.0);
  CHECK(p.data[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(p.data[1] == doctest::Approx(-2.025).epsilon(1e-15));
  CHECK(p.data[2] == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("zero gradient with zero velocity leaves parameters unchanged") {
  Tensor p({2});
  p.data = {3.0, -4.0};
  Tensor g({2});
  Tensor v({2});
  sgd_step(p, g, v, 0.5, 0.9, 0.0);
  CHECK(p.data == std::vector<double>{3.0, -4.0});
}

TEST_CASE("two momentum steps on a constant gradient unroll to -2.9 lr g") {
  Tensor p({1});
  p.data = {0.0};
  Tensor g({1});
  g.data = {2.0};
  Tensor v({1});
  const double lr = 0.1;
  sgd_step(p, g, v, lr, 0.9, 0.0);
  sgd_step(p, g, v, lr, 0.9, 0.0);
  CHECK(p.data[0] == doctest::Approx(-lr * 2.0 * 2.9).epsilon(1e-14));
}

TEST_CASE("stepped learning-rate schedule") {
  CHECK(lr_at(0, 0.01, 3000, 0.1) == 0.01);
  CHECK(lr_at(2999, 0.01, 3000, 0.1) == 0.01);
  CHECK(lr_at(3000, 0.01, 3000, 0.1) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(lr_at(6500, 0.01, 3000, 0.1) ==
        doctest::Approx(0.0001).epsilon(1e-12));
}

TEST_CASE("regime names round-trip") {
  for (const char* name : {"finetune", "fv-fixed", "fisher-only", "full"})
    CHECK(regime_name(parse_regime(name)) == name);
  CHECK_THROWS_AS(parse_regime("bogus"), Error);
}

TEST_CASE("zero learning rates leave the checkpoint bit-identical") {
  TinySetup t = tiny_setup(100, 4);
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.batch_size = 1;
  cfg.lr_backbone = 0.0;
  cfg.lr_fisher = 0.0;
  cfg.lr_score = 0.0;
  cfg.train_scales = {32};
  cfg.seed = 1;
  cfg.regime = Regime::Full;
  const Checkpoint out = train(t.data, cfg, t.init, t.cfg);
  CHECK(checkpoint_bytes(out) == checkpoint_bytes(t.init));
}

TEST_CASE("training overfits a one-image dataset") {
  TinySetup t = tiny_setup(200, 1);
  TrainConfig cfg;
  cfg.iterations = 200;
  cfg.batch_size = 1;
  cfg.lr_backbone = 0.001;
  cfg.lr_fisher = 0.05;
  cfg.lr_score = 0.02;
  cfg.train_scales = {32};
  cfg.hflip = false;
  cfg.seed = 2;
  cfg.regime = Regime::Full;
  std::vector<double> losses;
  train(t.data, cfg, t.init, t.cfg, nullptr, &losses);
  REQUIRE(losses.size() == 200);
  CHECK(losses.back() <= 0.5 * losses.front());
}

TEST_CASE("fisher-only regime freezes the backbone bitwise") {
  TinySetup t = tiny_setup(300, 4);
  TrainConfig cfg;
  cfg.iterations = 5;
  cfg.batch_size = 2;
  cfg.lr_backbone = 0.01;  // must be ignored by the regime gate
  cfg.lr_fisher = 0.05;
  cfg.lr_score = 0.02;
  cfg.train_scales = {32};
  cfg.seed = 3;
  cfg.regime = Regime::FisherOnly;
  const Checkpoint out = train(t.data, cfg, t.init, t.cfg);
  for (const auto& [name, tensor] : t.init.entries()) {
    if (name.rfind("trunk.", 0) == 0 || name.rfind("head.", 0) == 0) {
      CHECK(out.raw(name) == tensor);
    }
  }
  // The encoding layer itself must have moved.
  CHECK(out.raw("fisher.w") != t.init.raw("fisher.w"));
}

TEST_CASE("fv-fixed regime returns the init checkpoint unchanged") {
  TinySetup t = tiny_setup(400, 3);
  TrainConfig cfg;
  cfg.regime = Regime::FvFixed;
  cfg.iterations = 50;
  const Checkpoint out = train(t.data, cfg, t.init, t.cfg);
  CHECK(checkpoint_bytes(out) == checkpoint_bytes(t.init));
}

TEST_CASE("identical seeds give bit-identical training runs") {
  TinySetup t = tiny_setup(500, 4);
  TrainConfig cfg;
  cfg.iterations = 8;
  cfg.batch_size = 2;
  cfg.lr_backbone = 0.001;
  cfg.lr_fisher = 0.05;
  cfg.lr_score = 0.02;
  cfg.train_scales = {24, 32};
  cfg.seed = 7;
  cfg.regime = Regime::Full;
  const Checkpoint a = train(t.data, cfg, t.init, t.cfg);
  const Checkpoint b = train(t.data, cfg, t.init, t.cfg);
  CHECK(checkpoint_bytes(a) == checkpoint_bytes(b));
  cfg.seed = 8;
  const Checkpoint c = train(t.data, cfg, t.init, t.cfg);
  CHECK(checkpoint_bytes(c) != checkpoint_bytes(a));
}

TEST_CASE("training aborts on a non-finite loss") {
  TinySetup t = tiny_setup(600, 2);
  Checkpoint poisoned = t.init;
  Tensor w = poisoned.get("score.weight");
  w.data[0] = std::numeric_limits<double>::quiet_NaN();
  poisoned.put("score.weight", w);
  TrainConfig cfg;
  cfg.iterations = 2;
  cfg.batch_size = 1;
  cfg.train_scales = {32};
  cfg.regime = Regime::Full;
  CHECK_THROWS_AS(train(t.data, cfg, poisoned, t.cfg), Error);
}

TEST_CASE("training rejects an empty dataset") {
  TinySetup t = tiny_setup(700, 2);
  Dataset empty;
  empty.classes = 2;
  TrainConfig cfg;
  CHECK_THROWS_AS(train(empty, cfg, t.init, t.cfg), Error);
}

TEST_CASE("training logs one csv row per iteration") {
  TinySetup t = tiny_setup(800, 2);
  TrainConfig cfg;
  cfg.iterations = 4;
  cfg.batch_size = 1;
  cfg.train_scales = {32};
  cfg.regime = Regime::FisherOnly;
  std::ostringstream log;
  train(t.data, cfg, t.init, t.cfg, &log);
  int rows = 0;
  std::istringstream is(log.str());
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
}

TEST_CASE("end-to-end gradients match finite differences") {
  const CheckResult r = gradcheck_end_to_end(42);
  CHECK(r.checked > 100);
  CHECK(r.max_rel_err <= 1e-3);
}

TEST_SUITE_END();
