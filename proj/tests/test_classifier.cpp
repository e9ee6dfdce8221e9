#include <algorithm>
#include <cmath>

#include "deepfv/classifier.hpp"
#include "deepfv/gmm.hpp"
#include "doctest.h"

using namespace deepfv;

TEST_SUITE_BEGIN("classifier");

TEST_CASE("perfect ranking has AP 1") {
  const std::vector<double> scores = {0.9, 0.8, 0.2, 0.1};
  const std::vector<double> labels = {1.0, 1.0, 0.0, 0.0};
  CHECK(average_precision(scores, labels) == 1.0);
}

TEST_CASE("hand-computed AP example") {
  const std::vector<double> scores = {0.9, 0.8, 0.7};
  const std::vector<double> labels = {1.0, 0.0, 1.0};
  CHECK(std::abs(average_precision(scores, labels) - 5.0 / 6.0) <= 1e-9);
}

TEST_CASE("a single positive example has AP 1") {
  CHECK(average_precision(std::vector<double>{0.3},
                          std::vector<double>{1.0}) == 1.0);
}

TEST_CASE("AP rejects inputs without positives") {
  CHECK_THROWS_AS(average_precision(std::vector<double>{0.5, 0.2},
                                    std::vector<double>{0.0, 0.0}),
                  Error);
}

TEST_CASE("AP ties break by ascending index") {
  // Two equal scores; the positive sits at the lower index.
  const std::vector<double> scores = {0.5, 0.5, 0.1};
  const std::vector<double> a = {1.0, 0.0, 0.0};
  CHECK(average_precision(scores, a) == 1.0);
  const std::vector<double> b = {0.0, 1.0, 0.0};
  CHECK(average_precision(scores, b) == 0.5);
}

TEST_CASE("AP is invariant under strictly monotone score transforms") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + rng.uniform_index(20);
    std::vector<double> scores(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Well-separated scores so transforms cannot collapse ranks.
      scores[i] = -3.0 + 0.37 * static_cast<double>(rng.uniform_index(1000));
      labels[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    }
    labels[rng.uniform_index(n)] = 1.0;  // ensure a positive
    const double base = average_precision(scores, labels);
    std::vector<double> affine(n), expo(n);
    for (std::size_t i = 0; i < n; ++i) {
      affine[i] = 2.5 * scores[i] + 7.0;
      expo[i] = std::exp(scores[i] * 0.1);
    }
    CHECK(average_precision(affine, labels) == base);
    CHECK(average_precision(expo, labels) == base);
  }
}

TEST_CASE("AP under random ranking is near the positive rate") {
  Rng rng(13);
  const std::size_t n = 50;
  std::vector<double> labels(n, 0.0);
  for (std::size_t i = 0; i < 20; ++i) labels[i] = 1.0;
  double mean = 0.0;
  const int shuffles = 1000;
  for (int s = 0; s < shuffles; ++s) {
    std::vector<double> scores(n);
    for (double& v : scores) v = rng.uniform();
    mean += average_precision(scores, labels);
  }
  mean /= shuffles;
  CHECK(std::abs(mean - 0.4) <= 0.1);
}

TEST_CASE("mean_ap averages defined classes") {
  CHECK(mean_ap(std::vector<double>{1.0}) == 1.0);
  CHECK(mean_ap(std::vector<double>{0.8, 0.6}) ==
        doctest::Approx(0.7).epsilon(1e-15));
  CHECK_THROWS_AS(mean_ap(std::vector<double>{}), Error);
}

TEST_CASE("linearly separable data reaches training accuracy 1") {
  // Two clusters around (+2,+2) and (-2,-2), margin well over 1.
  Tensor x({8, 2});
  Tensor y({8, 1});
  Rng rng(17);
  for (std::size_t i = 0; i < 8; ++i) {
    const double sign = i < 4 ? 1.0 : -1.0;
    x.at(i, 0) = sign * 2.0 + 0.1 * rng.normal();
    x.at(i, 1) = sign * 2.0 + 0.1 * rng.normal();
    y.at(i, 0) = sign > 0.0 ? 1.0 : 0.0;
  }
  const SvmModel svm = train_svm_ova(x, y, 1.0);
  REQUIRE(svm.defined[0]);
  for (std::size_t i = 0; i < 8; ++i) {
    const double s = svm_scores(svm, x.row(i))[0];
    CHECK((s > 0.0) == (y.at(i, 0) > 0.5));
  }
}

TEST_CASE("duplicating the dataset keeps decision signs") {
  Tensor x({6, 2});
  Tensor y({6, 1});
  Rng rng(19);
  for (std::size_t i = 0; i < 6; ++i) {
    const double sign = i % 2 == 0 ? 1.0 : -1.0;
    x.at(i, 0) = sign * 1.5 + 0.2 * rng.normal();
    x.at(i, 1) = -sign * 0.5 + 0.2 * rng.normal();
    y.at(i, 0) = sign > 0.0 ? 1.0 : 0.0;
  }
  Tensor x2({12, 2});
  Tensor y2({12, 1});
  for (std::size_t i = 0; i < 12; ++i) {
    const std::size_t j = i % 6;
    x2.at(i, 0) = x.at(j, 0);
    x2.at(i, 1) = x.at(j, 1);
    y2.at(i, 0) = y.at(j, 0);
  }
  const SvmModel a = train_svm_ova(x, y, 1.0);
  const SvmModel b = train_svm_ova(x2, y2, 0.5);  // same objective shape
  for (std::size_t i = 0; i < 6; ++i) {
    const double sa = svm_scores(a, x.row(i))[0];
    const double sb = svm_scores(b, x.row(i))[0];
    CHECK((sa > 0.0) == (sb > 0.0));
  }
}

TEST_CASE("svm objective never increases") {
  Rng rng(23);
  Tensor x({30, 4});
  Tensor y({30, 2});
  for (std::size_t i = 0; i < 30; ++i) {
    for (std::size_t d = 0; d < 4; ++d) x.at(i, d) = rng.normal(0.0, 1.0);
    y.at(i, 0) = rng.uniform() < 0.5 ? 1.0 : 0.0;
    y.at(i, 1) = 1.0 - y.at(i, 0);
  }
  std::vector<std::vector<double>> traces;
  train_svm_ova(x, y, 1.0, &traces);
  for (const auto& trace : traces) {
    REQUIRE(trace.size() >= 2);
    for (std::size_t t = 1; t < trace.size(); ++t)
      CHECK(trace[t] <= trace[t - 1]);
  }
}

TEST_CASE("single-sign classes are skipped with AP undefined") {
  Tensor x({4, 2});
  Tensor y({4, 2});
  Rng rng(29);
  for (std::size_t i = 0; i < 4; ++i) {
    x.at(i, 0) = rng.normal(0.0, 1.0);
    x.at(i, 1) = rng.normal(0.0, 1.0);
    y.at(i, 0) = 1.0;              // all positive: skipped
    y.at(i, 1) = i < 2 ? 1.0 : 0.0;
  }
  const SvmModel svm = train_svm_ova(x, y, 1.0);
  CHECK_FALSE(svm.defined[0]);
  CHECK(svm.defined[1]);
  for (std::size_t j = 0; j < 2; ++j) CHECK(svm.weight.at(0, j) == 0.0);
}

TEST_CASE("extracted features are unit-norm rows") {
  ModelConfig cfg;
  cfg.backbone.conv_channels = {4};
  cfg.backbone.grid = 2;
  cfg.backbone.hidden_dim = 8;
  cfg.backbone.descriptor_dim = 4;
  cfg.gmm_components = 2;
  cfg.patch_scales = {12};
  cfg.patch_step = 6;
  Network net = make_network(cfg, 31);
  Rng rng(32);
  net.fisher = FisherParams{2, 4, Tensor({2, 4}), Tensor({2, 4})};
  for (double& v : net.fisher->w.data) v = 0.5 + rng.uniform();
  for (double& v : net.fisher->b.data) v = rng.normal(0.0, 0.5);

  SyntheticSpec spec;
  spec.image_size = 32;
  spec.classes = 2;
  spec.max_objects = 2;
  spec.train_count = 3;
  spec.test_count = 1;
  spec.seed = 33;
  const auto [data, unused] = gen_dataset(spec);

  const Tensor multi =
      extract_features(data, net, {24, 32}, EncoderKind::FisherLayer);
  REQUIRE(multi.dims == std::vector<std::size_t>{3, 16});
  for (std::size_t i = 0; i < 3; ++i) {
    double sq = 0.0;
    for (double v : multi.row(i)) sq += v * v;
    CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-9);
  }

  // A single scale equals that scale's normalized encoding; two identical
  // scales average to the same vector.
  const Tensor one = extract_features(data, net, {32}, EncoderKind::FisherLayer);
  const Tensor twice =
      extract_features(data, net, {32, 32}, EncoderKind::FisherLayer);
  for (std::size_t i = 0; i < one.numel(); ++i)
    CHECK(one.data[i] == doctest::Approx(twice.data[i]).epsilon(1e-12));
}

TEST_SUITE_END();
