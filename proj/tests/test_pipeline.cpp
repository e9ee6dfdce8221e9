#include <cmath>

#include "deepfv/pipeline.hpp"
#include "doctest.h"

using namespace deepfv;

TEST_SUITE_BEGIN("pipeline");

TEST_CASE("hflip is an involution and resize to same size is identity") {
  Rng rng(1);
  Tensor img({2, 6, 9});
  for (double& v : img.data) v = rng.normal(0.0, 1.0);
  CHECK(hflip(hflip(img)) == img);
  CHECK(resize_bilinear(img, 6, 9) == img);
  const Tensor big = resize_bilinear(img, 12, 18);
  CHECK(big.dims == std::vector<std::size_t>{2, 12, 18});
  const Tensor longest = resize_longest_side(img, 18);
  CHECK(longest.dims == std::vector<std::size_t>{2, 12, 18});
}

TEST_CASE("resize preserves constant images") {
  Tensor img({1, 8, 8}, 3.25);
  const Tensor out = resize_bilinear(img, 13, 5);
  for (double v : out.data) CHECK(v == doctest::Approx(3.25).epsilon(1e-15));
}

TEST_CASE("shared-trunk encode matches per-patch SPP on the same feature map") {
  ModelConfig cfg;
  cfg.backbone.conv_channels = {4, 8};
  cfg.backbone.grid = 2;
  cfg.backbone.hidden_dim = 8;
  cfg.backbone.descriptor_dim = 6;
  cfg.patch_scales = {16, 24};
  cfg.patch_step = 8;
  Network net = make_network(cfg, 5);
  Rng rng(6);
  Tensor img({1, 32, 32});
  for (double& v : img.data) v = rng.normal(0.0, 1.0);

  const Tensor descriptors = encode_descriptors(
      img, net.backbone, cfg.patch_scales, cfg.patch_step, nullptr);
  const auto rects = dense_patches(32, 32, cfg.patch_scales, cfg.patch_step);
  REQUIRE(descriptors.dims[0] == rects.size());

  const auto [fm, cache] = trunk_forward(img, net.backbone);
  for (std::size_t j = 0; j < rects.size(); ++j) {
    const Rect fr = project_rect(rects[j], net.backbone.total_stride,
                                 static_cast<int>(fm.dims[2]),
                                 static_cast<int>(fm.dims[1]));
    const auto pooled = spp_forward(fm, fr, 2, 2).first;
    const auto descriptor = head_forward(pooled, net.backbone).first;
    for (std::size_t d = 0; d < descriptor.size(); ++d)
      CHECK(descriptors.at(j, d) == descriptor[d]);
  }
}

TEST_CASE("whole-image encode uses a single covering patch") {
  ModelConfig cfg;
  cfg.backbone.conv_channels = {4};
  cfg.backbone.grid = 2;
  cfg.backbone.hidden_dim = 8;
  cfg.backbone.descriptor_dim = 5;
  Network net = make_network(cfg, 7);
  Rng rng(8);
  Tensor img({1, 20, 20});
  for (double& v : img.data) v = rng.normal(0.0, 1.0);
  EncodeCache cache;
  const Tensor d = encode_whole_image(img, net.backbone, &cache);
  CHECK(d.dims == std::vector<std::size_t>{1, 5});
  REQUIRE(cache.rects.size() == 1);
  CHECK(cache.rects[0] == Rect{0, 0, 20, 20});
}

TEST_CASE("score head backward is the outer-product rule") {
  Rng rng(9);
  ScoreHead head = make_score_head(3, 4, rng, 0.5);
  const std::vector<double> in = {1.0, -2.0, 0.5, 3.0};
  const std::vector<double> d_scores = {0.5, -1.0, 2.0};
  const auto scores = head.forward(in);
  REQUIRE(scores.size() == 3);
  const auto d_in = head.backward(in, d_scores);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(head.dweight.at(c, j) ==
            doctest::Approx(d_scores[c] * in[j]).epsilon(1e-15));
  for (std::size_t j = 0; j < 4; ++j) {
    double want = 0.0;
    for (std::size_t c = 0; c < 3; ++c) want += d_scores[c] * head.weight.at(c, j);
    CHECK(d_in[j] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("network round-trips through a checkpoint bitwise") {
  ModelConfig cfg;
  cfg.backbone.conv_channels = {4};
  cfg.backbone.grid = 2;
  cfg.backbone.hidden_dim = 8;
  cfg.backbone.descriptor_dim = 6;
  cfg.gmm_components = 2;
  Network net = make_network(cfg, 11);
  Rng rng(12);
  net.fisher = FisherParams{2, 6, Tensor({2, 6}), Tensor({2, 6})};
  for (double& v : net.fisher->w.data) v = 0.5 + rng.uniform();
  for (double& v : net.fisher->b.data) v = rng.normal(0.0, 1.0);
  net.score = make_score_head(3, cfg.fisher_dim(), rng, 0.01);

  const Checkpoint c = net.to_checkpoint();
  const Network back = Network::from_checkpoint(c, cfg);
  CHECK(back.fisher->w == net.fisher->w);
  CHECK(back.fisher->b == net.fisher->b);
  CHECK(back.score->weight == net.score->weight);
  CHECK(back.score->bias == net.score->bias);
  for (std::size_t i = 0; i < net.backbone.trunk.size(); ++i)
    CHECK(back.backbone.trunk[i].weight == net.backbone.trunk[i].weight);
  const Checkpoint again = back.to_checkpoint();
  CHECK(again == c);
}

TEST_CASE("crop extracts the pixel rectangle") {
  Tensor img({1, 4, 5});
  for (std::size_t i = 0; i < img.numel(); ++i)
    img.data[i] = static_cast<double>(i);
  const Tensor c = crop(img, {1, 2, 3, 2});
  REQUIRE(c.dims == std::vector<std::size_t>{1, 2, 3});
  CHECK(c.data == std::vector<double>{11, 12, 13, 16, 17, 18});
  CHECK_THROWS_AS(crop(img, {3, 3, 4, 4}), Error);
}

TEST_SUITE_END();
