#include <cmath>

#include "deepfv/backbone.hpp"
#include "deepfv/gradcheck.hpp"
#include "doctest.h"

using namespace deepfv;

namespace {

Layer make_conv_layer(int out_ch, int in_ch, int k, int stride, int pad) {
  Layer l;
  l.spec = LayerSpec::conv(out_ch, k, stride, pad);
  l.weight = Tensor({static_cast<std::size_t>(out_ch),
                     static_cast<std::size_t>(in_ch),
                     static_cast<std::size_t>(k), static_cast<std::size_t>(k)});
  l.bias = Tensor({static_cast<std::size_t>(out_ch)});
  l.dweight = Tensor(l.weight.dims);
  l.dbias = Tensor(l.bias.dims);
  return l;
}

BackboneState trunk_only(std::vector<Layer> layers, int in_channels) {
  BackboneState s;
  s.cfg.in_channels = in_channels;
  s.trunk = std::move(layers);
  s.total_stride = 1;
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("backbone");

TEST_CASE("identity 1x1 conv passes the input through") {
  Layer l = make_conv_layer(1, 1, 1, 1, 0);
  l.weight.data = {1.0};
  BackboneState s = trunk_only({l}, 1);
  Rng rng(1);
  Tensor img({1, 5, 7});
  for (double& v : img.data) v = rng.normal(0.0, 1.0);
  const auto [out, cache] = trunk_forward(img, s);
  CHECK(out == img);
}

TEST_CASE("2x2 all-ones kernel sums its window") {
  Layer l = make_conv_layer(1, 1, 2, 1, 0);
  l.weight.fill(1.0);
  BackboneState s = trunk_only({l}, 1);
  Tensor img({1, 3, 3});
  img.data = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto [out, cache] = trunk_forward(img, s);
  REQUIRE(out.dims == std::vector<std::size_t>{1, 2, 2});
  CHECK(out.data == std::vector<double>{12, 16, 24, 28});
}

TEST_CASE("spatial dims follow the conv/pool arithmetic") {
  Rng rng(2);
  BackboneConfig cfg;  // two conv-pool blocks, stride 4
  BackboneState s = make_backbone(cfg, rng);
  CHECK(s.total_stride == 4);
  const auto [out32, c32] = trunk_forward(Tensor({1, 32, 32}), s);
  CHECK(out32.dims == std::vector<std::size_t>{32, 8, 8});
  const auto [out64, c64] = trunk_forward(Tensor({1, 64, 48}), s);
  CHECK(out64.dims == std::vector<std::size_t>{32, 16, 12});
  // Doubling H doubles H'.
  CHECK(out64.dims[1] == 2 * out32.dims[1]);
}

TEST_CASE("undersized images are rejected") {
  Rng rng(3);
  BackboneConfig cfg;
  BackboneState s = make_backbone(cfg, rng);
  CHECK_THROWS_AS(trunk_forward(Tensor({1, 1, 1}), s), Error);
}

TEST_CASE("zero upstream gradient leaves zero parameter gradients") {
  Rng rng(4);
  BackboneConfig cfg;
  BackboneState s = make_backbone(cfg, rng);
  Tensor img({1, 16, 16});
  for (double& v : img.data) v = rng.normal(0.0, 1.0);
  const auto [fm, cache] = trunk_forward(img, s);
  s.zero_grads();
  const Tensor d_img = trunk_backward(cache, Tensor(fm.dims), s);
  for (double v : d_img.data) CHECK(v == 0.0);
  for (const Layer& l : s.trunk) {
    for (double v : l.dweight.data) CHECK(v == 0.0);
    for (double v : l.dbias.data) CHECK(v == 0.0);
  }
}

TEST_CASE("relu blocks gradient at negative pre-activations") {
  // conv bias forces a known sign pattern through the relu.
  Layer conv = make_conv_layer(1, 1, 1, 1, 0);
  conv.weight.data = {1.0};
  Layer relu{LayerSpec::relu(), {}, {}, {}, {}};
  BackboneState s = trunk_only({conv, relu}, 1);
  Tensor img({1, 1, 4});
  img.data = {-2.0, -0.5, 0.5, 2.0};
  const auto [out, cache] = trunk_forward(img, s);
  CHECK(out.data == std::vector<double>{0.0, 0.0, 0.5, 2.0});
  Tensor d_out({1, 1, 4}, 1.0);
  s.zero_grads();
  const Tensor d_img = trunk_backward(cache, d_out, s);
  CHECK(d_img.data == std::vector<double>{0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("trunk gradients match finite differences") {
  const CheckResult r = gradcheck_trunk(11);
  CHECK(r.checked > 100);
  CHECK(r.max_rel_err <= r.tolerance);
}

TEST_CASE("head gradients match finite differences") {
  const CheckResult r = gradcheck_head(12);
  CHECK(r.checked > 50);
  CHECK(r.max_rel_err <= r.tolerance);
}

TEST_CASE("zero input and zero bias give a zero descriptor") {
  Rng rng(5);
  BackboneConfig cfg;
  cfg.conv_channels = {4};
  cfg.grid = 2;
  cfg.hidden_dim = 6;
  cfg.descriptor_dim = 3;
  BackboneState s = make_backbone(cfg, rng);
  Tensor patch_map({4, 2, 2});
  const auto [descriptor, cache] = head_forward(patch_map, s);
  for (double v : descriptor) CHECK(v == 0.0);
}

TEST_CASE("identity fc layers pass the patch map through") {
  BackboneState s;
  s.cfg.in_channels = 1;
  s.cfg.grid = 2;
  s.cfg.hidden_dim = 4;
  s.cfg.descriptor_dim = 4;
  s.trunk_channels = 1;
  Layer fc;
  fc.spec = LayerSpec::fc(4);
  fc.weight = Tensor({4, 4});
  for (int i = 0; i < 4; ++i) fc.weight.at(i, i) = 1.0;
  fc.bias = Tensor({4});
  fc.dweight = Tensor(fc.weight.dims);
  fc.dbias = Tensor(fc.bias.dims);
  s.head.push_back(fc);
  Tensor patch_map({1, 2, 2});
  patch_map.data = {1.0, -2.0, 3.0, -4.0};
  const auto [descriptor, cache] = head_forward(patch_map, s);
  CHECK(descriptor == patch_map.data);
}

TEST_CASE("fc weight gradient is the outer product of output grad and input") {
  BackboneState s;
  s.cfg.in_channels = 1;
  s.cfg.grid = 1;
  s.cfg.descriptor_dim = 2;
  s.trunk_channels = 3;
  Layer fc;
  fc.spec = LayerSpec::fc(2);
  fc.weight = Tensor({2, 3});
  Rng rng(6);
  for (double& v : fc.weight.data) v = rng.normal(0.0, 1.0);
  fc.bias = Tensor({2});
  fc.dweight = Tensor(fc.weight.dims);
  fc.dbias = Tensor(fc.bias.dims);
  s.head.push_back(fc);
  Tensor patch_map({3, 1, 1});
  patch_map.data = {0.5, -1.5, 2.0};
  const auto [descriptor, cache] = head_forward(patch_map, s);
  const std::vector<double> d_out = {2.0, -3.0};
  head_backward(cache, d_out, s);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(s.head[0].dweight.at(o, i) ==
            doctest::Approx(d_out[o] * patch_map.data[i]).epsilon(1e-15));
  CHECK(s.head[0].dbias.data == d_out);
}

TEST_CASE("backbone parameters round-trip through a checkpoint") {
  Rng rng(7);
  BackboneConfig cfg;
  BackboneState a = make_backbone(cfg, rng);
  Checkpoint c;
  save_backbone(c, a);
  CHECK(c.contains("trunk.0.weight"));
  CHECK(c.contains("trunk.3.weight"));
  CHECK(c.contains("head.0.weight"));
  CHECK(c.contains("head.2.weight"));
  Rng rng2(8);
  BackboneState b = make_backbone(cfg, rng2);
  load_backbone_params(c, b);
  for (std::size_t i = 0; i < a.trunk.size(); ++i) {
    CHECK(b.trunk[i].weight == a.trunk[i].weight);
    CHECK(b.trunk[i].bias == a.trunk[i].bias);
  }
  for (std::size_t i = 0; i < a.head.size(); ++i)
    CHECK(b.head[i].weight == a.head[i].weight);
}

TEST_SUITE_END();
