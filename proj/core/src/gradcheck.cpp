#include "deepfv/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "deepfv/backbone.hpp"
#include "deepfv/fisher.hpp"
#include "deepfv/patches.hpp"
#include "deepfv/pipeline.hpp"
#include "deepfv/training.hpp"

namespace deepfv {

namespace {

constexpr double kEps = 1e-5;

// Central finite difference of a scalar objective in one coordinate.
double central_diff(double& coord, const std::function<double()>& objective) {
  const double saved = coord;
  coord = saved + kEps;
  const double plus = objective();
  coord = saved - kEps;
  const double minus = objective();
  coord = saved;
  return (plus - minus) / (2.0 * kEps);
}

void update_result(CheckResult& r, double analytic, double numeric) {
  r.max_rel_err =
      std::max(r.max_rel_err, fd_relative_error(analytic, numeric));
  ++r.checked;
}

}  // namespace

CheckResult gradcheck_fisher(std::uint64_t seed, int instances) {
  CheckResult result{"fisher-layer", 0.0, 1e-4, 0};
  Rng rng(seed);
  for (int inst = 0; inst < instances; ++inst) {
    const std::size_t m = 1 + rng.uniform_index(8);
    const std::size_t K = 1 + rng.uniform_index(5);
    const std::size_t D = 2 + rng.uniform_index(7);
    Tensor x({m, D});
    FisherParams p;
    p.K = K;
    p.D = D;
    p.w = Tensor({K, D});
    p.b = Tensor({K, D});
    for (double& v : x.data) v = rng.normal(0.0, 1.0);
    for (double& v : p.w.data) v = 0.3 + rng.uniform();  // keep w positive
    for (double& v : p.b.data) v = rng.normal(0.0, 1.0);
    std::vector<double> d_out(2 * K * D);
    for (double& v : d_out) v = rng.normal(0.0, 1.0);

    const auto objective = [&]() {
      const auto fv = fisher_layer_forward(x, p).first;
      double s = 0.0;
      for (std::size_t i = 0; i < fv.values.size(); ++i)
        s += d_out[i] * fv.values[i];
      return s;
    };

    const auto [fv, cache] = fisher_layer_forward(x, p);
    const FisherGrads grads = fisher_layer_backward(cache, p, d_out);
    for (std::size_t i = 0; i < x.numel(); ++i)
      update_result(result, grads.dx.data[i],
                    central_diff(x.data[i], objective));
    for (std::size_t i = 0; i < p.w.numel(); ++i)
      update_result(result, grads.dw.data[i],
                    central_diff(p.w.data[i], objective));
    for (std::size_t i = 0; i < p.b.numel(); ++i)
      update_result(result, grads.db.data[i],
                    central_diff(p.b.data[i], objective));
  }
  return result;
}

CheckResult gradcheck_trunk(std::uint64_t seed) {
  CheckResult result{"trunk", 0.0, 1e-4, 0};
  Rng rng(seed);
  BackboneConfig cfg;
  cfg.in_channels = 1;
  cfg.conv_channels = {3, 4};
  cfg.grid = 2;
  cfg.hidden_dim = 6;
  cfg.descriptor_dim = 4;
  cfg.init_std = 0.5;  // larger weights keep gradients well away from zero
  BackboneState state = make_backbone(cfg, rng);

  Tensor image({1, 10, 10});
  for (double& v : image.data) v = rng.normal(0.0, 1.0);
  auto [fm, cache0] = trunk_forward(image, state);
  Tensor r(fm.dims);
  for (double& v : r.data) v = rng.normal(0.0, 1.0);

  const auto objective = [&]() {
    const auto out = trunk_forward(image, state).first;
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += r.data[i] * out.data[i];
    return s;
  };

  state.zero_grads();
  const Tensor d_image = trunk_backward(cache0, r, state);
  for (std::size_t i = 0; i < image.numel(); ++i)
    update_result(result, d_image.data[i],
                  central_diff(image.data[i], objective));
  for (Layer& l : state.trunk) {
    if (l.weight.numel() == 0) continue;
    for (std::size_t i = 0; i < l.weight.numel(); ++i)
      update_result(result, l.dweight.data[i],
                    central_diff(l.weight.data[i], objective));
    for (std::size_t i = 0; i < l.bias.numel(); ++i)
      update_result(result, l.dbias.data[i],
                    central_diff(l.bias.data[i], objective));
  }
  return result;
}

CheckResult gradcheck_head(std::uint64_t seed) {
  CheckResult result{"head", 0.0, 1e-4, 0};
  Rng rng(seed);
  BackboneConfig cfg;
  cfg.in_channels = 1;
  cfg.conv_channels = {4};
  cfg.grid = 2;
  cfg.hidden_dim = 8;
  cfg.descriptor_dim = 5;
  cfg.init_std = 0.5;
  BackboneState state = make_backbone(cfg, rng);

  Tensor patch_map({4, 2, 2});
  for (double& v : patch_map.data) v = rng.normal(0.0, 1.0);
  std::vector<double> r(5);
  for (double& v : r) v = rng.normal(0.0, 1.0);

  const auto objective = [&]() {
    const auto out = head_forward(patch_map, state).first;
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += r[i] * out[i];
    return s;
  };

  auto [out0, cache] = head_forward(patch_map, state);
  state.zero_grads();
  const Tensor d_map = head_backward(cache, r, state);
  for (std::size_t i = 0; i < patch_map.numel(); ++i)
    update_result(result, d_map.data[i],
                  central_diff(patch_map.data[i], objective));
  for (Layer& l : state.head) {
    if (l.weight.numel() == 0) continue;
    for (std::size_t i = 0; i < l.weight.numel(); ++i)
      update_result(result, l.dweight.data[i],
                    central_diff(l.weight.data[i], objective));
    for (std::size_t i = 0; i < l.bias.numel(); ++i)
      update_result(result, l.dbias.data[i],
                    central_diff(l.bias.data[i], objective));
  }
  return result;
}

CheckResult gradcheck_spp(std::uint64_t seed) {
  CheckResult result{"spp", 0.0, 1e-6, 0};
  Rng rng(seed);
  Tensor fm({3, 7, 7});
  for (double& v : fm.data) v = rng.normal(0.0, 1.0);
  const Rect rect{1, 2, 5, 4};
  Tensor r({3, 2, 2});
  for (double& v : r.data) v = rng.normal(0.0, 1.0);

  const auto objective = [&]() {
    const auto out = spp_forward(fm, rect, 2, 2).first;
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += r.data[i] * out.data[i];
    return s;
  };

  const auto [out0, cache] = spp_forward(fm, rect, 2, 2);
  const Tensor d_fm = spp_backward(cache, r, fm.dims);
  for (std::size_t i = 0; i < fm.numel(); ++i)
    update_result(result, d_fm.data[i], central_diff(fm.data[i], objective));
  return result;
}

CheckResult gradcheck_loss(std::uint64_t seed) {
  CheckResult result{"loss", 0.0, 1e-6, 0};
  Rng rng(seed);
  std::vector<double> scores(5), labels(5);
  for (double& s : scores) s = rng.normal(0.0, 2.0);
  for (double& l : labels) l = rng.uniform() < 0.5 ? 0.0 : 1.0;

  const auto objective = [&]() {
    return sigmoid_ce_loss(scores, labels).first;
  };
  const auto [loss, d_scores] = sigmoid_ce_loss(scores, labels);
  for (std::size_t i = 0; i < scores.size(); ++i)
    update_result(result, d_scores[i], central_diff(scores[i], objective));
  return result;
}

CheckResult gradcheck_end_to_end(std::uint64_t seed) {
  CheckResult result{"end-to-end", 0.0, 1e-3, 0};
  Rng rng(seed);

  ModelConfig mcfg;
  mcfg.backbone.in_channels = 1;
  mcfg.backbone.conv_channels = {4};
  mcfg.backbone.grid = 2;
  mcfg.backbone.hidden_dim = 8;
  mcfg.backbone.descriptor_dim = 3;
  mcfg.backbone.init_std = 0.5;
  mcfg.gmm_components = 2;
  Network net = make_network(mcfg, seed);
  net.fisher = FisherParams{2, 3, Tensor({2, 3}), Tensor({2, 3})};
  for (double& v : net.fisher->w.data) v = 0.5 + rng.uniform();
  for (double& v : net.fisher->b.data) v = rng.normal(0.0, 0.5);
  net.score = make_score_head(2, mcfg.fisher_dim(), rng, 0.5);

  Tensor image({1, 8, 8});
  for (double& v : image.data) v = rng.normal(0.0, 1.0);
  // Deterministic jitter pushes pooling windows away from ties so the
  // finite-difference probe cannot flip an argmax.
  for (std::size_t i = 0; i < image.numel(); ++i)
    image.data[i] += 1e-3 * static_cast<double>(i);
  const std::vector<Rect> rects = {{0, 0, 6, 6}, {2, 2, 6, 6}};
  const std::vector<double> labels = {1.0, 0.0};

  const auto objective = [&]() {
    const Tensor descriptors =
        encode_patch_rects(image, net.backbone, rects, nullptr);
    const auto fv = fisher_layer_forward(descriptors, *net.fisher).first;
    const auto scores = net.score->forward(fv.values);
    return sigmoid_ce_loss(scores, labels).first;
  };

  // Analytic pass.
  net.backbone.zero_grads();
  net.score->dweight.fill(0.0);
  net.score->dbias.fill(0.0);
  EncodeCache cache;
  const Tensor descriptors =
      encode_patch_rects(image, net.backbone, rects, &cache);
  auto [fv, fcache] = fisher_layer_forward(descriptors, *net.fisher);
  const auto scores = net.score->forward(fv.values);
  auto [loss, d_scores] = sigmoid_ce_loss(scores, labels);
  const auto d_fv = net.score->backward(fv.values, d_scores);
  const FisherGrads fg = fisher_layer_backward(fcache, *net.fisher, d_fv);
  encode_backward(cache, fg.dx, net.backbone);

  const auto check_tensor = [&](const Tensor& analytic, Tensor& value) {
    for (std::size_t i = 0; i < value.numel(); ++i)
      update_result(result, analytic.data[i],
                    central_diff(value.data[i], objective));
  };
  for (Layer& l : net.backbone.trunk) {
    if (l.weight.numel() == 0) continue;
    check_tensor(l.dweight, l.weight);
    check_tensor(l.dbias, l.bias);
  }
  for (Layer& l : net.backbone.head) {
    if (l.weight.numel() == 0) continue;
    check_tensor(l.dweight, l.weight);
    check_tensor(l.dbias, l.bias);
  }
  check_tensor(fg.dw, net.fisher->w);
  check_tensor(fg.db, net.fisher->b);
  check_tensor(net.score->dweight, net.score->weight);
  check_tensor(net.score->dbias, net.score->bias);
  return result;
}

std::vector<CheckResult> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(gradcheck_fisher(seed, 20));
  out.push_back(gradcheck_trunk(seed + 1));
  out.push_back(gradcheck_head(seed + 2));
  out.push_back(gradcheck_spp(seed + 3));
  out.push_back(gradcheck_loss(seed + 4));
  out.push_back(gradcheck_end_to_end(seed + 5));
  return out;
}

}  // namespace deepfv
