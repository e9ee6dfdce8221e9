#include "deepfv/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace deepfv {

std::vector<double> ScoreHead::forward(std::span<const double> in) const {
  const std::size_t c = weight.dims[0];
  const std::size_t n = weight.dims[1];
  check(in.size() == n, "score: input dimension mismatch");
  std::vector<double> out(c);
  for (std::size_t i = 0; i < c; ++i) {
    const double* wrow = weight.data.data() + i * n;
    double acc = bias[i];
    for (std::size_t j = 0; j < n; ++j) acc += wrow[j] * in[j];
    out[i] = acc;
  }
  return out;
}

std::vector<double> ScoreHead::backward(std::span<const double> in,
                                        std::span<const double> d_scores) {
  const std::size_t c = weight.dims[0];
  const std::size_t n = weight.dims[1];
  check(d_scores.size() == c, "score backward: gradient size mismatch");
  std::vector<double> d_in(n, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    const double g = d_scores[i];
    dbias[i] += g;
    if (g == 0.0) continue;
    const double* wrow = weight.data.data() + i * n;
    double* dwrow = dweight.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      dwrow[j] += g * in[j];
      d_in[j] += g * wrow[j];
    }
  }
  return d_in;
}

ScoreHead make_score_head(std::size_t classes, std::size_t in_dim, Rng& rng,
                          double init_std) {
  ScoreHead s;
  s.weight = Tensor({classes, in_dim});
  s.bias = Tensor({classes});
  for (double& w : s.weight.data) w = rng.normal(0.0, init_std);
  s.dweight = Tensor(s.weight.dims);
  s.dbias = Tensor(s.bias.dims);
  return s;
}

Checkpoint Network::to_checkpoint() const {
  Checkpoint c;
  save_backbone(c, backbone);
  if (gmm) save_gmm(c, *gmm);
  if (fisher) save_fisher(c, *fisher);
  if (score) {
    c.put("score.weight", score->weight);
    c.put("score.bias", score->bias);
  }
  return c;
}

Network Network::from_checkpoint(const Checkpoint& c, const ModelConfig& cfg) {
  Network net;
  net.cfg = cfg;
  Rng rng(0);  // parameters are overwritten by the checkpoint
  net.backbone = make_backbone(cfg.backbone, rng);
  load_backbone_params(c, net.backbone);
  if (c.contains("gmm.weights")) net.gmm = load_gmm(c);
  if (c.contains("fisher.w")) net.fisher = load_fisher(c);
  if (c.contains("score.weight")) {
    ScoreHead s;
    s.weight = c.get("score.weight");
    s.bias = c.get("score.bias");
    check(s.weight.ndim() == 2 && s.bias.ndim() == 1 &&
              s.weight.dims[0] == s.bias.dims[0],
          "from_checkpoint: inconsistent score tensors");
    s.dweight = Tensor(s.weight.dims);
    s.dbias = Tensor(s.bias.dims);
    net.score = std::move(s);
  }
  return net;
}

Network make_network(const ModelConfig& cfg, std::uint64_t seed) {
  Network net;
  net.cfg = cfg;
  Rng rng(seed);
  net.backbone = make_backbone(cfg.backbone, rng);
  return net;
}

Tensor encode_patch_rects(const Tensor& image, const BackboneState& state,
                          const std::vector<Rect>& rects, EncodeCache* cache) {
  TrunkCache trunk_cache;
  auto [featmap, tc] = trunk_forward(image, state);
  trunk_cache = std::move(tc);
  const int fm_h = static_cast<int>(featmap.dims[1]);
  const int fm_w = static_cast<int>(featmap.dims[2]);
  const int grid = state.cfg.grid;

  const std::size_t m = rects.size();
  Tensor descriptors(
      {m, static_cast<std::size_t>(state.cfg.descriptor_dim)});
  if (cache) {
    cache->resized = image;
    cache->featmap_dims = featmap.dims;
    cache->rects = rects;
    cache->spp.resize(m);
    cache->patch_maps.resize(m);
    cache->heads.resize(m);
  }
  for (std::size_t j = 0; j < m; ++j) {
    const Rect fr = project_rect(rects[j], state.total_stride, fm_w, fm_h);
    auto [patch_map, spp_cache] = spp_forward(featmap, fr, grid, grid);
    auto [descriptor, head_cache] = head_forward(patch_map, state);
    std::copy(descriptor.begin(), descriptor.end(),
              descriptors.row(j).data());
    if (cache) {
      cache->spp[j] = std::move(spp_cache);
      cache->patch_maps[j] = std::move(patch_map);
      cache->heads[j] = std::move(head_cache);
    }
  }
  if (cache) cache->trunk = std::move(trunk_cache);
  return descriptors;
}

Tensor encode_descriptors(const Tensor& image, const BackboneState& state,
                          const std::vector<int>& patch_scales, int patch_step,
                          EncodeCache* cache) {
  const int h = static_cast<int>(image.dims[1]);
  const int w = static_cast<int>(image.dims[2]);
  const auto rects = dense_patches(w, h, patch_scales, patch_step);
  return encode_patch_rects(image, state, rects, cache);
}

Tensor encode_whole_image(const Tensor& image, const BackboneState& state,
                          EncodeCache* cache) {
  const int h = static_cast<int>(image.dims[1]);
  const int w = static_cast<int>(image.dims[2]);
  return encode_patch_rects(image, state, {Rect{0, 0, w, h}}, cache);
}

Tensor crop(const Tensor& image, const Rect& r) {
  check(image.ndim() == 3, "crop: image must be C x H x W");
  const std::size_t c = image.dims[0];
  const int h = static_cast<int>(image.dims[1]);
  const int w = static_cast<int>(image.dims[2]);
  check(r.x0 >= 0 && r.y0 >= 0 && r.w >= 1 && r.h >= 1 && r.x0 + r.w <= w &&
            r.y0 + r.h <= h,
        "crop: rect outside image");
  Tensor out({c, static_cast<std::size_t>(r.h), static_cast<std::size_t>(r.w)});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (int y = 0; y < r.h; ++y)
      for (int x = 0; x < r.w; ++x)
        out.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            image.at(ch, static_cast<std::size_t>(r.y0 + y),
                     static_cast<std::size_t>(r.x0 + x));
  return out;
}

Tensor encode_descriptors_unshared(const Tensor& image,
                                   const BackboneState& state,
                                   const std::vector<int>& patch_scales,
                                   int patch_step) {
  const int h = static_cast<int>(image.dims[1]);
  const int w = static_cast<int>(image.dims[2]);
  const auto rects = dense_patches(w, h, patch_scales, patch_step);
  Tensor descriptors({rects.size(),
                      static_cast<std::size_t>(state.cfg.descriptor_dim)});
  const int grid = state.cfg.grid;
  for (std::size_t j = 0; j < rects.size(); ++j) {
    const Tensor patch = crop(image, rects[j]);
    auto [fm, tc] = trunk_forward(patch, state);
    const Rect full{0, 0, static_cast<int>(fm.dims[2]),
                    static_cast<int>(fm.dims[1])};
    auto [pooled, sc] = spp_forward(fm, full, grid, grid);
    auto [descriptor, hc] = head_forward(pooled, state);
    std::copy(descriptor.begin(), descriptor.end(), descriptors.row(j).data());
  }
  return descriptors;
}

void encode_backward(const EncodeCache& cache, const Tensor& d_descriptors,
                     BackboneState& state) {
  const std::size_t m = cache.rects.size();
  check(d_descriptors.ndim() == 2 && d_descriptors.dims[0] == m,
        "encode_backward: descriptor gradient shape mismatch");
  Tensor d_featmap(cache.featmap_dims);
  for (std::size_t j = 0; j < m; ++j) {
    const Tensor d_map =
        head_backward(cache.heads[j], d_descriptors.row(j), state);
    spp_backward_into(cache.spp[j], d_map, d_featmap);
  }
  trunk_backward(cache.trunk, d_featmap, state);
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  check(image.ndim() == 3, "resize: image must be C x H x W");
  check(out_h >= 1 && out_w >= 1, "resize: empty output");
  const std::size_t c = image.dims[0];
  const int ih = static_cast<int>(image.dims[1]);
  const int iw = static_cast<int>(image.dims[2]);
  if (ih == out_h && iw == out_w) return image;
  Tensor out({c, static_cast<std::size_t>(out_h),
              static_cast<std::size_t>(out_w)});
  const double sy = static_cast<double>(ih) / out_h;
  const double sx = static_cast<double>(iw) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(ih - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, ih - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(iw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, iw - 1);
      const double wx = fx - x0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = image.data.data() + ch * ih * iw;
        const double top =
            plane[y0 * iw + x0] * (1.0 - wx) + plane[y0 * iw + x1] * wx;
        const double bot =
            plane[y1 * iw + x0] * (1.0 - wx) + plane[y1 * iw + x1] * wx;
        out.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Tensor resize_longest_side(const Tensor& image, int longest) {
  const int ih = static_cast<int>(image.dims[1]);
  const int iw = static_cast<int>(image.dims[2]);
  const int cur = std::max(ih, iw);
  const double scale = static_cast<double>(longest) / cur;
  const int oh = std::max(1, static_cast<int>(std::lround(ih * scale)));
  const int ow = std::max(1, static_cast<int>(std::lround(iw * scale)));
  return resize_bilinear(image, oh, ow);
}

Tensor hflip(const Tensor& image) {
  check(image.ndim() == 3, "hflip: image must be C x H x W");
  Tensor out(image.dims);
  const std::size_t c = image.dims[0];
  const std::size_t h = image.dims[1];
  const std::size_t w = image.dims[2];
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.at(ch, y, x) = image.at(ch, y, w - 1 - x);
  return out;
}

}  // namespace deepfv
