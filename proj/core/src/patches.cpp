#include "deepfv/patches.hpp"

#include <algorithm>

namespace deepfv {

namespace {

// Stepped offsets covering [0, limit] with end alignment.
std::vector<int> axis_offsets(int extent, int scale, int step) {
  std::vector<int> offs;
  const int limit = extent - scale;
  for (int o = 0; o <= limit; o += step) offs.push_back(o);
  if (offs.back() != limit) offs.push_back(limit);
  return offs;
}

}  // namespace

std::vector<Rect> dense_patches(int img_w, int img_h,
                                const std::vector<int>& scales, int step) {
  check(step >= 1, "dense_patches: step must be >= 1");
  check(!scales.empty(), "dense_patches: scales must be non-empty");
  check(img_w >= 1 && img_h >= 1, "dense_patches: empty image");
  for (int s : scales) check(s >= 1, "dense_patches: scales must be >= 1");

  std::vector<Rect> out;
  for (int s : scales) {
    if (s > img_w || s > img_h) continue;
    const auto xs = axis_offsets(img_w, s, step);
    const auto ys = axis_offsets(img_h, s, step);
    for (int y : ys)
      for (int x : xs) out.push_back({x, y, s, s});
  }
  if (out.empty()) {
    // Every scale exceeds the image: one centered full crop.
    const int s = std::min(img_w, img_h);
    out.push_back({(img_w - s) / 2, (img_h - s) / 2, s, s});
  }
  check(!out.empty(), "no patches");
  return out;
}

Rect project_rect(const Rect& r, int total_stride, int fm_w, int fm_h) {
  check(total_stride >= 1, "project_rect: stride must be >= 1");
  check(fm_w >= 1 && fm_h >= 1, "project_rect: empty feature map");
  int x0 = r.x0 / total_stride;
  int y0 = r.y0 / total_stride;
  int x1 = (r.x0 + r.w + total_stride - 1) / total_stride;  // exclusive
  int y1 = (r.y0 + r.h + total_stride - 1) / total_stride;
  x0 = std::clamp(x0, 0, fm_w - 1);
  y0 = std::clamp(y0, 0, fm_h - 1);
  x1 = std::clamp(x1, x0 + 1, fm_w);
  y1 = std::clamp(y1, y0 + 1, fm_h);
  return {x0, y0, x1 - x0, y1 - y0};
}

std::pair<Tensor, SppCache> spp_forward(const Tensor& featmap, const Rect& r,
                                        int gh, int gw) {
  check(featmap.ndim() == 3, "spp_forward: featmap must be C x H x W");
  check(gh >= 1 && gw >= 1, "spp_forward: grid must be >= 1x1");
  check(r.w >= 1 && r.h >= 1, "spp_forward: empty rect");
  const std::size_t C = featmap.dims[0];
  const int H = static_cast<int>(featmap.dims[1]);
  const int W = static_cast<int>(featmap.dims[2]);
  check(r.x0 >= 0 && r.y0 >= 0 && r.x0 + r.w <= W && r.y0 + r.h <= H,
        "spp_forward: rect outside feature map");

  Tensor out({C, static_cast<std::size_t>(gh), static_cast<std::size_t>(gw)});
  SppCache cache;
  cache.channels = C;
  cache.gh = gh;
  cache.gw = gw;
  cache.argmax.assign(C * static_cast<std::size_t>(gh * gw), 0);

  for (int a = 0; a < gh; ++a) {
    const int r0 = r.y0 + (a * r.h) / gh;
    int r1 = r.y0 + ((a + 1) * r.h + gh - 1) / gh;
    r1 = std::max(r1, r0 + 1);
    for (int b = 0; b < gw; ++b) {
      const int c0 = r.x0 + (b * r.w) / gw;
      int c1 = r.x0 + ((b + 1) * r.w + gw - 1) / gw;
      c1 = std::max(c1, c0 + 1);
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double* plane = featmap.data.data() + ch * H * W;
        double best = plane[r0 * W + c0];
        std::size_t best_idx = static_cast<std::size_t>(r0 * W + c0);
        for (int row = r0; row < r1; ++row) {
          for (int col = c0; col < c1; ++col) {
            const double v = plane[row * W + col];
            if (v > best) {
              best = v;
              best_idx = static_cast<std::size_t>(row * W + col);
            }
          }
        }
        out.at(ch, a, b) = best;
        cache.argmax[(ch * gh + a) * gw + b] =
            ch * static_cast<std::size_t>(H * W) + best_idx;
      }
    }
  }
  return {std::move(out), std::move(cache)};
}

void spp_backward_into(const SppCache& cache, const Tensor& d_out,
                       Tensor& d_featmap) {
  check(d_out.dims == std::vector<std::size_t>{
                          cache.channels, static_cast<std::size_t>(cache.gh),
                          static_cast<std::size_t>(cache.gw)},
        "spp_backward: upstream shape mismatch");
  check(d_featmap.ndim() == 3 && d_featmap.dims[0] == cache.channels,
        "spp_backward: gradient map shape mismatch");
  const std::size_t n = cache.argmax.size();
  for (std::size_t i = 0; i < n; ++i) {
    check(cache.argmax[i] < d_featmap.numel(),
          "spp_backward: cache index outside feature map");
    d_featmap.data[cache.argmax[i]] += d_out.data[i];
  }
}

Tensor spp_backward(const SppCache& cache, const Tensor& d_out,
                    const std::vector<std::size_t>& featmap_dims) {
  Tensor grad(featmap_dims);
  spp_backward_into(cache, d_out, grad);
  return grad;
}

}  // namespace deepfv
