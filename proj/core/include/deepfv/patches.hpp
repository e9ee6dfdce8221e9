#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "deepfv/tensor.hpp"

namespace deepfv {

// Axis-aligned rectangle, pixel units, top-left inclusive.
struct Rect {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;

  friend bool operator==(const Rect&, const Rect&) = default;
};

// Dense square patches for every scale that fits inside the image: offsets
// 0, step, 2*step, ... plus one end-aligned position per axis when the last
// stepped patch does not touch the border. Scales exceeding the image are
// skipped; when no scale fits at all, a single centered square of side
// min(img_w, img_h) is emitted instead.
std::vector<Rect> dense_patches(int img_w, int img_h,
                                const std::vector<int>& scales, int step);

// Pixel rect -> feature-map rect for a trunk with the given total stride:
// start = floor(coord / stride), end = ceil((coord + extent) / stride),
// clamped to the feature-map bounds with a minimum extent of one cell.
Rect project_rect(const Rect& r, int total_stride, int fm_w, int fm_h);

// Argmax bookkeeping for the backward pass: one flat featmap index per
// output cell. Ties break to the lowest flat index.
struct SppCache {
  std::size_t channels = 0;
  int gh = 0;
  int gw = 0;
  std::vector<std::size_t> argmax;  // C * gh * gw entries
};

// Max-pools the rect region of a C x H x W feature map onto a fixed
// gh x gw grid. Sub-window (a, b) spans rows [floor(a*h/gh),
// ceil((a+1)*h/gh)) of the rect, and likewise for columns; every
// sub-window is non-empty.
std::pair<Tensor, SppCache> spp_forward(const Tensor& featmap, const Rect& r,
                                        int gh, int gw);

// Routes each upstream entry onto its cached argmax location, accumulating
// into d_featmap (shape C x H x W). Overlapping sub-windows add.
void spp_backward_into(const SppCache& cache, const Tensor& d_out,
                       Tensor& d_featmap);

// Convenience wrapper returning a fresh zero-initialized gradient map.
Tensor spp_backward(const SppCache& cache, const Tensor& d_out,
                    const std::vector<std::size_t>& featmap_dims);

}  // namespace deepfv
