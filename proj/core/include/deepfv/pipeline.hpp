#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deepfv/backbone.hpp"
#include "deepfv/fisher.hpp"
#include "deepfv/gmm.hpp"
#include "deepfv/patches.hpp"
#include "deepfv/tensor_io.hpp"

namespace deepfv {

// Architecture and patch-extraction hyperparameters shared by every stage.
struct ModelConfig {
  BackboneConfig backbone;
  std::size_t gmm_components = 8;  // K
  std::vector<int> patch_scales = {16, 24, 32};
  int patch_step = 8;

  std::size_t fisher_dim() const {
    return 2 * gmm_components *
           static_cast<std::size_t>(backbone.descriptor_dim);
  }
};

// Linear layer mapping an encoded representation to per-class scores.
struct ScoreHead {
  Tensor weight;  // C x in_dim
  Tensor bias;    // C
  Tensor dweight;
  Tensor dbias;

  std::vector<double> forward(std::span<const double> in) const;
  // Accumulates parameter gradients, returns d(in).
  std::vector<double> backward(std::span<const double> in,
                               std::span<const double> d_scores);
};

ScoreHead make_score_head(std::size_t classes, std::size_t in_dim, Rng& rng,
                          double init_std);

// The whole model: trunk + head backbone, optional GMM codebook, optional
// trainable encoding layer, optional score head.
struct Network {
  ModelConfig cfg;
  BackboneState backbone;
  std::optional<GmmModel> gmm;
  std::optional<FisherParams> fisher;
  std::optional<ScoreHead> score;

  Checkpoint to_checkpoint() const;
  static Network from_checkpoint(const Checkpoint& c, const ModelConfig& cfg);
};

// Fresh backbone-only network.
Network make_network(const ModelConfig& cfg, std::uint64_t seed);

// Everything the encode backward pass needs.
struct EncodeCache {
  Tensor resized;                 // network input image
  TrunkCache trunk;
  std::vector<std::size_t> featmap_dims;
  std::vector<Rect> rects;        // pixel rects on the resized image
  std::vector<SppCache> spp;
  std::vector<Tensor> patch_maps;  // SPP outputs, head inputs
  std::vector<HeadCache> heads;
};

// Shared trunk pass -> per-patch SPP + head for caller-provided rects.
// Returns the m x D descriptor matrix. The trunk runs exactly once.
Tensor encode_patch_rects(const Tensor& image, const BackboneState& state,
                          const std::vector<Rect>& rects, EncodeCache* cache);

// Dense patches over the image, then encode_patch_rects.
Tensor encode_descriptors(const Tensor& image, const BackboneState& state,
                          const std::vector<int>& patch_scales, int patch_step,
                          EncodeCache* cache);

// Single patch covering the whole image (the whole-image classifier path).
Tensor encode_whole_image(const Tensor& image, const BackboneState& state,
                          EncodeCache* cache);

// The rejected alternative kept for benchmarking: run the trunk on every
// patch crop instead of sharing one trunk pass.
Tensor encode_descriptors_unshared(const Tensor& image,
                                   const BackboneState& state,
                                   const std::vector<int>& patch_scales,
                                   int patch_step);

Tensor crop(const Tensor& image, const Rect& r);

// Backward through head, SPP, and trunk; parameter gradients accumulate
// into state. d_descriptors is m x D.
void encode_backward(const EncodeCache& cache, const Tensor& d_descriptors,
                     BackboneState& state);

// Bilinear resampling (C x H x W -> C x out_h x out_w).
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);
// Resize so the longest side equals `longest`, preserving aspect ratio.
Tensor resize_longest_side(const Tensor& image, int longest);
Tensor hflip(const Tensor& image);

}  // namespace deepfv
