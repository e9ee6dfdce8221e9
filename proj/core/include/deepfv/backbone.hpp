#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "deepfv/common.hpp"
#include "deepfv/tensor.hpp"
#include "deepfv/tensor_io.hpp"

namespace deepfv {

enum class LayerKind { Conv, Relu, MaxPool, Fc };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  // conv
  int out_channels = 0;
  int ksize = 0;
  int stride = 1;
  int pad = 0;
  // maxpool
  int pool_size = 2;
  int pool_stride = 2;
  // fc
  int out_dim = 0;

  static LayerSpec conv(int out_channels, int ksize, int stride, int pad) {
    LayerSpec s;
    s.kind = LayerKind::Conv;
    s.out_channels = out_channels;
    s.ksize = ksize;
    s.stride = stride;
    s.pad = pad;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec maxpool(int size, int stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.pool_size = size;
    s.pool_stride = stride;
    return s;
  }
  static LayerSpec fc(int out_dim) {
    LayerSpec s;
    s.kind = LayerKind::Fc;
    s.out_dim = out_dim;
    return s;
  }
};

// One trainable layer instance: spec plus parameter and gradient tensors
// (empty for relu/maxpool).
struct Layer {
  LayerSpec spec;
  Tensor weight;   // conv: OC x IC x k x k, fc: out x in
  Tensor bias;     // conv: OC, fc: out
  Tensor dweight;  // gradient accumulators, same shapes
  Tensor dbias;
};

struct BackboneConfig {
  int in_channels = 1;
  // Each entry is one conv(c, 3x3, s1, p1) - relu - maxpool(2, 2) block.
  std::vector<int> conv_channels = {16, 32};
  int grid = 3;  // SPP grid, fixes the head input size
  int hidden_dim = 128;
  int descriptor_dim = 64;
  double init_std = 0.01;
};

// Convolutional trunk (fully convolutional, arbitrary H x W) plus the
// fixed-size descriptor head fc(hidden) - relu - fc(descriptor_dim) fed by
// SPP outputs.
struct BackboneState {
  BackboneConfig cfg;
  std::vector<Layer> trunk;
  std::vector<Layer> head;
  int total_stride = 1;    // product of conv/pool strides
  int trunk_channels = 0;  // channels of the trunk output map

  int head_input_dim() const { return trunk_channels * cfg.grid * cfg.grid; }
  void zero_grads();
};

// Gaussian(0, init_std) weights, zero biases.
BackboneState make_backbone(const BackboneConfig& cfg, Rng& rng);

struct TrunkCache {
  // Input to each layer; inputs[i] feeds trunk[i].
  std::vector<Tensor> inputs;
  // Flat argmax indices for each maxpool layer (keyed by layer index).
  std::vector<std::vector<std::size_t>> pool_argmax;
};

// image: C x H x W. Errors if any layer would produce an empty map.
std::pair<Tensor, TrunkCache> trunk_forward(const Tensor& image,
                                            const BackboneState& state);
// Accumulates parameter gradients into state and returns d(image).
Tensor trunk_backward(const TrunkCache& cache, const Tensor& d_featmap,
                      BackboneState& state);

struct HeadCache {
  // Input vector to each head layer.
  std::vector<std::vector<double>> inputs;
};

// patch_map: trunk_channels x grid x grid from SPP.
std::pair<std::vector<double>, HeadCache> head_forward(
    const Tensor& patch_map, const BackboneState& state);
// Returns d(patch_map); accumulates parameter gradients into state.
Tensor head_backward(const HeadCache& cache,
                     std::span<const double> d_descriptor,
                     BackboneState& state);

// Checkpoint names: "trunk.<i>.weight" / "trunk.<i>.bias" and
// "head.<i>.weight" / "head.<i>.bias" with <i> the layer index.
void save_backbone(Checkpoint& c, const BackboneState& state);
void load_backbone_params(const Checkpoint& c, BackboneState& state);

}  // namespace deepfv
