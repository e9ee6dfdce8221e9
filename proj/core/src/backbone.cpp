#include "deepfv/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace deepfv {

namespace {

int conv_out_extent(int in, int pad, int k, int stride) {
  return (in + 2 * pad - k) / stride + 1;
}

void init_layer(Layer& l, int in_dim_or_channels, Rng& rng, double std) {
  if (l.spec.kind == LayerKind::Conv) {
    const int oc = l.spec.out_channels;
    const int k = l.spec.ksize;
    l.weight = Tensor({static_cast<std::size_t>(oc),
                       static_cast<std::size_t>(in_dim_or_channels),
                       static_cast<std::size_t>(k), static_cast<std::size_t>(k)});
    l.bias = Tensor({static_cast<std::size_t>(oc)});
  } else if (l.spec.kind == LayerKind::Fc) {
    l.weight = Tensor({static_cast<std::size_t>(l.spec.out_dim),
                       static_cast<std::size_t>(in_dim_or_channels)});
    l.bias = Tensor({static_cast<std::size_t>(l.spec.out_dim)});
  } else {
    return;
  }
  for (double& w : l.weight.data) w = rng.normal(0.0, std);
  l.dweight = Tensor(l.weight.dims);
  l.dbias = Tensor(l.bias.dims);
}

}  // namespace

void BackboneState::zero_grads() {
  for (auto* layers : {&trunk, &head})
    for (Layer& l : *layers) {
      l.dweight.fill(0.0);
      l.dbias.fill(0.0);
    }
}

BackboneState make_backbone(const BackboneConfig& cfg, Rng& rng) {
  check(!cfg.conv_channels.empty(), "make_backbone: need at least one conv");
  check(cfg.grid >= 1 && cfg.hidden_dim >= 1 && cfg.descriptor_dim >= 1,
        "make_backbone: invalid head configuration");
  BackboneState s;
  s.cfg = cfg;
  int channels = cfg.in_channels;
  s.total_stride = 1;
  for (int oc : cfg.conv_channels) {
    Layer conv;
    conv.spec = LayerSpec::conv(oc, 3, 1, 1);
    init_layer(conv, channels, rng, cfg.init_std);
    s.trunk.push_back(std::move(conv));
    s.trunk.push_back(Layer{LayerSpec::relu(), {}, {}, {}, {}});
    s.trunk.push_back(Layer{LayerSpec::maxpool(2, 2), {}, {}, {}, {}});
    s.total_stride *= 2;
    channels = oc;
  }
  s.trunk_channels = channels;

  Layer fc1;
  fc1.spec = LayerSpec::fc(cfg.hidden_dim);
  init_layer(fc1, s.head_input_dim(), rng, cfg.init_std);
  s.head.push_back(std::move(fc1));
  s.head.push_back(Layer{LayerSpec::relu(), {}, {}, {}, {}});
  Layer fc2;
  fc2.spec = LayerSpec::fc(cfg.descriptor_dim);
  init_layer(fc2, cfg.hidden_dim, rng, cfg.init_std);
  s.head.push_back(std::move(fc2));
  return s;
}

namespace {

Tensor conv_forward(const Tensor& in, const Layer& l) {
  const int ic = static_cast<int>(in.dims[0]);
  const int ih = static_cast<int>(in.dims[1]);
  const int iw = static_cast<int>(in.dims[2]);
  const int k = l.spec.ksize;
  const int s = l.spec.stride;
  const int p = l.spec.pad;
  const int oc = l.spec.out_channels;
  check(static_cast<int>(l.weight.dims[1]) == ic,
        "conv: input channel mismatch");
  const int oh = conv_out_extent(ih, p, k, s);
  const int ow = conv_out_extent(iw, p, k, s);
  check(oh >= 1 && ow >= 1, "conv: input smaller than kernel");

  Tensor out({static_cast<std::size_t>(oc), static_cast<std::size_t>(oh),
              static_cast<std::size_t>(ow)});
  for (int o = 0; o < oc; ++o) {
    const double bias = l.bias[static_cast<std::size_t>(o)];
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = bias;
        for (int c = 0; c < ic; ++c) {
          const double* plane = in.data.data() + c * ih * iw;
          const double* wrow =
              l.weight.data.data() + ((o * ic + c) * k) * k;
          for (int u = 0; u < k; ++u) {
            const int row = y * s - p + u;
            if (row < 0 || row >= ih) continue;
            for (int v = 0; v < k; ++v) {
              const int col = x * s - p + v;
              if (col < 0 || col >= iw) continue;
              acc += wrow[u * k + v] * plane[row * iw + col];
            }
          }
        }
        out.at(static_cast<std::size_t>(o), static_cast<std::size_t>(y),
               static_cast<std::size_t>(x)) = acc;
      }
    }
  }
  return out;
}

Tensor conv_backward(const Tensor& in, const Tensor& d_out, Layer& l) {
  const int ic = static_cast<int>(in.dims[0]);
  const int ih = static_cast<int>(in.dims[1]);
  const int iw = static_cast<int>(in.dims[2]);
  const int k = l.spec.ksize;
  const int s = l.spec.stride;
  const int p = l.spec.pad;
  const int oc = l.spec.out_channels;
  const int oh = static_cast<int>(d_out.dims[1]);
  const int ow = static_cast<int>(d_out.dims[2]);

  Tensor d_in(in.dims);
  for (int o = 0; o < oc; ++o) {
    double db = 0.0;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const double g = d_out.at(static_cast<std::size_t>(o),
                                  static_cast<std::size_t>(y),
                                  static_cast<std::size_t>(x));
        if (g == 0.0) continue;
        db += g;
        for (int c = 0; c < ic; ++c) {
          const double* plane = in.data.data() + c * ih * iw;
          double* dplane = d_in.data.data() + c * ih * iw;
          double* dwrow = l.dweight.data.data() + ((o * ic + c) * k) * k;
          const double* wrow = l.weight.data.data() + ((o * ic + c) * k) * k;
          for (int u = 0; u < k; ++u) {
            const int row = y * s - p + u;
            if (row < 0 || row >= ih) continue;
            for (int v = 0; v < k; ++v) {
              const int col = x * s - p + v;
              if (col < 0 || col >= iw) continue;
              dwrow[u * k + v] += g * plane[row * iw + col];
              dplane[row * iw + col] += g * wrow[u * k + v];
            }
          }
        }
      }
    }
    l.dbias[static_cast<std::size_t>(o)] += db;
  }
  return d_in;
}

Tensor pool_forward(const Tensor& in, const LayerSpec& spec,
                    std::vector<std::size_t>& argmax) {
  const int c = static_cast<int>(in.dims[0]);
  const int ih = static_cast<int>(in.dims[1]);
  const int iw = static_cast<int>(in.dims[2]);
  const int k = spec.pool_size;
  const int s = spec.pool_stride;
  check(ih >= k && iw >= k, "maxpool: input smaller than window");
  const int oh = (ih - k) / s + 1;
  const int ow = (iw - k) / s + 1;
  Tensor out({static_cast<std::size_t>(c), static_cast<std::size_t>(oh),
              static_cast<std::size_t>(ow)});
  argmax.assign(static_cast<std::size_t>(c) * oh * ow, 0);
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = in.data.data() + ch * ih * iw;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double best = plane[(y * s) * iw + x * s];
        int best_idx = (y * s) * iw + x * s;
        for (int u = 0; u < k; ++u) {
          for (int v = 0; v < k; ++v) {
            const int idx = (y * s + u) * iw + (x * s + v);
            if (plane[idx] > best) {
              best = plane[idx];
              best_idx = idx;
            }
          }
        }
        out.at(static_cast<std::size_t>(ch), static_cast<std::size_t>(y),
               static_cast<std::size_t>(x)) = best;
        argmax[(static_cast<std::size_t>(ch) * oh + y) * ow + x] =
            static_cast<std::size_t>(ch * ih * iw + best_idx);
      }
    }
  }
  return out;
}

Tensor pool_backward(const std::vector<std::size_t>& argmax,
                     const Tensor& d_out,
                     const std::vector<std::size_t>& in_dims) {
  Tensor d_in(in_dims);
  for (std::size_t i = 0; i < argmax.size(); ++i)
    d_in.data[argmax[i]] += d_out.data[i];
  return d_in;
}

Tensor relu_forward(const Tensor& in) {
  Tensor out = in;
  for (double& v : out.data) v = std::max(v, 0.0);
  return out;
}

Tensor relu_backward(const Tensor& in, const Tensor& d_out) {
  Tensor d_in(in.dims);
  for (std::size_t i = 0; i < in.numel(); ++i)
    d_in.data[i] = in.data[i] > 0.0 ? d_out.data[i] : 0.0;
  return d_in;
}

std::vector<double> fc_forward(std::span<const double> in, const Layer& l) {
  const std::size_t out_dim = l.weight.dims[0];
  const std::size_t in_dim = l.weight.dims[1];
  check(in.size() == in_dim, "fc: input dimension mismatch");
  std::vector<double> out(out_dim);
  for (std::size_t o = 0; o < out_dim; ++o) {
    const double* wrow = l.weight.data.data() + o * in_dim;
    double acc = l.bias[o];
    for (std::size_t i = 0; i < in_dim; ++i) acc += wrow[i] * in[i];
    out[o] = acc;
  }
  return out;
}

std::vector<double> fc_backward(std::span<const double> in,
                                std::span<const double> d_out, Layer& l) {
  const std::size_t out_dim = l.weight.dims[0];
  const std::size_t in_dim = l.weight.dims[1];
  std::vector<double> d_in(in_dim, 0.0);
  for (std::size_t o = 0; o < out_dim; ++o) {
    const double g = d_out[o];
    l.dbias[o] += g;
    if (g == 0.0) continue;
    const double* wrow = l.weight.data.data() + o * in_dim;
    double* dwrow = l.dweight.data.data() + o * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) {
      dwrow[i] += g * in[i];
      d_in[i] += g * wrow[i];
    }
  }
  return d_in;
}

}  // namespace

std::pair<Tensor, TrunkCache> trunk_forward(const Tensor& image,
                                            const BackboneState& state) {
  check(image.ndim() == 3, "trunk_forward: image must be C x H x W");
  check(static_cast<int>(image.dims[0]) == state.cfg.in_channels,
        "trunk_forward: channel mismatch");
  TrunkCache cache;
  cache.pool_argmax.resize(state.trunk.size());
  Tensor cur = image;
  for (std::size_t i = 0; i < state.trunk.size(); ++i) {
    const Layer& l = state.trunk[i];
    cache.inputs.push_back(cur);
    switch (l.spec.kind) {
      case LayerKind::Conv:
        cur = conv_forward(cur, l);
        break;
      case LayerKind::Relu:
        cur = relu_forward(cur);
        break;
      case LayerKind::MaxPool:
        cur = pool_forward(cur, l.spec, cache.pool_argmax[i]);
        break;
      case LayerKind::Fc:
        fail("trunk_forward: fc layers belong to the head");
    }
  }
  return {std::move(cur), std::move(cache)};
}

Tensor trunk_backward(const TrunkCache& cache, const Tensor& d_featmap,
                      BackboneState& state) {
  check(cache.inputs.size() == state.trunk.size(),
        "trunk_backward: cache does not match trunk");
  Tensor grad = d_featmap;
  for (std::size_t i = state.trunk.size(); i-- > 0;) {
    Layer& l = state.trunk[i];
    const Tensor& in = cache.inputs[i];
    switch (l.spec.kind) {
      case LayerKind::Conv:
        grad = conv_backward(in, grad, l);
        break;
      case LayerKind::Relu:
        grad = relu_backward(in, grad);
        break;
      case LayerKind::MaxPool:
        grad = pool_backward(cache.pool_argmax[i], grad, in.dims);
        break;
      case LayerKind::Fc:
        fail("trunk_backward: fc layers belong to the head");
    }
  }
  return grad;
}

std::pair<std::vector<double>, HeadCache> head_forward(
    const Tensor& patch_map, const BackboneState& state) {
  check(static_cast<int>(patch_map.numel()) == state.head_input_dim(),
        "head_forward: patch map size mismatch");
  HeadCache cache;
  std::vector<double> cur(patch_map.data.begin(), patch_map.data.end());
  for (const Layer& l : state.head) {
    cache.inputs.push_back(cur);
    if (l.spec.kind == LayerKind::Fc) {
      cur = fc_forward(cur, l);
    } else if (l.spec.kind == LayerKind::Relu) {
      for (double& v : cur) v = std::max(v, 0.0);
    } else {
      fail("head_forward: only fc and relu layers allowed in the head");
    }
  }
  return {std::move(cur), std::move(cache)};
}

Tensor head_backward(const HeadCache& cache,
                     std::span<const double> d_descriptor,
                     BackboneState& state) {
  check(cache.inputs.size() == state.head.size(),
        "head_backward: cache does not match head");
  std::vector<double> grad(d_descriptor.begin(), d_descriptor.end());
  for (std::size_t i = state.head.size(); i-- > 0;) {
    Layer& l = state.head[i];
    const auto& in = cache.inputs[i];
    if (l.spec.kind == LayerKind::Fc) {
      grad = fc_backward(in, grad, l);
    } else {
      for (std::size_t j = 0; j < grad.size(); ++j)
        if (in[j] <= 0.0) grad[j] = 0.0;
    }
  }
  const int g = state.cfg.grid;
  Tensor d_map({static_cast<std::size_t>(state.trunk_channels),
                static_cast<std::size_t>(g), static_cast<std::size_t>(g)});
  check(grad.size() == d_map.numel(), "head_backward: gradient size mismatch");
  std::copy(grad.begin(), grad.end(), d_map.data.begin());
  return d_map;
}

void save_backbone(Checkpoint& c, const BackboneState& state) {
  const auto put_layers = [&](const std::vector<Layer>& layers,
                              const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.numel() == 0) continue;
      const std::string base = prefix + "." + std::to_string(i);
      c.put(base + ".weight", layers[i].weight);
      c.put(base + ".bias", layers[i].bias);
    }
  };
  put_layers(state.trunk, "trunk");
  put_layers(state.head, "head");
}

void load_backbone_params(const Checkpoint& c, BackboneState& state) {
  const auto get_layers = [&](std::vector<Layer>& layers,
                              const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.numel() == 0) continue;
      const std::string base = prefix + "." + std::to_string(i);
      Tensor w = c.get(base + ".weight");
      Tensor b = c.get(base + ".bias");
      check(w.dims == layers[i].weight.dims && b.dims == layers[i].bias.dims,
            "load_backbone_params: shape mismatch for " + base);
      layers[i].weight = std::move(w);
      layers[i].bias = std::move(b);
    }
  };
  get_layers(state.trunk, "trunk");
  get_layers(state.head, "head");
}

}  // namespace deepfv
