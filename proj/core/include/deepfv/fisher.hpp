#pragma once

#include <span>
#include <utility>
#include <vector>

#include "deepfv/gmm.hpp"
#include "deepfv/tensor.hpp"
#include "deepfv/tensor_io.hpp"

namespace deepfv {

// Trainable encoding parameters: per component k a scale w_k = 1/sigma_k and
// a shift b_k = -mu_k, both K x D.
struct FisherParams {
  std::size_t K = 0;
  std::size_t D = 0;
  Tensor w;  // K x D
  Tensor b;  // K x D
};

// Encoded image representation, length 2*K*D, ordered
// [G_mu_1 .. G_mu_K, G_sigma_1 .. G_sigma_K] with D entries per block.
struct FisherVector {
  std::vector<double> values;
};

// Forward-pass intermediates kept for the backward pass.
struct FisherCache {
  Tensor x;      // m x D inputs
  Tensor y;      // m x K x D shifted/scaled values w_k * (x_j + b_k)
  Tensor gamma;  // m x K soft assignments
};

struct FisherGrads {
  Tensor dx;  // m x D
  Tensor dw;  // K x D
  Tensor db;  // K x D
};

// Fixed Fisher vector of a descriptor set under a GMM codebook, mean-pooled
// over rows. No normalization applied.
FisherVector encode_standard_fv(const Tensor& descriptors,
                                const GmmModel& model);

// w = 1/sigma, b = -mu elementwise.
FisherParams init_params_from_gmm(const GmmModel& model);

// softmax_k of -1/2 ||w_k * (x + b_k)||^2, max-shifted.
std::vector<double> fisher_layer_posterior(std::span<const double> x,
                                           const FisherParams& params);

// Mean over rows j of per-row blocks
//   G_mu_k    = gamma_j(k) * y_jk
//   G_sigma_k = gamma_j(k) * (y_jk^2 - 1) / sqrt(2)
// with y_jk = w_k * (x_j + b_k) and gamma_j = fisher_layer_posterior(x_j).
std::pair<FisherVector, FisherCache> fisher_layer_forward(
    const Tensor& descriptors, const FisherParams& params);

// Exact gradients of d_out . forward(x, w, b) w.r.t. x, w, b, including the
// softmax coupling of gamma across components.
FisherGrads fisher_layer_backward(const FisherCache& cache,
                                  const FisherParams& params,
                                  std::span<const double> d_out);

// sign(v) * sqrt(|v|) elementwise.
std::vector<double> power_normalize(std::span<const double> v);

// v / ||v||_2; inputs with norm below 1e-12 are returned unchanged.
std::vector<double> l2_normalize(std::span<const double> v);

// Checkpoint names: "fisher.w", "fisher.b".
void save_fisher(Checkpoint& c, const FisherParams& params);
FisherParams load_fisher(const Checkpoint& c);

}  // namespace deepfv
