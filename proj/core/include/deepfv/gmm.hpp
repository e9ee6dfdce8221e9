#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deepfv/tensor.hpp"
#include "deepfv/tensor_io.hpp"

namespace deepfv {

// Diagonal-covariance Gaussian mixture codebook. Immutable after fitting.
struct GmmModel {
  std::size_t K = 0;
  std::size_t D = 0;
  std::vector<double> weights;  // K, sums to 1
  Tensor means;                 // K x D
  Tensor sigmas;                // K x D standard deviations, > 0

  // Throws unless weights sum to 1 within 1e-12, all weights and sigmas
  // are strictly positive, and shapes are consistent.
  void validate() const;
};

struct EmConfig {
  int max_iters = 100;
  double tol = 1e-6;             // relative log-likelihood improvement
  double variance_floor = 1e-4;  // also scaled by global per-dim variance
  std::uint64_t seed = 0;
  std::size_t sample_count = 100000;  // descriptors used for fitting
};

// log u(x) for one diagonal Gaussian:
//   -(D/2) ln(2 pi) - sum_d ln sigma_d - 1/2 sum_d ((x_d - mu_d)/sigma_d)^2
double gaussian_log_density(std::span<const double> x,
                            std::span<const double> mu,
                            std::span<const double> sigma);

// Soft assignment gamma(k) = w_k u_k(x) / sum_n w_n u_n(x), computed in
// log space with a log-sum-exp shift. Rows sum to 1.
std::vector<double> posterior(std::span<const double> x, const GmmModel& model);

// Mean over rows of log sum_k w_k u_k(x).
double log_likelihood(const Tensor& descriptors, const GmmModel& model);

// EM fit with k-means++ seeding of the means, global per-dimension variance
// for the sigmas, and uniform initial weights. Deterministic per cfg.seed.
// ll_trace, when given, receives the mean log-likelihood at the start of
// every iteration (the EM convergence monitor).
GmmModel fit_em(const Tensor& descriptors, std::size_t K, const EmConfig& cfg,
                std::vector<double>* ll_trace = nullptr);

// Checkpoint names: "gmm.weights", "gmm.means", "gmm.sigmas".
void save_gmm(Checkpoint& c, const GmmModel& model);
GmmModel load_gmm(const Checkpoint& c);

}  // namespace deepfv
