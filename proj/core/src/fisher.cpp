#include "deepfv/fisher.hpp"

#include <algorithm>
#include <cmath>

namespace deepfv {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kSqrt2 = 1.41421356237309504880;
}  // namespace

FisherVector encode_standard_fv(const Tensor& descriptors,
                                const GmmModel& model) {
  check(descriptors.ndim() == 2, "encode_standard_fv: input must be m x D");
  const std::size_t m = descriptors.dims[0];
  check(m >= 1, "encode_standard_fv: empty descriptor set");
  check(descriptors.dims[1] == model.D,
        "encode_standard_fv: dimension mismatch");
  const std::size_t K = model.K;
  const std::size_t D = model.D;

  FisherVector fv;
  fv.values.assign(2 * K * D, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const auto x = descriptors.row(j);
    const auto gamma = posterior(x, model);
    for (std::size_t k = 0; k < K; ++k) {
      const double coeff = gamma[k] / std::sqrt(model.weights[k]);
      const auto mu = model.means.row(k);
      const auto sigma = model.sigmas.row(k);
      double* gm = fv.values.data() + k * D;
      double* gs = fv.values.data() + (K + k) * D;
      for (std::size_t d = 0; d < D; ++d) {
        const double z = (x[d] - mu[d]) / sigma[d];
        gm[d] += coeff * z;
        gs[d] += coeff * kInvSqrt2 * (z * z - 1.0);
      }
    }
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  for (double& v : fv.values) v *= inv_m;
  return fv;
}

FisherParams init_params_from_gmm(const GmmModel& model) {
  model.validate();
  FisherParams p;
  p.K = model.K;
  p.D = model.D;
  p.w = Tensor({p.K, p.D});
  p.b = Tensor({p.K, p.D});
  for (std::size_t i = 0; i < p.w.numel(); ++i) {
    p.w.data[i] = 1.0 / model.sigmas.data[i];
    p.b.data[i] = -model.means.data[i];
  }
  return p;
}

std::vector<double> fisher_layer_posterior(std::span<const double> x,
                                           const FisherParams& params) {
  check(x.size() == params.D, "fisher_layer_posterior: dimension mismatch");
  const std::size_t K = params.K;
  std::vector<double> logits(K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto w = params.w.row(k);
    const auto b = params.b.row(k);
    double q = 0.0;
    for (std::size_t d = 0; d < params.D; ++d) {
      const double y = w[d] * (x[d] + b[d]);
      q += y * y;
    }
    logits[k] = -0.5 * q;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    logits[k] = std::exp(logits[k] - mx);
    z += logits[k];
  }
  for (double& g : logits) g /= z;
  return logits;
}

std::pair<FisherVector, FisherCache> fisher_layer_forward(
    const Tensor& descriptors, const FisherParams& params) {
  check(descriptors.ndim() == 2, "fisher_layer_forward: input must be m x D");
  const std::size_t m = descriptors.dims[0];
  check(m >= 1, "fisher_layer_forward: empty descriptor set");
  const std::size_t K = params.K;
  const std::size_t D = params.D;
  check(descriptors.dims[1] == D, "fisher_layer_forward: dimension mismatch");

  FisherCache cache;
  cache.x = descriptors;
  cache.y = Tensor({m, K, D});
  cache.gamma = Tensor({m, K});

  FisherVector fv;
  fv.values.assign(2 * K * D, 0.0);
  std::vector<double> logits(K);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto x = descriptors.row(j);
    for (std::size_t k = 0; k < K; ++k) {
      const auto w = params.w.row(k);
      const auto b = params.b.row(k);
      double q = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        const double y = w[d] * (x[d] + b[d]);
        cache.y.at(j, k, d) = y;
        q += y * y;
      }
      logits[k] = -0.5 * q;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      logits[k] = std::exp(logits[k] - mx);
      z += logits[k];
    }
    for (std::size_t k = 0; k < K; ++k) {
      const double g = logits[k] / z;
      cache.gamma.at(j, k) = g;
      const double gm_coeff = g * inv_m;
      double* gm = fv.values.data() + k * D;
      double* gs = fv.values.data() + (K + k) * D;
      for (std::size_t d = 0; d < D; ++d) {
        const double y = cache.y.at(j, k, d);
        gm[d] += gm_coeff * y;
        gs[d] += gm_coeff * kInvSqrt2 * (y * y - 1.0);
      }
    }
  }
  return {std::move(fv), std::move(cache)};
}

FisherGrads fisher_layer_backward(const FisherCache& cache,
                                  const FisherParams& params,
                                  std::span<const double> d_out) {
  const std::size_t m = cache.x.dims[0];
  const std::size_t K = params.K;
  const std::size_t D = params.D;
  check(cache.y.dims == std::vector<std::size_t>{m, K, D} &&
            cache.gamma.dims == std::vector<std::size_t>{m, K},
        "fisher_layer_backward: cache does not match params");
  check(d_out.size() == 2 * K * D,
        "fisher_layer_backward: upstream gradient length mismatch");

  FisherGrads g;
  g.dx = Tensor({m, D});
  g.dw = Tensor({K, D});
  g.db = Tensor({K, D});

  const double inv_m = 1.0 / static_cast<double>(m);
  // a[k] = dmu_k . y_jk + dsigma_k . (y_jk^2 - 1)/sqrt(2), the pairing of
  // the upstream gradient with the blocks gamma multiplies.
  std::vector<double> a(K);
  for (std::size_t j = 0; j < m; ++j) {
    const auto x = cache.x.row(j);
    double abar = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double* gm = d_out.data() + k * D;
      const double* gs = d_out.data() + (K + k) * D;
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        const double y = cache.y.at(j, k, d);
        s += gm[d] * y + gs[d] * kInvSqrt2 * (y * y - 1.0);
      }
      a[k] = s;
      abar += cache.gamma.at(j, k) * s;
    }
    for (std::size_t k = 0; k < K; ++k) {
      const double gk = cache.gamma.at(j, k);
      if (gk == 0.0) continue;
      const double* gm = d_out.data() + k * D;
      const double* gs = d_out.data() + (K + k) * D;
      const double softmax_term = a[k] - abar;
      const auto w = params.w.row(k);
      const auto b = params.b.row(k);
      for (std::size_t d = 0; d < D; ++d) {
        const double y = cache.y.at(j, k, d);
        // d(out)/d(y_jkd): the direct linear/square path plus the softmax
        // coupling through the logit -1/2 ||y_jk||^2.
        const double dy =
            gk * inv_m * (gm[d] + kSqrt2 * gs[d] * y - softmax_term * y);
        g.dw.at(k, d) += dy * (x[d] + b[d]);
        g.db.at(k, d) += dy * w[d];
        g.dx.at(j, d) += dy * w[d];
      }
    }
  }
  return g;
}

std::vector<double> power_normalize(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = std::copysign(std::sqrt(std::abs(v[i])), v[i]);
  return out;
}

std::vector<double> l2_normalize(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  std::vector<double> out(v.begin(), v.end());
  if (norm < 1e-12) return out;
  for (double& x : out) x /= norm;
  return out;
}

void save_fisher(Checkpoint& c, const FisherParams& params) {
  c.put("fisher.w", params.w);
  c.put("fisher.b", params.b);
}

FisherParams load_fisher(const Checkpoint& c) {
  FisherParams p;
  p.w = c.get("fisher.w");
  p.b = c.get("fisher.b");
  check(p.w.ndim() == 2 && p.w.dims == p.b.dims,
        "load_fisher: inconsistent fisher tensors");
  p.K = p.w.dims[0];
  p.D = p.w.dims[1];
  return p;
}

}  // namespace deepfv
