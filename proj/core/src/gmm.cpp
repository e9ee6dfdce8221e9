#include "deepfv/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deepfv {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

void GmmModel::validate() const {
  check(K >= 1 && D >= 1, "GmmModel: K and D must be positive");
  check(weights.size() == K, "GmmModel: weights size mismatch");
  check(means.dims == std::vector<std::size_t>{K, D},
        "GmmModel: means shape mismatch");
  check(sigmas.dims == std::vector<std::size_t>{K, D},
        "GmmModel: sigmas shape mismatch");
  double sum = 0.0;
  for (double w : weights) {
    check(w > 0.0, "GmmModel: weights must be strictly positive");
    sum += w;
  }
  check(std::abs(sum - 1.0) <= 1e-12, "GmmModel: weights must sum to 1");
  for (double s : sigmas.data)
    check(s > 0.0 && std::isfinite(s), "GmmModel: sigmas must be positive");
}

double gaussian_log_density(std::span<const double> x,
                            std::span<const double> mu,
                            std::span<const double> sigma) {
  const std::size_t d = x.size();
  check(mu.size() == d && sigma.size() == d,
        "gaussian_log_density: dimension mismatch");
  double log_det = 0.0;
  double quad = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    check(sigma[i] > 0.0, "gaussian_log_density: sigma must be positive");
    log_det += std::log(sigma[i]);
    const double z = (x[i] - mu[i]) / sigma[i];
    quad += z * z;
  }
  return -0.5 * static_cast<double>(d) * kLog2Pi - log_det - 0.5 * quad;
}

namespace {

// log(w_k u_k(x)) for every component.
void component_log_joint(std::span<const double> x, const GmmModel& m,
                         std::vector<double>& out) {
  out.resize(m.K);
  for (std::size_t k = 0; k < m.K; ++k)
    out[k] = std::log(m.weights[k]) +
             gaussian_log_density(x, m.means.row(k), m.sigmas.row(k));
}

}  // namespace

std::vector<double> posterior(std::span<const double> x,
                              const GmmModel& model) {
  check(x.size() == model.D, "posterior: dimension mismatch");
  std::vector<double> logp;
  component_log_joint(x, model, logp);
  const double lse = log_sum_exp(logp);
  std::vector<double> gamma(model.K);
  for (std::size_t k = 0; k < model.K; ++k)
    gamma[k] = std::exp(logp[k] - lse);
  return gamma;
}

double log_likelihood(const Tensor& descriptors, const GmmModel& model) {
  check(descriptors.ndim() == 2, "log_likelihood: descriptors must be M x D");
  const std::size_t m = descriptors.dims[0];
  check(m > 0, "log_likelihood: empty descriptor set");
  check(descriptors.dims[1] == model.D, "log_likelihood: dimension mismatch");
  std::vector<double> logp;
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    component_log_joint(descriptors.row(j), model, logp);
    total += log_sum_exp(logp);
  }
  return total / static_cast<double>(m);
}

namespace {

// k-means++ seeding: first center uniform, the rest proportional to the
// squared distance to the nearest chosen center.
std::vector<std::size_t> kmeanspp_seeds(const Tensor& x, std::size_t K,
                                        Rng& rng) {
  const std::size_t m = x.dims[0];
  const std::size_t d = x.dims[1];
  std::vector<std::size_t> centers;
  centers.push_back(rng.uniform_index(m));
  std::vector<double> dist2(m, std::numeric_limits<double>::infinity());
  while (centers.size() < K) {
    const auto c = x.row(centers.back());
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const auto r = x.row(j);
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = r[i] - c[i];
        s += diff * diff;
      }
      dist2[j] = std::min(dist2[j], s);
      total += dist2[j];
    }
    if (total <= 0.0) {
      // All remaining points coincide with a center; pick round robin.
      centers.push_back(centers.size() % m);
      continue;
    }
    double u = rng.uniform() * total;
    std::size_t pick = m - 1;
    for (std::size_t j = 0; j < m; ++j) {
      u -= dist2[j];
      if (u <= 0.0) {
        pick = j;
        break;
      }
    }
    centers.push_back(pick);
  }
  return centers;
}

}  // namespace

GmmModel fit_em(const Tensor& descriptors, std::size_t K, const EmConfig& cfg,
                std::vector<double>* ll_trace) {
  if (ll_trace) ll_trace->clear();
  check(descriptors.ndim() == 2, "fit_em: descriptors must be M x D");
  const std::size_t total_m = descriptors.dims[0];
  const std::size_t d = descriptors.dims[1];
  check(K >= 1, "fit_em: K must be positive");
  check(total_m >= K, "fit_em: fewer descriptors than components");

  Rng rng(cfg.seed);

  // Optional subsampling (without replacement, Fisher-Yates prefix).
  Tensor x;
  if (cfg.sample_count > 0 && total_m > cfg.sample_count) {
    std::vector<std::size_t> idx(total_m);
    for (std::size_t i = 0; i < total_m; ++i) idx[i] = i;
    for (std::size_t i = 0; i < cfg.sample_count; ++i) {
      const std::size_t j = i + rng.uniform_index(total_m - i);
      std::swap(idx[i], idx[j]);
    }
    x = Tensor({cfg.sample_count, d});
    for (std::size_t i = 0; i < cfg.sample_count; ++i)
      std::copy_n(descriptors.row(idx[i]).data(), d, x.row(i).data());
  } else {
    x = descriptors;
  }
  const std::size_t m = x.dims[0];

  // Global per-dimension variance: initial sigma and variance floor scale.
  std::vector<double> gmean(d, 0.0), gvar(d, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const auto r = x.row(j);
    for (std::size_t i = 0; i < d; ++i) gmean[i] += r[i];
  }
  for (std::size_t i = 0; i < d; ++i) gmean[i] /= static_cast<double>(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto r = x.row(j);
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = r[i] - gmean[i];
      gvar[i] += diff * diff;
    }
  }
  std::vector<double> floor(d);
  for (std::size_t i = 0; i < d; ++i) {
    gvar[i] /= static_cast<double>(m);
    floor[i] = std::max(cfg.variance_floor,
                        cfg.variance_floor * gvar[i]);
  }

  GmmModel model;
  model.K = K;
  model.D = d;
  model.weights.assign(K, 1.0 / static_cast<double>(K));
  model.means = Tensor({K, d});
  model.sigmas = Tensor({K, d});
  const auto seeds = kmeanspp_seeds(x, K, rng);
  for (std::size_t k = 0; k < K; ++k) {
    std::copy_n(x.row(seeds[k]).data(), d, model.means.row(k).data());
    for (std::size_t i = 0; i < d; ++i)
      model.sigmas.at(k, i) = std::sqrt(std::max(gvar[i], floor[i]));
  }

  Tensor gamma({m, K});
  std::vector<double> logp;
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    // E-step in log space.
    double ll = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      component_log_joint(x.row(j), model, logp);
      const double lse = log_sum_exp(logp);
      ll += lse;
      for (std::size_t k = 0; k < K; ++k)
        gamma.at(j, k) = std::exp(logp[k] - lse);
    }
    ll /= static_cast<double>(m);
    if (ll_trace) ll_trace->push_back(ll);

    // M-step.
    for (std::size_t k = 0; k < K; ++k) {
      double nk = 0.0;
      for (std::size_t j = 0; j < m; ++j) nk += gamma.at(j, k);
      if (nk < 1e-10) {
        // Empty component: keep its parameters, give it a tiny weight.
        model.weights[k] = 1e-10;
        continue;
      }
      model.weights[k] = nk / static_cast<double>(m);
      auto mu = model.means.row(k);
      std::fill(mu.begin(), mu.end(), 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const double g = gamma.at(j, k);
        const auto r = x.row(j);
        for (std::size_t i = 0; i < d; ++i) mu[i] += g * r[i];
      }
      for (std::size_t i = 0; i < d; ++i) mu[i] /= nk;
      auto sg = model.sigmas.row(k);
      std::fill(sg.begin(), sg.end(), 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const double g = gamma.at(j, k);
        const auto r = x.row(j);
        for (std::size_t i = 0; i < d; ++i) {
          const double diff = r[i] - mu[i];
          sg[i] += g * diff * diff;
        }
      }
      for (std::size_t i = 0; i < d; ++i)
        sg[i] = std::sqrt(std::max(sg[i] / nk, floor[i]));
    }
    // Renormalize weights (empty-component guard may have disturbed them).
    double wsum = 0.0;
    for (double w : model.weights) wsum += w;
    for (double& w : model.weights) w /= wsum;

    if (std::isfinite(prev_ll) &&
        ll - prev_ll < cfg.tol * std::abs(prev_ll)) {
      break;
    }
    prev_ll = ll;
  }
  model.validate();
  return model;
}

void save_gmm(Checkpoint& c, const GmmModel& model) {
  Tensor w({model.K});
  std::copy(model.weights.begin(), model.weights.end(), w.data.begin());
  c.put("gmm.weights", w);
  c.put("gmm.means", model.means);
  c.put("gmm.sigmas", model.sigmas);
}

GmmModel load_gmm(const Checkpoint& c) {
  GmmModel m;
  const Tensor w = c.get("gmm.weights");
  m.means = c.get("gmm.means");
  m.sigmas = c.get("gmm.sigmas");
  check(w.ndim() == 1 && m.means.ndim() == 2 &&
            m.sigmas.dims == m.means.dims && w.dims[0] == m.means.dims[0],
        "load_gmm: inconsistent gmm tensors");
  m.K = m.means.dims[0];
  m.D = m.means.dims[1];
  m.weights.assign(w.data.begin(), w.data.end());
  m.validate();
  return m;
}

}  // namespace deepfv
