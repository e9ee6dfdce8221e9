#include "deepfv/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace deepfv {

Tensor extract_features(const Dataset& dataset, const Network& net,
                        const std::vector<int>& scales, EncoderKind kind) {
  check(!dataset.items.empty(), "extract_features: empty dataset");
  check(!scales.empty(), "extract_features: need at least one scale");
  if (kind == EncoderKind::FisherLayer)
    check(net.fisher.has_value(),
          "extract_features: network has no encoding layer");
  else
    check(net.gmm.has_value(), "extract_features: network has no codebook");

  const std::size_t dim = net.cfg.fisher_dim();
  Tensor out({dataset.items.size(), dim});
  std::vector<double> mean(dim);
  for (std::size_t n = 0; n < dataset.items.size(); ++n) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (int s : scales) {
      const Tensor img = resize_longest_side(dataset.items[n].image, s);
      const Tensor descriptors = encode_descriptors(
          img, net.backbone, net.cfg.patch_scales, net.cfg.patch_step,
          nullptr);
      FisherVector fv;
      if (kind == EncoderKind::FisherLayer)
        fv = fisher_layer_forward(descriptors, *net.fisher).first;
      else
        fv = encode_standard_fv(descriptors, *net.gmm);
      check(fv.values.size() == dim, "extract_features: encoding mismatch");
      for (std::size_t i = 0; i < dim; ++i) mean[i] += fv.values[i];
    }
    const double inv = 1.0 / static_cast<double>(scales.size());
    for (double& v : mean) v *= inv;
    const auto normalized = l2_normalize(power_normalize(mean));
    std::copy(normalized.begin(), normalized.end(), out.row(n).data());
  }
  return out;
}

namespace {

double svm_objective(const Tensor& x, std::span<const double> t,
                     std::span<const double> w, double b, double c_svm) {
  const std::size_t n = x.dims[0];
  const std::size_t f = x.dims[1];
  double obj = 0.0;
  for (std::size_t i = 0; i < f; ++i) obj += 0.5 * w[i] * w[i];
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = x.row(i);
    double s = b;
    for (std::size_t j = 0; j < f; ++j) s += w[j] * row[j];
    obj += c_svm * std::max(0.0, 1.0 - t[i] * s);
  }
  return obj;
}

// Minimizes the hinge objective for one class. Only steps that strictly
// improve the objective are accepted, so the trace is non-increasing.
void train_one_svm(const Tensor& x, std::span<const double> t, double c_svm,
                   std::span<double> w, double& b,
                   std::vector<double>* trace) {
  const std::size_t n = x.dims[0];
  const std::size_t f = x.dims[1];
  std::fill(w.begin(), w.end(), 0.0);
  b = 0.0;

  std::vector<double> gw(f);
  double obj = svm_objective(x, t, w, b, c_svm);
  if (trace) trace->push_back(obj);
  double step = 1.0 / (1.0 + c_svm * static_cast<double>(n));
  std::vector<double> wtry(f);

  const int max_outer = 2000;
  for (int outer = 0; outer < max_outer; ++outer) {
    std::copy(w.begin(), w.end(), gw.begin());
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = x.row(i);
      double s = b;
      for (std::size_t j = 0; j < f; ++j) s += w[j] * row[j];
      if (t[i] * s < 1.0) {
        for (std::size_t j = 0; j < f; ++j) gw[j] -= c_svm * t[i] * row[j];
        gb -= c_svm * t[i];
      }
    }

    // Backtracking line search along the negative sub-gradient.
    double next_obj = 0.0;
    bool improved = false;
    step *= 2.0;
    while (step > 1e-14) {
      for (std::size_t j = 0; j < f; ++j) wtry[j] = w[j] - step * gw[j];
      next_obj = svm_objective(x, t, wtry, b - step * gb, c_svm);
      if (next_obj < obj) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
    std::copy(wtry.begin(), wtry.end(), w.begin());
    b -= step * gb;
    const double rel = (obj - next_obj) / std::max(std::abs(obj), 1e-12);
    obj = next_obj;
    if (trace) trace->push_back(obj);
    if (rel < 1e-4) break;
  }
}

}  // namespace

SvmModel train_svm_ova(const Tensor& features, const Tensor& labels,
                       double c_svm,
                       std::vector<std::vector<double>>* objective_trace) {
  check(features.ndim() == 2 && labels.ndim() == 2,
        "train_svm_ova: features and labels must be matrices");
  const std::size_t n = features.dims[0];
  const std::size_t f = features.dims[1];
  const std::size_t classes = labels.dims[1];
  check(labels.dims[0] == n, "train_svm_ova: row count mismatch");
  check(n >= 2, "train_svm_ova: need at least two examples");
  check(c_svm > 0.0, "train_svm_ova: C must be positive");

  SvmModel model;
  model.weight = Tensor({classes, f});
  model.bias.assign(classes, 0.0);
  model.c_svm = c_svm;
  model.defined.assign(classes, false);
  if (objective_trace) objective_trace->assign(classes, {});

  std::vector<double> t(n);
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = labels.at(i, c) > 0.5 ? 1.0 : -1.0;
      if (t[i] > 0.0) ++positives;
    }
    if (positives == 0 || positives == n) continue;  // AP undefined
    model.defined[c] = true;
    train_one_svm(features, t, c_svm, model.weight.row(c), model.bias[c],
                  objective_trace ? &(*objective_trace)[c] : nullptr);
  }
  return model;
}

std::vector<double> svm_scores(const SvmModel& model,
                               std::span<const double> feature) {
  const std::size_t classes = model.weight.dims[0];
  const std::size_t f = model.weight.dims[1];
  check(feature.size() == f, "svm_scores: feature dimension mismatch");
  std::vector<double> out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    const auto w = model.weight.row(c);
    double s = model.bias[c];
    for (std::size_t j = 0; j < f; ++j) s += w[j] * feature[j];
    out[c] = s;
  }
  return out;
}

double average_precision(std::span<const double> scores,
                         std::span<const double> labels) {
  check(scores.size() == labels.size(), "average_precision: size mismatch");
  check(!scores.empty(), "average_precision: empty input");
  std::size_t positives = 0;
  for (double l : labels) {
    check(l == 0.0 || l == 1.0, "average_precision: labels must be binary");
    if (l == 1.0) ++positives;
  }
  check(positives > 0, "average_precision: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] == 1.0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(positives);
}

double mean_ap(std::span<const double> per_class_ap) {
  check(!per_class_ap.empty(), "mean_ap: empty list");
  double s = 0.0;
  for (double ap : per_class_ap) s += ap;
  return s / static_cast<double>(per_class_ap.size());
}

void save_svm(Checkpoint& c, const SvmModel& model) {
  c.put("svm.weight", model.weight);
  Tensor b({model.bias.size()});
  std::copy(model.bias.begin(), model.bias.end(), b.data.begin());
  c.put("svm.bias", b);
}

}  // namespace deepfv
