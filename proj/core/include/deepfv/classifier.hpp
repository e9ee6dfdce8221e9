#pragma once

#include <span>
#include <string>
#include <vector>

#include "deepfv/dataset.hpp"
#include "deepfv/pipeline.hpp"
#include "deepfv/tensor.hpp"
#include "deepfv/tensor_io.hpp"

namespace deepfv {

enum class EncoderKind { FisherLayer, StandardFv };

// Per image: one un-normalized encoding per scale (no flip), averaged over
// scales, then power-normalized, then L2-normalized. Returns N x 2KD.
Tensor extract_features(const Dataset& dataset, const Network& net,
                        const std::vector<int>& scales, EncoderKind kind);

// One-vs-all linear SVMs on the primal hinge objective
//   1/2 ||w||^2 + C sum_i max(0, 1 - t_i (w . x_i + b)).
struct SvmModel {
  Tensor weight;             // C x F
  std::vector<double> bias;  // C
  double c_svm = 1.0;
  // Classes whose training labels were all-positive or all-negative are
  // skipped; their AP is undefined.
  std::vector<bool> defined;
};

// Deterministic sub-gradient descent with a backtracking line search; the
// objective never increases across outer iterations. objective_trace, when
// given, receives the per-class objective sequences.
SvmModel train_svm_ova(const Tensor& features, const Tensor& labels,
                       double c_svm,
                       std::vector<std::vector<double>>* objective_trace =
                           nullptr);

std::vector<double> svm_scores(const SvmModel& model,
                               std::span<const double> feature);

// All-points average precision: sort by descending score (ties by ascending
// index); mean over positives of the precision at their ranks.
double average_precision(std::span<const double> scores,
                         std::span<const double> labels);

double mean_ap(std::span<const double> per_class_ap);

// Checkpoint names: "svm.weight", "svm.bias".
void save_svm(Checkpoint& c, const SvmModel& model);

}  // namespace deepfv
