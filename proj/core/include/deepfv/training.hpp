#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "deepfv/dataset.hpp"
#include "deepfv/pipeline.hpp"
#include "deepfv/tensor_io.hpp"

namespace deepfv {

// Which parameter groups the training loop updates:
//   finetune    - backbone + whole-image score head, no encoding layer
//   fv-fixed    - nothing (encode-only baseline)
//   fisher-only - encoding layer + score head, backbone frozen
//   full        - every group
enum class Regime { Finetune, FvFixed, FisherOnly, Full };

Regime parse_regime(const std::string& name);
std::string regime_name(Regime r);

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 2;
  double lr_backbone = 0.0001;
  double lr_fisher = 0.1;
  double lr_score = 0.001;
  int lr_step_size = 3000;
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::vector<int> train_scales = {48, 64, 80};
  bool hflip = true;
  std::uint64_t seed = 0;
  Regime regime = Regime::Full;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const;
};

// Multi-label sigmoid cross entropy, summed over classes, in the stable
// max(s,0) - s*y + log1p(exp(-|s|)) form. Returns (loss, d_scores) with
// d_scores = sigmoid(s) - y.
std::pair<double, std::vector<double>> sigmoid_ce_loss(
    std::span<const double> scores, std::span<const double> labels);

// v <- momentum * v - lr * (grad + weight_decay * param); param <- param + v.
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
              double momentum, double weight_decay);

// base * factor^floor(iter / step_size).
double lr_at(std::int64_t iter, double base, int step_size, double factor);

// Full training loop. The init checkpoint provides the backbone, the
// encoding layer (for fisher regimes), and optionally a score head and
// optimizer state; missing score heads are created from cfg.seed. Returns
// the final checkpoint including optimizer state. log_csv, when given,
// receives one "iter,loss,lr" line per iteration.
Checkpoint train(const Dataset& dataset, const TrainConfig& cfg,
                 const Checkpoint& init, const ModelConfig& model_cfg,
                 std::ostream* log_csv = nullptr,
                 std::vector<double>* loss_curve = nullptr,
                 const std::function<void(int, const Checkpoint&)>&
                     on_checkpoint = nullptr);

// Drops "momentum.*" entries; training stages that change the model (a new
// score head, a fresh encoding layer) start with fresh optimizer state.
void strip_optimizer_state(Checkpoint& c);

}  // namespace deepfv
