#include "deepfv/training.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace deepfv {

Regime parse_regime(const std::string& name) {
  if (name == "finetune") return Regime::Finetune;
  if (name == "fv-fixed") return Regime::FvFixed;
  if (name == "fisher-only") return Regime::FisherOnly;
  if (name == "full") return Regime::Full;
  fail("unknown regime: " + name +
       " (expected finetune|fv-fixed|fisher-only|full)");
}

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::Finetune: return "finetune";
    case Regime::FvFixed: return "fv-fixed";
    case Regime::FisherOnly: return "fisher-only";
    case Regime::Full: return "full";
  }
  return "?";
}

void TrainConfig::validate() const {
  check(iterations >= 0, "TrainConfig: negative iterations");
  check(batch_size >= 1, "TrainConfig: batch size must be >= 1");
  check(momentum >= 0.0 && momentum < 1.0, "TrainConfig: momentum in [0,1)");
  check(weight_decay >= 0.0, "TrainConfig: weight decay must be >= 0");
  check(lr_backbone >= 0.0 && lr_fisher >= 0.0 && lr_score >= 0.0,
        "TrainConfig: learning rates must be >= 0");
  check(lr_step_size >= 1, "TrainConfig: lr step size must be >= 1");
  check(!train_scales.empty(), "TrainConfig: need at least one train scale");
}

std::pair<double, std::vector<double>> sigmoid_ce_loss(
    std::span<const double> scores, std::span<const double> labels) {
  check(scores.size() == labels.size(), "sigmoid_ce_loss: size mismatch");
  double loss = 0.0;
  std::vector<double> d(scores.size());
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const double s = scores[c];
    const double y = labels[c];
    check(y == 0.0 || y == 1.0, "sigmoid_ce_loss: labels must be binary");
    check(std::isfinite(s), "sigmoid_ce_loss: non-finite score");
    loss += std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
    d[c] = 1.0 / (1.0 + std::exp(-s)) - y;
  }
  return {loss, std::move(d)};
}

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
              double momentum, double weight_decay) {
  check(param.same_shape(grad) && param.same_shape(velocity),
        "sgd_step: shape mismatch");
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double v = momentum * velocity.data[i] -
                     lr * (grad.data[i] + weight_decay * param.data[i]);
    velocity.data[i] = v;
    param.data[i] += v;
  }
}

double lr_at(std::int64_t iter, double base, int step_size, double factor) {
  check(iter >= 0, "lr_at: negative iteration");
  return base * std::pow(factor, static_cast<double>(iter / step_size));
}

namespace {

struct ParamRef {
  std::string name;
  Tensor* param;
  Tensor* grad;
};

// Trainable tensors of one group, in a fixed order.
std::vector<ParamRef> backbone_params(BackboneState& s) {
  std::vector<ParamRef> out;
  const auto add = [&](std::vector<Layer>& layers, const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.numel() == 0) continue;
      const std::string base = prefix + "." + std::to_string(i);
      out.push_back({base + ".weight", &layers[i].weight, &layers[i].dweight});
      out.push_back({base + ".bias", &layers[i].bias, &layers[i].dbias});
    }
  };
  add(s.trunk, "trunk");
  add(s.head, "head");
  return out;
}

}  // namespace

Checkpoint train(const Dataset& dataset, const TrainConfig& cfg,
                 const Checkpoint& init, const ModelConfig& model_cfg,
                 std::ostream* log_csv, std::vector<double>* loss_curve,
                 const std::function<void(int, const Checkpoint&)>&
                     on_checkpoint) {
  cfg.validate();
  check(!dataset.items.empty(), "train: empty dataset");
  const std::size_t classes = dataset.classes;
  check(classes >= 1, "train: dataset has no classes");

  if (cfg.regime == Regime::FvFixed) {
    // Encode-only baseline: nothing to optimize.
    return init;
  }

  Network net = Network::from_checkpoint(init, model_cfg);
  const bool fisher_path = cfg.regime != Regime::Finetune;
  if (fisher_path)
    check(net.fisher.has_value(),
          "train: checkpoint has no encoding layer (run fit-gmm first)");

  Rng rng(cfg.seed);

  // The score head consumes the encoded vector (fisher regimes) or the
  // whole-image descriptor (finetune); rebuild it if the shape disagrees.
  const std::size_t score_in =
      fisher_path ? net.cfg.fisher_dim()
                  : static_cast<std::size_t>(
                        net.cfg.backbone.descriptor_dim);
  if (!net.score || net.score->weight.dims[1] != score_in ||
      net.score->weight.dims[0] != classes) {
    net.score = make_score_head(classes, score_in, rng,
                                net.cfg.backbone.init_std);
  }

  // Fisher gradients live beside the params only during training.
  Tensor d_fisher_w, d_fisher_b;
  if (fisher_path) {
    d_fisher_w = Tensor(net.fisher->w.dims);
    d_fisher_b = Tensor(net.fisher->b.dims);
  }

  struct GroupedParam {
    ParamRef ref;
    double base_lr;
  };
  std::vector<GroupedParam> live;
  const bool backbone_live =
      (cfg.regime == Regime::Finetune || cfg.regime == Regime::Full) &&
      cfg.lr_backbone > 0.0;
  if (backbone_live)
    for (auto& p : backbone_params(net.backbone))
      live.push_back({p, cfg.lr_backbone});
  if (fisher_path && cfg.lr_fisher > 0.0) {
    live.push_back({{"fisher.w", &net.fisher->w, &d_fisher_w}, cfg.lr_fisher});
    live.push_back({{"fisher.b", &net.fisher->b, &d_fisher_b}, cfg.lr_fisher});
  }
  if (cfg.lr_score > 0.0) {
    live.push_back(
        {{"score.weight", &net.score->weight, &net.score->dweight},
         cfg.lr_score});
    live.push_back(
        {{"score.bias", &net.score->bias, &net.score->dbias}, cfg.lr_score});
  }

  // Momentum buffers: restored from the init checkpoint when present.
  // State whose shape no longer matches (a rebuilt score head) is stale
  // and restarts at zero.
  std::vector<Tensor> velocity(live.size());
  for (std::size_t i = 0; i < live.size(); ++i) {
    const std::string vname = "momentum." + live[i].ref.name;
    if (init.contains(vname) &&
        init.raw(vname).dims == live[i].ref.param->dims) {
      velocity[i] = init.get(vname);
    } else {
      velocity[i] = Tensor(live[i].ref.param->dims);
    }
  }

  const double main_lr =
      fisher_path ? cfg.lr_fisher : cfg.lr_backbone;
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  const bool need_backbone_grads = backbone_live;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    net.backbone.zero_grads();
    net.score->dweight.fill(0.0);
    net.score->dbias.fill(0.0);
    if (fisher_path) {
      d_fisher_w.fill(0.0);
      d_fisher_b.fill(0.0);
    }

    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Example& ex =
          dataset.items[rng.uniform_index(dataset.items.size())];
      const int scale = cfg.train_scales[rng.uniform_index(
          cfg.train_scales.size())];
      Tensor img = resize_longest_side(ex.image, scale);
      if (cfg.hflip && rng.uniform() < 0.5) img = hflip(img);

      EncodeCache cache;
      EncodeCache* cache_ptr = need_backbone_grads ? &cache : nullptr;
      if (fisher_path) {
        const Tensor descriptors =
            encode_descriptors(img, net.backbone, net.cfg.patch_scales,
                               net.cfg.patch_step, cache_ptr);
        auto [fv, fcache] = fisher_layer_forward(descriptors, *net.fisher);
        const auto scores = net.score->forward(fv.values);
        auto [loss, d_scores] = sigmoid_ce_loss(scores, ex.labels);
        batch_loss += loss;
        const auto d_fv = net.score->backward(fv.values, d_scores);
        FisherGrads fg = fisher_layer_backward(fcache, *net.fisher, d_fv);
        for (std::size_t i = 0; i < d_fisher_w.numel(); ++i) {
          d_fisher_w.data[i] += fg.dw.data[i];
          d_fisher_b.data[i] += fg.db.data[i];
        }
        if (need_backbone_grads)
          encode_backward(cache, fg.dx, net.backbone);
      } else {
        const Tensor descriptors =
            encode_whole_image(img, net.backbone, cache_ptr);
        const auto scores = net.score->forward(descriptors.row(0));
        auto [loss, d_scores] = sigmoid_ce_loss(scores, ex.labels);
        batch_loss += loss;
        const auto d_desc =
            net.score->backward(descriptors.row(0), d_scores);
        if (need_backbone_grads) {
          Tensor d_descriptors({1, descriptors.dims[1]});
          std::copy(d_desc.begin(), d_desc.end(),
                    d_descriptors.data.begin());
          encode_backward(cache, d_descriptors, net.backbone);
        }
      }
    }
    batch_loss *= inv_batch;
    if (!std::isfinite(batch_loss)) {
      std::ostringstream msg;
      msg << "train: non-finite loss at iteration " << iter
          << " (regime " << regime_name(cfg.regime) << ")";
      fail(msg.str());
    }

    const double decay =
        lr_at(iter, 1.0, cfg.lr_step_size, cfg.lr_decay);
    for (std::size_t i = 0; i < live.size(); ++i) {
      // Batch gradients are averaged.
      Tensor& g = *live[i].ref.grad;
      for (double& v : g.data) v *= inv_batch;
      sgd_step(*live[i].ref.param, g, velocity[i],
               live[i].base_lr * decay, cfg.momentum, cfg.weight_decay);
    }

    if (loss_curve) loss_curve->push_back(batch_loss);
    if (log_csv)
      (*log_csv) << iter << "," << batch_loss << "," << main_lr * decay
                 << "\n";
    if (on_checkpoint && cfg.checkpoint_every > 0 &&
        (iter + 1) % cfg.checkpoint_every == 0 &&
        iter + 1 < cfg.iterations) {
      Checkpoint snap = net.to_checkpoint();
      for (std::size_t i = 0; i < live.size(); ++i)
        snap.put("momentum." + live[i].ref.name, velocity[i]);
      on_checkpoint(iter + 1, snap);
    }
  }

  Checkpoint out = net.to_checkpoint();
  for (std::size_t i = 0; i < live.size(); ++i)
    out.put("momentum." + live[i].ref.name, velocity[i]);
  return out;
}

void strip_optimizer_state(Checkpoint& c) {
  std::vector<std::string> names;
  for (const auto& [name, t] : c.entries())
    if (name.rfind("momentum.", 0) == 0) names.push_back(name);
  for (const std::string& name : names) c.erase(name);
}

}  // namespace deepfv
