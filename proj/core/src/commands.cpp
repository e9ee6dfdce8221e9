#include "deepfv/commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "deepfv/classifier.hpp"
#include "deepfv/gradcheck.hpp"

namespace deepfv {

namespace fs = std::filesystem;

namespace {

std::ostream& log_of(const CommandContext& ctx) {
  return ctx.log ? *ctx.log : std::cout;
}

void echo_config(const CommandContext& ctx, std::ostream& os) {
  if (!ctx.cfg.source_lines.empty()) {
    os << "# config file\n";
    for (const auto& line : ctx.cfg.source_lines) os << line << "\n";
  }
  os << "# resolved config\n";
  print_config(ctx.cfg, os);
}

Checkpoint load_or_init_checkpoint(const CommandContext& ctx) {
  if (!ctx.checkpoint_path.empty())
    return read_checkpoint_file(ctx.checkpoint_path);
  return make_network(ctx.cfg.model, ctx.cfg.seed).to_checkpoint();
}

Tensor labels_matrix(const Dataset& ds) {
  Tensor labels({ds.items.size(), ds.classes});
  for (std::size_t i = 0; i < ds.items.size(); ++i)
    std::copy(ds.items[i].labels.begin(), ds.items[i].labels.end(),
              labels.row(i).data());
  return labels;
}

void write_features(const std::string& path, const Tensor& features,
                    const Tensor& labels) {
  Checkpoint c;
  c.put("features", features);
  c.put("labels", labels);
  write_checkpoint_file(path, c);
}

// Per-class AP table + mAP on held-out features.
std::pair<std::vector<double>, double> evaluate_features(
    const Tensor& train_x, const Tensor& train_y, const Tensor& test_x,
    const Tensor& test_y, double c_svm, std::ostream& log) {
  const SvmModel svm = train_svm_ova(train_x, train_y, c_svm);
  const std::size_t classes = train_y.dims[1];
  const std::size_t n = test_x.dims[0];
  Tensor scores({n, classes});
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = svm_scores(svm, test_x.row(i));
    std::copy(s.begin(), s.end(), scores.row(i).data());
  }
  std::vector<double> aps;
  std::vector<double> column(n), labels(n);
  for (std::size_t c = 0; c < classes; ++c) {
    if (!svm.defined[c]) {
      log << "class " << c << ": skipped (single-label class)\n";
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = scores.at(i, c);
      labels[i] = test_y.at(i, c);
    }
    aps.push_back(average_precision(column, labels));
  }
  return {aps, mean_ap(aps)};
}

}  // namespace

int cmd_gen_data(const CommandContext& ctx) {
  std::ostream& log = log_of(ctx);
  echo_config(ctx, log);
  const auto [train, test] = gen_dataset(ctx.cfg.data);
  save_dataset((fs::path(ctx.out_dir) / "train").string(), train,
               ctx.cfg.data);
  save_dataset((fs::path(ctx.out_dir) / "test").string(), test, ctx.cfg.data);
  log << "wrote " << train.items.size() << " train / " << test.items.size()
      << " test images under " << ctx.out_dir << "\n";
  return 0;
}

int cmd_fit_gmm(const CommandContext& ctx) {
  std::ostream& log = log_of(ctx);
  echo_config(ctx, log);
  const Dataset train =
      load_dataset((fs::path(ctx.cfg.data_dir) / "train").string());
  Checkpoint ckpt = load_or_init_checkpoint(ctx);
  Network net = Network::from_checkpoint(ckpt, ctx.cfg.model);

  // Patch descriptors at the native scale, no flip.
  std::vector<double> pool;
  std::size_t dim = static_cast<std::size_t>(
      ctx.cfg.model.backbone.descriptor_dim);
  for (const Example& ex : train.items) {
    const Tensor d = encode_descriptors(ex.image, net.backbone,
                                        ctx.cfg.model.patch_scales,
                                        ctx.cfg.model.patch_step, nullptr);
    pool.insert(pool.end(), d.data.begin(), d.data.end());
  }
  Tensor descriptors({pool.size() / dim, dim});
  descriptors.data = std::move(pool);
  log << "collected " << descriptors.dims[0] << " descriptors\n";

  std::vector<double> ll;
  const GmmModel gmm =
      fit_em(descriptors, ctx.cfg.model.gmm_components, ctx.cfg.gmm, &ll);
  log << "EM iterations: " << ll.size();
  if (!ll.empty())
    log << " (log-likelihood " << ll.front() << " -> " << ll.back() << ")";
  log << "\n";

  save_gmm(ckpt, gmm);
  save_fisher(ckpt, init_params_from_gmm(gmm));
  strip_optimizer_state(ckpt);
  fs::create_directories(ctx.out_dir);
  const std::string path = (fs::path(ctx.out_dir) / "codebook.fnc").string();
  write_checkpoint_file(path, ckpt);
  log << "wrote " << path << "\n";
  return 0;
}

int cmd_encode(const CommandContext& ctx) {
  std::ostream& log = log_of(ctx);
  echo_config(ctx, log);
  check(!ctx.checkpoint_path.empty(),
        "encode: --checkpoint with a codebook is required");
  const Checkpoint ckpt = read_checkpoint_file(ctx.checkpoint_path);
  const Network net = Network::from_checkpoint(ckpt, ctx.cfg.model);
  fs::create_directories(ctx.out_dir);
  for (const char* split : {"train", "test"}) {
    const Dataset ds =
        load_dataset((fs::path(ctx.cfg.data_dir) / split).string());
    const Tensor features =
        extract_features(ds, net, ctx.cfg.eval_scales, EncoderKind::StandardFv);
    const std::string path =
        (fs::path(ctx.out_dir) / (std::string("features_") + split + ".fnc"))
            .string();
    write_features(path, features, labels_matrix(ds));
    log << "wrote " << path << " (" << features.dims[0] << " x "
        << features.dims[1] << ")\n";
  }
  return 0;
}

int cmd_train(const CommandContext& ctx) {
  std::ostream& log = log_of(ctx);
  echo_config(ctx, log);
  const Dataset train_set =
      load_dataset((fs::path(ctx.cfg.data_dir) / "train").string());
  TrainConfig tcfg = ctx.cfg.train;
  tcfg.regime = parse_regime(ctx.regime);
  const Checkpoint init = load_or_init_checkpoint(ctx);

  fs::create_directories(ctx.out_dir);
  std::ofstream loss_csv(fs::path(ctx.out_dir) / "loss.csv");
  loss_csv << "iter,loss,lr\n";
  const auto on_checkpoint = [&](int iter, const Checkpoint& c) {
    const std::string path =
        (fs::path(ctx.out_dir) /
         ("checkpoint_" + std::to_string(iter) + ".fnc"))
            .string();
    write_checkpoint_file(path, c);
  };
  const Checkpoint final_ckpt = train(train_set, tcfg, init, ctx.cfg.model,
                                      &loss_csv, nullptr, on_checkpoint);
  const std::string path = (fs::path(ctx.out_dir) / "checkpoint.fnc").string();
  write_checkpoint_file(path, final_ckpt);
  log << "regime " << ctx.regime << ": trained " << tcfg.iterations
      << " iterations, wrote " << path << "\n";
  return 0;
}

int cmd_eval(const CommandContext& ctx) {
  std::ostream& log = log_of(ctx);
  echo_config(ctx, log);
  Tensor train_x, train_y, test_x, test_y;
  if (!ctx.cfg.features_dir.empty()) {
    const Checkpoint tr = read_checkpoint_file(
        (fs::path(ctx.cfg.features_dir) / "features_train.fnc").string());
    const Checkpoint te = read_checkpoint_file(
        (fs::path(ctx.cfg.features_dir) / "features_test.fnc").string());
    train_x = tr.get("features");
    train_y = tr.get("labels");
    test_x = te.get("features");
    test_y = te.get("labels");
  } else {
    check(!ctx.checkpoint_path.empty(),
          "eval: --checkpoint or eval.features is required");
    const Checkpoint ckpt = read_checkpoint_file(ctx.checkpoint_path);
    const Network net = Network::from_checkpoint(ckpt, ctx.cfg.model);
    const Dataset train_ds =
        load_dataset((fs::path(ctx.cfg.data_dir) / "train").string());
    const Dataset test_ds =
        load_dataset((fs::path(ctx.cfg.data_dir) / "test").string());
    train_x = extract_features(train_ds, net, ctx.cfg.eval_scales,
                               EncoderKind::FisherLayer);
    test_x = extract_features(test_ds, net, ctx.cfg.eval_scales,
                              EncoderKind::FisherLayer);
    train_y = labels_matrix(train_ds);
    test_y = labels_matrix(test_ds);
  }

  const auto [aps, map] =
      evaluate_features(train_x, train_y, test_x, test_y, ctx.cfg.svm_c, log);
  fs::create_directories(ctx.out_dir);
  std::ofstream csv(fs::path(ctx.out_dir) / "ap.csv");
  csv << "class,ap\n";
  for (std::size_t c = 0; c < aps.size(); ++c) {
    csv << c << "," << std::setprecision(6) << aps[c] << "\n";
    log << "class " << c << ": AP " << aps[c] << "\n";
  }
  csv << "mAP," << std::setprecision(6) << map << "\n";
  log << "mAP " << map << "\n";
  return 0;
}

int cmd_gradcheck(const CommandContext& ctx) {
  std::ostream& log = log_of(ctx);
  echo_config(ctx, log);
  const auto results = run_gradcheck_suite(ctx.cfg.seed);
  fs::create_directories(ctx.out_dir);
  std::ofstream report(fs::path(ctx.out_dir) / "gradcheck.txt");
  bool all_pass = true;
  for (const auto& r : results) {
    const char* verdict = r.pass() ? "PASS" : "FAIL";
    report << verdict << " " << r.name << ": max rel err " << r.max_rel_err
           << " (tolerance " << r.tolerance << ", " << r.checked
           << " scalars)\n";
    log << verdict << " " << r.name << ": max rel err " << r.max_rel_err
        << " (tolerance " << r.tolerance << ")\n";
    all_pass = all_pass && r.pass();
  }
  return all_pass ? 0 : 1;
}

int cmd_bench(const CommandContext& ctx) {
  std::ostream& log = log_of(ctx);
  echo_config(ctx, log);
  SyntheticSpec spec = ctx.cfg.data;
  spec.train_count = 8;
  spec.test_count = 8;
  const auto [train, test] = gen_dataset(spec);
  const Tensor& image = train.items[0].image;
  Network net = make_network(ctx.cfg.model, ctx.cfg.seed);

  const auto rects =
      dense_patches(static_cast<int>(image.dims[2]),
                    static_cast<int>(image.dims[1]),
                    ctx.cfg.model.patch_scales, ctx.cfg.model.patch_step);
  using clock = std::chrono::steady_clock;

  const auto t0 = clock::now();
  const Tensor shared =
      encode_descriptors(image, net.backbone, ctx.cfg.model.patch_scales,
                         ctx.cfg.model.patch_step, nullptr);
  const auto t1 = clock::now();
  const Tensor unshared = encode_descriptors_unshared(
      image, net.backbone, ctx.cfg.model.patch_scales,
      ctx.cfg.model.patch_step);
  const auto t2 = clock::now();

  const double shared_ms =
      std::chrono::duration<double, std::milli>(t1 - t0).count();
  const double unshared_ms =
      std::chrono::duration<double, std::milli>(t2 - t1).count();
  fs::create_directories(ctx.out_dir);
  std::ofstream report(fs::path(ctx.out_dir) / "bench.txt");
  const double speedup = unshared_ms / shared_ms;
  for (std::ostream* os : {&log, static_cast<std::ostream*>(&report)}) {
    (*os) << "patches per image: " << rects.size() << "\n"
          << "shared-trunk encode: " << shared_ms << " ms\n"
          << "per-patch trunk encode: " << unshared_ms << " ms\n"
          << "speedup: " << speedup << "x\n";
  }
  (void)shared;
  (void)unshared;
  return 0;
}

}  // namespace deepfv
