#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "deepfv/commands.hpp"

namespace {

struct GlobalArgs {
  std::string config;
  std::string out = "out";
  std::string checkpoint;
  std::string regime = "full";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, GlobalArgs& args, bool with_regime) {
  cmd->add_option("--config", args.config, "key=value config file");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--checkpoint", args.checkpoint, "input checkpoint file");
  cmd->add_option("--seed", args.seed, "RNG seed (overrides the config)")
      ->each([&args](const std::string&) { args.seed_set = true; });
  if (with_regime)
    cmd->add_option("--regime", args.regime,
                    "finetune | fv-fixed | fisher-only | full");
}

deepfv::CommandContext make_context(const GlobalArgs& args) {
  deepfv::CommandContext ctx;
  if (!args.config.empty())
    ctx.cfg = deepfv::parse_config_file(args.config);
  if (args.seed_set) {
    ctx.cfg.seed = args.seed;
    ctx.cfg.data.seed = args.seed;
    ctx.cfg.train.seed = args.seed;
    ctx.cfg.gmm.seed = args.seed;
  }
  ctx.out_dir = args.out;
  ctx.checkpoint_path = args.checkpoint;
  ctx.regime = args.regime;
  ctx.log = &std::cout;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trainable Fisher-vector encoding pipeline"};
  app.require_subcommand(1);
  GlobalArgs args;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(gen, args, false);
  auto* fit = app.add_subcommand("fit-gmm", "fit the GMM codebook");
  add_common(fit, args, false);
  auto* enc = app.add_subcommand(
      "encode", "write fixed Fisher-vector features (baseline)");
  add_common(enc, args, false);
  auto* tr = app.add_subcommand("train", "run the training loop");
  add_common(tr, args, true);
  auto* ev = app.add_subcommand("eval", "extract features, train SVM, report AP");
  add_common(ev, args, false);
  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference gradient verification");
  add_common(gc, args, false);
  auto* be = app.add_subcommand("bench", "shared vs per-patch encode timing");
  add_common(be, args, false);

  CLI11_PARSE(app, argc, argv);

  try {
    const deepfv::CommandContext ctx = make_context(args);
    if (gen->parsed()) return deepfv::cmd_gen_data(ctx);
    if (fit->parsed()) return deepfv::cmd_fit_gmm(ctx);
    if (enc->parsed()) return deepfv::cmd_encode(ctx);
    if (tr->parsed()) return deepfv::cmd_train(ctx);
    if (ev->parsed()) return deepfv::cmd_eval(ctx);
    if (gc->parsed()) return deepfv::cmd_gradcheck(ctx);
    if (be->parsed()) return deepfv::cmd_bench(ctx);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
