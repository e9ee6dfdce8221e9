#pragma once

#include <iosfwd>
#include <string>

#include "deepfv/config.hpp"

namespace deepfv {

// Shared command-line state; every output lands under out_dir.
struct CommandContext {
  RunConfig cfg;
  std::string out_dir = "out";
  std::string checkpoint_path;  // optional input checkpoint
  std::string regime = "full";  // train only
  std::ostream* log = nullptr;  // defaults to std::cout
};

// Subcommand bodies; each returns a process exit code.
int cmd_gen_data(const CommandContext& ctx);
int cmd_fit_gmm(const CommandContext& ctx);
int cmd_encode(const CommandContext& ctx);
int cmd_train(const CommandContext& ctx);
int cmd_eval(const CommandContext& ctx);
int cmd_gradcheck(const CommandContext& ctx);
int cmd_bench(const CommandContext& ctx);

}  // namespace deepfv
