#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace deepfv {

// One finite-difference comparison: max relative error over every checked
// scalar against the analytic gradient, central differences, eps = 1e-5.
struct CheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;

  bool pass() const { return max_rel_err <= tolerance; }
};

// Encoding-layer gradients (x, w, b) on random instances with
// m in [1,8], K in [1,5], D in [2,8].
CheckResult gradcheck_fisher(std::uint64_t seed, int instances);
// Trunk parameters and input on a two-conv toy network.
CheckResult gradcheck_trunk(std::uint64_t seed);
// Descriptor-head parameters and input.
CheckResult gradcheck_head(std::uint64_t seed);
// SPP input gradients at non-tied points.
CheckResult gradcheck_spp(std::uint64_t seed);
// Multi-label loss gradient.
CheckResult gradcheck_loss(std::uint64_t seed);
// Every trainable scalar of the tiny full pipeline (8x8 image, 2 patches,
// K=2, D=3, C=2); pooling ties excluded by input perturbation.
CheckResult gradcheck_end_to_end(std::uint64_t seed);

std::vector<CheckResult> run_gradcheck_suite(std::uint64_t seed);

}  // namespace deepfv
