#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace deepfv {

// All recoverable errors surface as deepfv::Error; the CLI maps them to a
// nonzero exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] void fail(const std::string& msg);

inline void check(bool cond, const char* msg) {
  if (!cond) fail(msg);
}
inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// Deterministic RNG with a fully specified bit stream (xoshiro256++ seeded
// via splitmix64). std:: distributions are implementation-defined, so all
// sampling goes through this class to keep runs reproducible across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
  // Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev);

 private:
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// log(sum_i exp(v[i])) with max shift; -inf for an empty span.
double log_sum_exp(std::span<const double> v);

// Relative error for gradient checks: |a - b| / max(|a|, |b|, floor).
double fd_relative_error(double analytic, double numeric, double floor = 1e-3);

}  // namespace deepfv
