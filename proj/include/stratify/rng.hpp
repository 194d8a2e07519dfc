#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace stratify {

// Mixes a parent seed with a stream index (splitmix64 finalizer). Every
// random stream in the pipeline is derived from the user seed this way, so
// sub-components and replicates can be re-run in isolation.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream);

// Thin wrapper over a 64-bit Mersenne twister with the handful of draws the
// samplers need. Copyable; copies continue the same stream independently.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  // Gamma with the given shape and rate (mean shape / rate).
  double gamma(double shape, double rate);
  double beta(double a, double b);
  double chi_squared(double dof);
  bool bernoulli(double p) { return uniform() < p; }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  std::mt19937_64& engine() { return engine_; }
  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace stratify
