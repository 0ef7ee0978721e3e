#pragma once

#include <cstdint>
#include <random>

#include "hetpure/tensor.hpp"

namespace hetpure {

/// Mixes two 64-bit values into a stream seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Deterministic random stream. Gaussian draws use Box-Muller so the exact
/// sequence is under our control rather than the standard library's.
///
/// fork(tag) derives an independent child stream from the *construction*
/// seed, not from the current generator state, so identical forks can be
/// re-created anywhere (tests rely on this to replay purification streams).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  Rng fork(std::uint64_t tag) const { return Rng(mix_seed(seed_, tag)); }

  /// Uniform in [0,1).
  double uniform();
  /// Uniform in [lo,hi).
  double uniform(double lo, double hi);
  /// Standard normal.
  double normal();
  /// Uniform integer in [0,n).
  std::uint64_t next_below(std::uint64_t n);

  void fill_normal(Tensor& t);
  Tensor normal_like(const Tensor& t);

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hetpure
