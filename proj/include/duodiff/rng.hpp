#pragma once

#include <cstdint>
#include <random>

#include "duodiff/tensor.hpp"

namespace duodiff {

/// Seeded generator with platform-stable draws. std::mt19937_64 output is
/// fully specified; the distributions in <random> are not, so the float
/// conversions and the normal sampler live here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  int64_t below(int64_t n) { return static_cast<int64_t>(uniform() * static_cast<double>(n)); }
  double normal();

  Tensor normal_tensor(Shape shape);
  /// Normal(0, std) resampled until |x| <= 2 std.
  Tensor truncated_normal(Shape shape, float std);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Mixes a seed with a stream index into an independent seed.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

}  // namespace duodiff
