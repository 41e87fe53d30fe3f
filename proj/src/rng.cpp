#include "duodiff/rng.hpp"

#include <cmath>
#include <numbers>

namespace duodiff {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Tensor Rng::normal_tensor(Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(normal());
  return t;
}

Tensor Rng::truncated_normal(Shape shape, float std) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    double x = normal();
    while (std::fabs(x) > 2.0) x = normal();
    v = static_cast<float>(x * std);
  }
  return t;
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 finalizer over the combined value
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace duodiff
