#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "duodiff/data.hpp"
#include "duodiff/optim.hpp"

namespace duodiff {

struct TrainOptions {
  int64_t steps = 5000;
  int64_t batch = 64;
  AdamWOptions adam{};
  uint64_t seed = 0;
  int64_t log_every = 10;
  int64_t checkpoint_every = 0;  // 0 = never
};

struct LossPoint {
  int64_t step;
  float loss;
};

/// Called with the completed step count after every checkpoint_every steps.
using CheckpointFn = std::function<void(int64_t step)>;

/// A training batch: images, labels, timesteps and noise for step `step`.
struct TrainBatch {
  Tensor x0;
  std::vector<int64_t> labels;
  std::vector<int> t;
  Tensor eps;
};
TrainBatch draw_batch(const ImageSet& data, int T, int64_t batch, uint64_t seed, int64_t step, bool use_labels);

}  // namespace duodiff
