#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "duodiff/data.hpp"
#include "duodiff/diffusion.hpp"
#include "duodiff/optim.hpp"
#include "duodiff/training.hpp"
#include "duodiff/uvit.hpp"

namespace duodiff {

enum class Backbone { Shallow, Full };

/// Shallow for the first t_s reverse steps (t >= T - t_s), full afterwards.
Backbone select_backbone(int t, int T, int t_s);

struct SampleTiming {
  double shallow_seconds = 0;
  double full_seconds = 0;
  double total_seconds = 0;
  int64_t n_samples = 0;
};

struct SampleResult {
  Tensor images;                  // [n, C, S, S]
  SampleTiming timing;
  std::vector<int> timesteps;     // model timesteps in visiting order
  std::vector<Backbone> backbone; // backbone used at each visited step
};

/// Static dual-backbone sampler. The shallow backbone may be absent when
/// spec.t_s = 0.
class DuoDiffSampler {
 public:
  DuoDiffSampler(const UVitModel* shallow, const UVitModel& full, NoiseSchedule sched, SamplerSpec spec);

  /// Draws n samples in chunks of `batch` rows. Chunk c starts from its own
  /// seeded stream, so results depend only on (seed, n, batch, models).
  SampleResult sample(int64_t n, std::span<const int64_t> labels = {}, int64_t batch = 128) const;

  const SamplerSpec& spec() const { return spec_; }
  const NoiseSchedule& schedule() const { return sched_; }

 private:
  const UVitModel* shallow_;
  const UVitModel* full_;
  NoiseSchedule sched_;
  SamplerSpec spec_;
};

/// Minimizes the simple noise-regression loss with t ~ U{0..T-1} and
/// eps ~ N(0, I) per row. Continues from optimizer.step_count(), and the
/// batch drawn at step k depends only on (seed, k), so resumed runs follow
/// the same data order. Throws NumericError on a non-finite loss.
std::vector<LossPoint> train_backbone(UVitModel& model, AdamW& optimizer, const ImageSet& data,
                                      const NoiseSchedule& sched, const TrainOptions& options,
                                      const CheckpointFn& on_checkpoint = {});

}  // namespace duodiff
