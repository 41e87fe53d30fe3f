#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "duodiff/adadiff.hpp"
#include "duodiff/data.hpp"
#include "duodiff/diffusion.hpp"
#include "duodiff/version.hpp"

namespace duodiff {

/// Fixed random projection of flattened images to `features` values,
/// squashed by tanh. Deterministic in (input_dim, seed, features).
class FeatureExtractor {
 public:
  FeatureExtractor(int64_t input_dim, uint64_t seed, int features = 64);
  /// [n, ...] with input_dim values per row -> [n, features]
  Tensor operator()(const Tensor& images) const;
  int64_t input_dim() const { return in_; }
  int features() const { return out_; }

 private:
  int64_t in_;
  int out_;
  Tensor proj_;  // [input_dim, features]
};

/// Frechet distance between Gaussians fitted to two [n, d] feature sets.
/// Needs n >= d + 1 rows per set; throws NumericError for non-finite
/// covariances.
double frechet_distance(const Tensor& feats_a, const Tensor& feats_b);

/// frechet_distance over extracted features of two image sets in [-1, 1].
double fid_proxy(const Tensor& samples, const Tensor& reference, const FeatureExtractor& extractor);

/// Batched noise prediction with one timestep and optional label per row.
using BatchEpsFn =
    std::function<Tensor(const Tensor& xt, std::span<const int> t, std::span<const int64_t> labels)>;

BatchEpsFn eps_fn_of(const UVitModel& model);

struct BucketStat {
  int t_lo;  // inclusive
  int t_hi;  // exclusive
  double mean_sq_error;
};

/// Splits [0, T) into `buckets` equal ranges and reports, per range, the
/// mean of ||f(x_t, t) - eps||^2 over n draws of (x0, t, eps) with t
/// uniform in the range. Deterministic in seed.
std::vector<BucketStat> per_step_mse_profile(const BatchEpsFn& f, const ImageSet& data, const NoiseSchedule& sched,
                                             int64_t n, int buckets = 20, uint64_t seed = 0, int64_t batch = 128);

struct AdaDiffSampleResult {
  Tensor images;
  double seconds = 0;
  ExitTrace trace;
};

/// Reverse chains with early-exit noise prediction. `simulate` selects
/// simulate_batch_early_exit (all layers run) over the shrinking batch.
/// Records one ExitRecord per sample and step when `record` is set.
AdaDiffSampleResult sample_adadiff(const AdaDiffModel& model, const NoiseSchedule& sched, const SamplerSpec& spec,
                                   int64_t n, double theta, std::span<const int64_t> labels = {},
                                   int64_t batch = 128, bool simulate = false, bool record = true);

struct TrendProfile {
  double theta = 0;
  int64_t n_samples = 0;
  int num_layers = 0;
  std::vector<int> t;  // visited timesteps, in visiting order
  std::vector<double> mean_exit;
  std::vector<double> std_exit;
};

/// Per-timestep mean and std of exit layers from n (>= 64) sampling chains.
TrendProfile exit_trend_profile(const AdaDiffModel& model, double theta, int64_t n, const NoiseSchedule& sched,
                                const SamplerSpec& spec = {}, int64_t batch = 128);
TrendProfile trend_from_trace(const ExitTrace& trace, double theta, int num_layers);

struct LatencyStats {
  double median = 0;  // seconds per sample
  double q1 = 0;
  double q3 = 0;
  double iqr() const { return q3 - q1; }
  std::vector<double> runs;  // seconds per sample, one per timed run
};

/// Times sampler_fn(n, batch) `runs` times after `warmup_runs` (>= 1)
/// discarded calls, sequentially on the calling thread.
LatencyStats latency_bench(const std::function<void(int64_t n, int64_t batch)>& sampler_fn, int64_t n,
                           int64_t batch, int warmup_runs = 1, int runs = 5);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Self-contained SVG line chart. With `steps` each series is drawn as a
/// staircase. The stamp is embedded as metadata.
std::string render_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                       std::span<const PlotSeries> series, const ArtifactStamp& stamp, bool steps = false);

/// Columns sample_id, t, exit_layer, u_exit.
std::string exit_trace_csv(const ExitTrace& trace, const ArtifactStamp& stamp);
std::string trend_csv(const TrendProfile& p, const ArtifactStamp& stamp);
std::string profile_csv(std::span<const BucketStat> p, const ArtifactStamp& stamp);
std::string bench_csv(std::span<const std::string> run_ids, std::span<const double> seconds_per_sample,
                      const ArtifactStamp& stamp);

}  // namespace duodiff
