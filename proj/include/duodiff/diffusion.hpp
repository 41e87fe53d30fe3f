#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "duodiff/rng.hpp"
#include "duodiff/tensor.hpp"

namespace duodiff {

/// Per-step beta, alpha and cumulative alpha-bar tables, indexed t = 0..T-1.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  int steps() const { return static_cast<int>(beta.size()); }
  /// alpha_bar at t, with alpha_bar(-1) = 1.
  double alpha_bar_at(int t) const { return t < 0 ? 1.0 : alpha_bar.at(static_cast<size_t>(t)); }
};

/// Linear beta schedule from beta_start to beta_end over T steps.
NoiseSchedule make_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);

enum class SamplerKind { DDPM, DDIM };

std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& s);

struct SamplerSpec {
  SamplerKind kind = SamplerKind::DDPM;
  double eta = 0.0;
  int n_steps = 50;   // DDIM subsequence length
  int t_s = 0;        // shallow-phase length, in original timestep units
  uint64_t seed = 0;
  bool clip_x0 = false;  // clamp the implied x_0 prediction to [-1, 1] before each step

  /// Throws std::invalid_argument if the spec is inconsistent with T.
  void validate(int T) const;
};

/// Model timesteps visited by a sampler, in visiting order (decreasing).
/// DDPM: T-1..0. DDIM: n_steps values uniformly spaced over [0, T-1].
std::vector<int> sampling_timesteps(const SamplerSpec& spec, int T);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// Row-wise forward_noise with one timestep per leading-axis row.
Tensor forward_noise_batch(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& sched);

/// Standard deviation of the DDPM transition at t (zero at t = 0).
double ddpm_sigma(int t, const NoiseSchedule& sched);

/// One ancestral DDPM step from x_t to x_{t-1}; `z` must be zero at t = 0.
Tensor ddpm_step(const Tensor& xt, const Tensor& eps_pred, int t, const NoiseSchedule& sched, const Tensor& z);

/// Standard deviation of the DDIM transition t -> t_prev for the given eta.
double ddim_sigma(int t, int t_prev, double eta, const NoiseSchedule& sched);

/// One DDIM step from x_t to x_{t_prev}; t_prev = -1 denotes the final
/// step to x_0. `z` is ignored when eta = 0 and may then be empty.
Tensor ddim_step(const Tensor& xt, const Tensor& eps_pred, int t, int t_prev, double eta,
                 const NoiseSchedule& sched, const Tensor& z = {});

/// Exact noise prediction for data distributed as N(mu0, sigma0^2 I).
/// `mu0` has the per-sample shape; `xt` may carry a leading batch axis.
Tensor analytic_gaussian_denoiser(const Tensor& xt, int t, const Tensor& mu0, double sigma0,
                                  const NoiseSchedule& sched);

/// Noise prediction for a batch at model timestep t.
using EpsFn = std::function<Tensor(const Tensor& xt, int t)>;

/// Runs the reverse process from `x` (= x_T) down to x_0 with the transition
/// rule of `spec`, drawing the stochastic terms from `rng`. With
/// spec.clip_x0 the noise prediction is replaced by the one implied by the
/// clamped x_0 estimate.
Tensor reverse_chain(Tensor x, const NoiseSchedule& sched, const SamplerSpec& spec, const EpsFn& eps_fn, Rng& rng);

}  // namespace duodiff
