#include "duodiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace duodiff {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.beta.resize(static_cast<size_t>(T));
  s.alpha.resize(static_cast<size_t>(T));
  s.alpha_bar.resize(static_cast<size_t>(T));
  double cum = 1.0;
  for (int t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    s.beta[static_cast<size_t>(t)] = b;
    s.alpha[static_cast<size_t>(t)] = 1.0 - b;
    cum *= 1.0 - b;
    s.alpha_bar[static_cast<size_t>(t)] = cum;
  }
  return s;
}

std::string to_string(SamplerKind kind) { return kind == SamplerKind::DDPM ? "ddpm" : "ddim"; }

SamplerKind parse_sampler_kind(const std::string& s) {
  if (s == "ddpm" || s == "DDPM") return SamplerKind::DDPM;
  if (s == "ddim" || s == "DDIM") return SamplerKind::DDIM;
  throw std::invalid_argument("unknown sampler kind: " + s);
}

void SamplerSpec::validate(int T) const {
  if (t_s < 0 || t_s > T) throw std::invalid_argument("sampler: t_s must lie in [0, T]");
  if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("sampler: eta must lie in [0, 1]");
  if (kind == SamplerKind::DDIM && (n_steps < 1 || n_steps > T))
    throw std::invalid_argument("sampler: n_steps must lie in [1, T]");
}

std::vector<int> sampling_timesteps(const SamplerSpec& spec, int T) {
  spec.validate(T);
  std::vector<int> ts;
  if (spec.kind == SamplerKind::DDPM) {
    for (int t = T - 1; t >= 0; --t) ts.push_back(t);
    return ts;
  }
  const int n = spec.n_steps;
  for (int k = n - 1; k >= 0; --k) {
    const double pos = n == 1 ? 0.0 : static_cast<double>(k) * static_cast<double>(T - 1) / static_cast<double>(n - 1);
    ts.push_back(static_cast<int>(std::lround(pos)));
  }
  return ts;
}

namespace {

void check_t(int t, const NoiseSchedule& sched, const char* op) {
  if (t < 0 || t >= sched.steps())
    throw std::out_of_range(std::string(op) + ": t=" + std::to_string(t) + " outside [0, " +
                            std::to_string(sched.steps()) + ")");
}

// Re-derives eps from x_0 = clamp((x - sqrt(1-abar) eps) / sqrt(abar), -1, 1).
void clip_eps(const Tensor& x, Tensor& eps, int t, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar[static_cast<size_t>(t)];
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
  for (int64_t i = 0; i < x.size(); ++i) {
    const double x0 = std::clamp((x[i] - sb * eps[i]) / sa, -1.0, 1.0);
    eps[i] = static_cast<float>((x[i] - sa * x0) / sb);
  }
}

}  // namespace

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) throw ShapeError("forward_noise", {x0.shape(), eps.shape()});
  check_t(t, sched, "forward_noise");
  const double ab = sched.alpha_bar[static_cast<size_t>(t)];
  const auto a = static_cast<float>(std::sqrt(ab));
  const auto b = static_cast<float>(std::sqrt(1.0 - ab));
  Tensor out(x0.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor forward_noise_batch(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape() || x0.rank() < 1 || x0.dim(0) != static_cast<int64_t>(t.size()))
    throw ShapeError("forward_noise", {x0.shape(), eps.shape()});
  const int64_t per = x0.size() / std::max<int64_t>(1, x0.dim(0));
  Tensor out(x0.shape());
  for (size_t r = 0; r < t.size(); ++r) {
    check_t(t[r], sched, "forward_noise");
    const double ab = sched.alpha_bar[static_cast<size_t>(t[r])];
    const auto a = static_cast<float>(std::sqrt(ab));
    const auto b = static_cast<float>(std::sqrt(1.0 - ab));
    const int64_t off = static_cast<int64_t>(r) * per;
    for (int64_t i = off; i < off + per; ++i) out[i] = a * x0[i] + b * eps[i];
  }
  return out;
}

double ddpm_sigma(int t, const NoiseSchedule& sched) {
  check_t(t, sched, "ddpm_sigma");
  if (t == 0) return 0.0;
  const double ab = sched.alpha_bar[static_cast<size_t>(t)];
  const double ab_prev = sched.alpha_bar_at(t - 1);
  return std::sqrt(sched.beta[static_cast<size_t>(t)] * (1.0 - ab_prev) / (1.0 - ab));
}

Tensor ddpm_step(const Tensor& xt, const Tensor& eps_pred, int t, const NoiseSchedule& sched, const Tensor& z) {
  check_t(t, sched, "ddpm_step");
  if (xt.shape() != eps_pred.shape()) throw ShapeError("ddpm_step", {xt.shape(), eps_pred.shape()});
  const bool has_noise = !z.empty();
  if (has_noise && z.shape() != xt.shape()) throw ShapeError("ddpm_step", {xt.shape(), z.shape()});
  const double ab = sched.alpha_bar[static_cast<size_t>(t)];
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[static_cast<size_t>(t)]);
  const double coef = sched.beta[static_cast<size_t>(t)] / std::sqrt(1.0 - ab);
  const double sigma = ddpm_sigma(t, sched);
  if (t == 0 && has_noise)
    for (float v : z.data())
      if (v != 0.0f) throw std::invalid_argument("ddpm_step: z must be zero at t = 0");
  Tensor out(xt.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    double v = inv_sqrt_alpha * (xt[i] - coef * eps_pred[i]);
    if (has_noise) v += sigma * z[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

double ddim_sigma(int t, int t_prev, double eta, const NoiseSchedule& sched) {
  check_t(t, sched, "ddim_sigma");
  if (t_prev >= t || t_prev < -1) throw std::out_of_range("ddim: need -1 <= t_prev < t");
  const double ab = sched.alpha_bar[static_cast<size_t>(t)];
  const double ab_prev = sched.alpha_bar_at(t_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

Tensor ddim_step(const Tensor& xt, const Tensor& eps_pred, int t, int t_prev, double eta,
                 const NoiseSchedule& sched, const Tensor& z) {
  if (xt.shape() != eps_pred.shape()) throw ShapeError("ddim_step", {xt.shape(), eps_pred.shape()});
  const double sigma = ddim_sigma(t, t_prev, eta, sched);
  const double ab = sched.alpha_bar[static_cast<size_t>(t)];
  const double ab_prev = sched.alpha_bar_at(t_prev);
  const double dir2 = 1.0 - ab_prev - sigma * sigma;
  if (!(dir2 >= -1e-12)) throw std::domain_error("ddim_step: 1 - abar_prev - sigma^2 is negative");
  const double dir = std::sqrt(std::max(0.0, dir2));
  const bool stochastic = sigma > 0.0;
  if (stochastic && z.shape() != xt.shape()) throw ShapeError("ddim_step", {xt.shape(), z.shape()});
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab), sp = std::sqrt(ab_prev);
  Tensor out(xt.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    const double x0 = (xt[i] - sb * eps_pred[i]) / sa;
    double v = sp * x0 + dir * eps_pred[i];
    if (stochastic) v += sigma * z[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

Tensor analytic_gaussian_denoiser(const Tensor& xt, int t, const Tensor& mu0, double sigma0,
                                  const NoiseSchedule& sched) {
  if (!(sigma0 > 0.0)) throw std::invalid_argument("analytic_gaussian_denoiser: sigma0 must be > 0");
  check_t(t, sched, "analytic_gaussian_denoiser");
  const int64_t d = mu0.size();
  if (d == 0 || xt.size() % d != 0) throw ShapeError("analytic_gaussian_denoiser", {xt.shape(), mu0.shape()});
  const double ab = sched.alpha_bar[static_cast<size_t>(t)];
  const double s2 = sigma0 * sigma0;
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
  const double denom = ab * s2 + (1.0 - ab);
  Tensor out(xt.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    const double x0 = (s2 * sa * xt[i] + (1.0 - ab) * mu0[i % d]) / denom;
    out[i] = static_cast<float>((xt[i] - sa * x0) / sb);
  }
  return out;
}

Tensor reverse_chain(Tensor x, const NoiseSchedule& sched, const SamplerSpec& spec, const EpsFn& eps_fn, Rng& rng) {
  const std::vector<int> ts = sampling_timesteps(spec, sched.steps());
  for (size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    Tensor eps = eps_fn(x, t);
    if (spec.clip_x0) clip_eps(x, eps, t, sched);
    if (spec.kind == SamplerKind::DDPM) {
      x = ddpm_step(x, eps, t, sched, t > 0 ? rng.normal_tensor(x.shape()) : Tensor{});
    } else {
      const int t_prev = k + 1 < ts.size() ? ts[k + 1] : -1;
      x = ddim_step(x, eps, t, t_prev, spec.eta, sched, spec.eta > 0.0 ? rng.normal_tensor(x.shape()) : Tensor{});
    }
  }
  return x;
}

}  // namespace duodiff
