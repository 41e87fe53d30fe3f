#include "duodiff/optim.hpp"

#include <algorithm>
#include <cmath>

namespace duodiff {

float AdamW::effective_lr(int64_t step) const {
  if (opt_.warmup_steps <= 0) return opt_.lr;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(opt_.warmup_steps));
  return static_cast<float>(opt_.lr * frac);
}

void AdamW::step(std::span<Parameter* const> params, const Gradients& grads) {
  for (const auto& [p, g] : grads.map())
    if (!g.all_finite()) throw NumericError("adamw: non-finite gradient for " + p->name());

  const int64_t t = step_ + 1;
  const float lr = effective_lr(t);
  const float bc1 = 1.0f - std::pow(opt_.beta1, static_cast<float>(t));
  const float bc2 = 1.0f - std::pow(opt_.beta2, static_cast<float>(t));
  for (Parameter* p : params) {
    if (!p->trainable() || !grads.contains(*p)) continue;
    const Tensor g = grads.of(*p);
    auto [mi, m_new] = m_.try_emplace(p->name(), p->shape());
    auto [vi, v_new] = v_.try_emplace(p->name(), p->shape());
    if (mi->second.shape() != p->shape() || vi->second.shape() != p->shape())
      throw ShapeError("adamw: moment shape mismatch for " + p->name());
    Tensor& w = p->value();
    float* m = mi->second.ptr();
    float* v = vi->second.ptr();
    const float decay = 1.0f - lr * opt_.weight_decay;
    for (int64_t i = 0; i < w.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0f - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0f - opt_.beta2) * g[i] * g[i];
      const float mhat = bc1 > 0.0f ? m[i] / bc1 : m[i];
      const float vhat = bc2 > 0.0f ? v[i] / bc2 : v[i];
      w[i] = w[i] * decay - lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
  }
  step_ = t;
}

}  // namespace duodiff
