#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "duodiff/autograd.hpp"

namespace duodiff {

struct AdamWOptions {
  float lr = 2e-4f;
  float weight_decay = 3e-2f;
  float beta1 = 0.99f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int64_t warmup_steps = 1500;
};

/// AdamW with decoupled weight decay and linear learning-rate warmup.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : opt_(options) {}

  /// Learning rate applied at 1-based step `step`: lr * min(1, step / warmup).
  float effective_lr(int64_t step) const;

  /// Applies one update to every parameter that has a gradient. Throws
  /// NumericError, leaving parameters and state untouched, if any gradient
  /// is non-finite.
  void step(std::span<Parameter* const> params, const Gradients& grads);

  int64_t step_count() const { return step_; }
  const AdamWOptions& options() const { return opt_; }

  // Moment buffers keyed by parameter name (for checkpointing).
  std::map<std::string, Tensor>& first_moment() { return m_; }
  std::map<std::string, Tensor>& second_moment() { return v_; }
  const std::map<std::string, Tensor>& first_moment() const { return m_; }
  const std::map<std::string, Tensor>& second_moment() const { return v_; }
  void set_step_count(int64_t s) { step_ = s; }

 private:
  AdamWOptions opt_;
  int64_t step_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

}  // namespace duodiff
