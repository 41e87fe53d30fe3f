#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "duodiff/diffusion.hpp"
#include "duodiff/training.hpp"
#include "duodiff/uvit.hpp"

namespace duodiff {

/// Per-layer noise prediction head: norm + linear per patch token.
class OutputHead {
 public:
  OutputHead() = default;
  OutputHead(ParameterStore& store, const std::string& name, const DenoiserConfig& cfg);
  /// [B, tokens, D] -> [B, num_patches, patch_dim]
  Var operator()(const Var& activations) const;

 private:
  LayerNorm norm_;
  Linear proj_;
  int64_t num_patches_ = 0;
};

/// Timestep-aware uncertainty estimator: sigmoid(w^T [mean_tokens(L), temb] + b).
class UncertaintyModule {
 public:
  UncertaintyModule() = default;
  UncertaintyModule(ParameterStore& store, const std::string& name, int embed_dim, Tensor weight);
  /// Returns u with shape [B].
  Var operator()(const Var& activations, const Var& time_embedding) const;

  Parameter& weight() { return *w_; }
  Parameter& bias() { return *b_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
};

/// tanh(mean |eps_pred - eps|) per batch row: [B, ...] x [B, ...] -> [B].
Tensor pseudo_uncertainty(const Tensor& eps_pred, const Tensor& eps);

/// Per-row mean squared error, [B, ...] -> [B].
Var per_sample_mse(const Var& pred, const Tensor& target);

/// Sum over layers of (u_i - u_hat_i)^2, averaged over the batch.
Var loss_u(std::span<const Var> u, std::span<const Tensor> u_hat);

/// Sum over layers of (1 - u_i) * mse_i, averaged over the batch. The
/// (1 - u_i) weights are treated as constants.
Var loss_ual(std::span<const Var> eps_preds, const Tensor& eps, std::span<const Var> u);

struct AdaDiffLossWeights {
  float lambda = 1.0f;
  float beta = 1.0f;
};

struct AdaDiffLoss {
  Var total;
  float simple = 0;
  float u = 0;
  float ual = 0;
};

struct EarlyExitResult {
  Tensor eps;                          // [B, C, S, S]
  std::vector<int> exit_layer;         // per row, in 0..N
  std::vector<std::vector<float>> u;   // per row: u at each visited layer
};

/// Backbone plus N output heads and N UEMs.
class AdaDiffModel {
 public:
  AdaDiffModel(UVitModel backbone, uint64_t seed);
  AdaDiffModel(AdaDiffModel&&) = default;
  AdaDiffModel& operator=(AdaDiffModel&&) = default;

  UVitModel& backbone() { return backbone_; }
  const UVitModel& backbone() const { return backbone_; }
  /// Heads and UEMs only.
  ParameterStore& exit_parameters() { return store_; }
  const ParameterStore& exit_parameters() const { return store_; }
  int depth() const { return backbone_.config().num_layers; }

  Var head(int i, const Var& activations) const;
  Var uem(int i, const Var& activations, const Var& time_embedding) const;

  /// Joint objective on one batch: simple loss of the backbone's final
  /// output + lambda * L_u + beta * L_UAL. `eps` is image-shaped.
  AdaDiffLoss loss_all(const Tensor& xt, std::span<const int> t, std::span<const int64_t> labels,
                       const Tensor& eps, AdaDiffLossWeights weights = {}) const;

  /// Shrinking-batch early exit: rows leave the batch at the first layer
  /// whose uncertainty is <= theta; later blocks run only for rows still
  /// in the batch.
  EarlyExitResult early_exit_forward(const Tensor& xt, std::span<const int> t, std::span<const int64_t> labels,
                                     double theta) const;

  /// Runs every layer and head for the whole batch, then substitutes each
  /// row's output with its earliest qualifying head.
  EarlyExitResult simulate_batch_early_exit(const Tensor& xt, std::span<const int> t,
                                            std::span<const int64_t> labels, double theta) const;

 private:
  UVitModel backbone_;
  ParameterStore store_;
  std::vector<OutputHead> heads_;
  std::vector<UncertaintyModule> uems_;
};

struct AdaDiffLossPoint {
  int64_t step;
  float total;
  float simple;
  float u;
  float ual;
};

/// Trains heads and UEMs on the joint objective. With head_only (the
/// default) the backbone is frozen and its tensors are left untouched.
std::vector<AdaDiffLossPoint> train_adadiff(AdaDiffModel& model, AdamW& optimizer, const ImageSet& data,
                                            const NoiseSchedule& sched, const TrainOptions& options,
                                            AdaDiffLossWeights weights = {}, bool head_only = true,
                                            const CheckpointFn& on_checkpoint = {});

/// One sampling step for one row.
struct ExitRecord {
  int64_t sample_id;
  int t;
  int exit_layer;
  float u_exit;  // u at the exit layer; u of the last visited layer when exit_layer = N
};

using ExitTrace = std::vector<ExitRecord>;

/// full_time * mean(exit_layers) / N.
double estimate_latency(std::span<const int> exit_layers, double full_time, int num_layers);
double estimate_latency(const ExitTrace& trace, double full_time, int num_layers);

}  // namespace duodiff
