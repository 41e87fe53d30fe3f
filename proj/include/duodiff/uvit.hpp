#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "duodiff/autograd.hpp"

namespace duodiff {

struct DenoiserConfig {
  int image_size = 16;
  int patch_size = 4;
  int in_channels = 3;
  int embed_dim = 128;
  int num_layers = 9;
  int num_heads = 4;
  int num_classes = 0;  // 0 = unconditional
  int mlp_ratio = 4;

  void validate() const;
  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * in_channels; }
  /// Sequence length including the conditioning token.
  int tokens() const { return num_patches() + 1; }
  /// Same tokenization and conditioning; depth may differ.
  bool compatible_with(const DenoiserConfig& o) const;
  bool operator==(const DenoiserConfig&) const = default;
};

/// [B, C, H, W] -> [B, (H/p)(W/p), p*p*C]; patches row-major over the grid,
/// pixels within a patch ordered (row, col, channel).
Tensor patchify(const Tensor& images, int patch_size);
Tensor unpatchify(const Tensor& tokens, int channels, int image_size, int patch_size);

/// Raw sinusoidal features, [t.size(), dim]: sin in the first half, cos in
/// the second, log-spaced frequencies from 1 down to 1/10000.
Tensor sinusoidal_embedding(std::span<const int> t, int dim);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in, int out, Tensor weight);
  Var operator()(const Var& x) const;

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, int dim);
  Var operator()(const Var& x) const;

 private:
  Parameter* g_ = nullptr;
  Parameter* b_ = nullptr;
};

struct DenoiserOutput {
  Var eps_tokens;                // [B, num_patches, patch_dim]
  std::vector<Var> activations;  // L_0..L_N, each [B, tokens, embed_dim]
  Var time_embedding;            // [B, embed_dim], conditioning vector
};

/// U-ViT style transformer denoiser: patch tokens plus one prepended
/// time/class token, pre-norm blocks, long skips from block i to block
/// N-1-i, norm + linear output head.
class UVitModel {
 public:
  UVitModel(const DenoiserConfig& config, uint64_t seed);
  UVitModel(UVitModel&&) = default;
  UVitModel& operator=(UVitModel&&) = default;

  const DenoiserConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  /// Full pass. `t` and `labels` hold one entry per batch row; labels must
  /// be present iff the model is class-conditional.
  DenoiserOutput forward(const Tensor& xt, std::span<const int> t, std::span<const int64_t> labels = {}) const;
  /// Image-shaped noise prediction without gradient tracking.
  Tensor predict(const Tensor& xt, std::span<const int> t, std::span<const int64_t> labels = {}) const;

  // Staged access used by the early-exit machinery.
  Var conditioning(std::span<const int> t, std::span<const int64_t> labels) const;
  Var embed(const Tensor& xt, const Var& cond) const;
  /// Activation index whose value block j merges as its long skip, or -1.
  int skip_source(int j) const;
  Var block(int j, const Var& x, const Var* skip) const;
  Var head(const Var& x) const;
  Tensor to_image(const Var& eps_tokens) const;
  void check_inputs(const Tensor& xt, std::span<const int> t, std::span<const int64_t> labels) const;

 private:
  struct Block {
    LayerNorm ln1;
    Linear qkv;
    Linear proj;
    LayerNorm ln2;
    Linear fc1;
    Linear fc2;
    Linear skip;
    bool has_skip = false;
  };

  Var attention(const Block& b, const Var& x) const;

  DenoiserConfig cfg_;
  ParameterStore store_;
  Linear patch_embed_;
  Parameter* pos_embed_ = nullptr;
  Linear time_fc1_;
  Linear time_fc2_;
  Parameter* class_embed_ = nullptr;
  std::vector<Block> blocks_;
  LayerNorm final_norm_;
  Linear final_proj_;
};

}  // namespace duodiff
