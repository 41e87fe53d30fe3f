#pragma once

#include <vector>

#include "duodiff/diffusion.hpp"
#include "duodiff/rng.hpp"
#include "duodiff/uvit.hpp"

namespace testutil {

inline duodiff::DenoiserConfig tiny_config(int layers = 3, int classes = 0) {
  duodiff::DenoiserConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.in_channels = 3;
  c.embed_dim = 16;
  c.num_layers = layers;
  c.num_heads = 2;
  c.num_classes = classes;
  c.mlp_ratio = 2;
  return c;
}

inline std::vector<int> random_t(duodiff::Rng& rng, int n, int T = 1000) {
  std::vector<int> t(static_cast<size_t>(n));
  for (int& v : t) v = static_cast<int>(rng.below(T));
  return t;
}

}  // namespace testutil
