#pragma once

// Double-precision reference implementations of the denoiser layers, used
// as finite-difference oracles for the float32 autodiff engine. Written
// independently of src/: plain loops over row-major buffers.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "duodiff/autograd.hpp"
#include "duodiff/uvit.hpp"

namespace ref64 {

using Vec = std::vector<double>;
using Params = std::map<std::string, Vec>;

Vec to_vec(const duodiff::Tensor& t);
Params snapshot(const duodiff::ParameterStore& store);

// x: [rows, in], W: [in, out], b: [out]
Vec linear(const Vec& x, int64_t rows, int64_t in, int64_t out, const Vec& W, const Vec& b);
Vec linear(const Vec& x, int64_t rows, int64_t in, int64_t out, const Params& P, const std::string& name);
Vec layer_norm(const Vec& x, int64_t d, const Vec& g, const Vec& b, double eps = 1e-5);
Vec layer_norm(const Vec& x, int64_t d, const Params& P, const std::string& name);
Vec gelu(Vec x);
Vec sigmoid(Vec x);
Vec softmax_rows(Vec x, int64_t d);
// [B, M, K] x [B, K, N]
Vec bmm(const Vec& a, const Vec& b, int64_t B, int64_t M, int64_t K, int64_t N);

Vec sinusoidal(std::span<const int> t, int dim);
// [B, C, S, S] -> [B, P, p*p*C], pixel order (row, col, channel)
Vec patchify(const Vec& img, int64_t B, int C, int S, int p);

Vec attention(const Vec& x, int64_t B, int64_t S, const duodiff::DenoiserConfig& cfg, const Params& P,
              const std::string& pre);
Vec block(const Vec& x, const Vec* skip, int64_t B, const duodiff::DenoiserConfig& cfg, const Params& P, int j);
Vec conditioning(std::span<const int> t, std::span<const int64_t> labels, const duodiff::DenoiserConfig& cfg,
                 const Params& P);
Vec embed(const Vec& img, const Vec& cond, int64_t B, const duodiff::DenoiserConfig& cfg, const Params& P);
Vec final_head(const Vec& x, int64_t B, const duodiff::DenoiserConfig& cfg, const Params& P,
               const std::string& norm, const std::string& proj);

struct Forward {
  Vec eps_tokens;
  std::vector<Vec> acts;
  Vec cond;
};
Forward uvit_forward(const Vec& img, std::span<const int> t, std::span<const int64_t> labels,
                     const duodiff::DenoiserConfig& cfg, const Params& P);

// Mean over tokens concatenated with cond, then sigmoid(linear) -> [B]
Vec uem(const Vec& acts, const Vec& cond, int64_t B, const duodiff::DenoiserConfig& cfg, const Params& P,
        const std::string& pre);

struct GradReport {
  double max_rel = 0;        // max over tensors of max|ad - fd| / max|fd|
  std::string worst;         // tensor attaining max_rel
  double forward_err = 0;    // max |f32 output - f64 output|
  int64_t checked = 0;       // number of scalar derivatives compared
};

/// Compares reverse-mode gradients of sum(build() * R) with central
/// differences of sum(shadow(P) * R) for every trainable parameter of
/// `store`. R is a fixed random tensor drawn from `seed`.
GradReport check_gradients(duodiff::ParameterStore& store, const std::function<duodiff::Var()>& build,
                           const std::function<Vec(const Params&)>& shadow, uint64_t seed, double h = 1e-3);

/// Replaces every parameter with seeded random values (gains around 1).
void randomize(duodiff::ParameterStore& store, uint64_t seed, double scale = 0.3);

}  // namespace ref64
