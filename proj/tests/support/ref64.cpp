#include "ref64.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace ref64 {

using duodiff::DenoiserConfig;

Vec to_vec(const duodiff::Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

Params snapshot(const duodiff::ParameterStore& store) {
  Params P;
  for (const auto* p : store.all()) P[p->name()] = to_vec(p->value());
  return P;
}

Vec linear(const Vec& x, int64_t rows, int64_t in, int64_t out, const Vec& W, const Vec& b) {
  Vec y(static_cast<size_t>(rows * out));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t o = 0; o < out; ++o) {
      double acc = b[static_cast<size_t>(o)];
      for (int64_t i = 0; i < in; ++i) acc += x[static_cast<size_t>(r * in + i)] * W[static_cast<size_t>(i * out + o)];
      y[static_cast<size_t>(r * out + o)] = acc;
    }
  return y;
}

Vec linear(const Vec& x, int64_t rows, int64_t in, int64_t out, const Params& P, const std::string& name) {
  return linear(x, rows, in, out, P.at(name + ".weight"), P.at(name + ".bias"));
}

Vec layer_norm(const Vec& x, int64_t d, const Vec& g, const Vec& b, double eps) {
  Vec y(x.size());
  for (size_t r = 0; r < x.size() / static_cast<size_t>(d); ++r) {
    const double* xr = x.data() + r * d;
    double mu = 0, var = 0;
    for (int64_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    for (int64_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    for (int64_t i = 0; i < d; ++i)
      y[r * d + i] = (xr[i] - mu) / std::sqrt(var + eps) * g[static_cast<size_t>(i)] + b[static_cast<size_t>(i)];
  }
  return y;
}

Vec layer_norm(const Vec& x, int64_t d, const Params& P, const std::string& name) {
  return layer_norm(x, d, P.at(name + ".weight"), P.at(name + ".bias"));
}

Vec gelu(Vec x) {
  for (double& v : x) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return x;
}

Vec sigmoid(Vec x) {
  for (double& v : x) v = 1.0 / (1.0 + std::exp(-v));
  return x;
}

Vec softmax_rows(Vec x, int64_t d) {
  for (size_t r = 0; r < x.size() / static_cast<size_t>(d); ++r) {
    double* xr = x.data() + r * d;
    const double m = *std::max_element(xr, xr + d);
    double s = 0;
    for (int64_t i = 0; i < d; ++i) s += (xr[i] = std::exp(xr[i] - m));
    for (int64_t i = 0; i < d; ++i) xr[i] /= s;
  }
  return x;
}

Vec bmm(const Vec& a, const Vec& b, int64_t B, int64_t M, int64_t K, int64_t N) {
  Vec c(static_cast<size_t>(B * M * N));
  for (int64_t z = 0; z < B; ++z)
    for (int64_t i = 0; i < M; ++i)
      for (int64_t j = 0; j < N; ++j) {
        double acc = 0;
        for (int64_t k = 0; k < K; ++k) acc += a[static_cast<size_t>((z * M + i) * K + k)] * b[static_cast<size_t>((z * K + k) * N + j)];
        c[static_cast<size_t>((z * M + i) * N + j)] = acc;
      }
  return c;
}

Vec sinusoidal(std::span<const int> t, int dim) {
  const int half = dim / 2;
  Vec out(t.size() * static_cast<size_t>(dim));
  for (size_t r = 0; r < t.size(); ++r)
    for (int k = 0; k < half; ++k) {
      const double f = std::pow(10000.0, -static_cast<double>(k) / half);
      out[r * dim + k] = std::sin(t[r] * f);
      out[r * dim + half + k] = std::cos(t[r] * f);
    }
  return out;
}

Vec patchify(const Vec& img, int64_t B, int C, int S, int p) {
  const int g = S / p;
  const int64_t pd = static_cast<int64_t>(p) * p * C;
  Vec out(static_cast<size_t>(B * g * g * pd));
  for (int64_t b = 0; b < B; ++b)
    for (int gy = 0; gy < g; ++gy)
      for (int gx = 0; gx < g; ++gx)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            for (int c = 0; c < C; ++c) {
              const int64_t tok = b * g * g + gy * g + gx;
              out[static_cast<size_t>(tok * pd + (py * p + px) * C + c)] =
                  img[static_cast<size_t>(((b * C + c) * S + gy * p + py) * S + gx * p + px)];
            }
  return out;
}

Vec attention(const Vec& x, int64_t B, int64_t S, const DenoiserConfig& cfg, const Params& P, const std::string& pre) {
  const int64_t D = cfg.embed_dim, H = cfg.num_heads, Dh = D / H;
  const Vec qkv = linear(x, B * S, D, 3 * D, P, pre + ".qkv");
  auto at = [&](int64_t b, int64_t s, int64_t col) { return qkv[static_cast<size_t>((b * S + s) * 3 * D + col)]; };
  Vec o(static_cast<size_t>(B * S * D), 0.0);
  const double sc = 1.0 / std::sqrt(static_cast<double>(Dh));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h) {
      Vec a(static_cast<size_t>(S * S));
      for (int64_t i = 0; i < S; ++i)
        for (int64_t j = 0; j < S; ++j) {
          double acc = 0;
          for (int64_t d = 0; d < Dh; ++d) acc += at(b, i, h * Dh + d) * at(b, j, D + h * Dh + d);
          a[static_cast<size_t>(i * S + j)] = acc * sc;
        }
      a = softmax_rows(std::move(a), S);
      for (int64_t i = 0; i < S; ++i)
        for (int64_t d = 0; d < Dh; ++d) {
          double acc = 0;
          for (int64_t j = 0; j < S; ++j) acc += a[static_cast<size_t>(i * S + j)] * at(b, j, 2 * D + h * Dh + d);
          o[static_cast<size_t>((b * S + i) * D + h * Dh + d)] = acc;
        }
    }
  return linear(o, B * S, D, D, P, pre + ".proj");
}

Vec block(const Vec& x_in, const Vec* skip, int64_t B, const DenoiserConfig& cfg, const Params& P, int j) {
  const int64_t S = cfg.tokens(), D = cfg.embed_dim, Hd = D * cfg.mlp_ratio;
  const std::string pre = "blocks." + std::to_string(j);
  Vec x = x_in;
  if (skip) {
    Vec cat(static_cast<size_t>(B * S * 2 * D));
    for (int64_t r = 0; r < B * S; ++r)
      for (int64_t d = 0; d < D; ++d) {
        cat[static_cast<size_t>(r * 2 * D + d)] = x[static_cast<size_t>(r * D + d)];
        cat[static_cast<size_t>(r * 2 * D + D + d)] = (*skip)[static_cast<size_t>(r * D + d)];
      }
    x = linear(cat, B * S, 2 * D, D, P, pre + ".skip");
  }
  const Vec a = attention(layer_norm(x, D, P, pre + ".ln1"), B, S, cfg, P, pre + ".attn");
  for (size_t i = 0; i < x.size(); ++i) x[i] += a[i];
  const Vec h = gelu(linear(layer_norm(x, D, P, pre + ".ln2"), B * S, D, Hd, P, pre + ".mlp.fc1"));
  const Vec m = linear(h, B * S, Hd, D, P, pre + ".mlp.fc2");
  for (size_t i = 0; i < x.size(); ++i) x[i] += m[i];
  return x;
}

Vec conditioning(std::span<const int> t, std::span<const int64_t> labels, const DenoiserConfig& cfg, const Params& P) {
  const int64_t B = static_cast<int64_t>(t.size()), D = cfg.embed_dim, Hd = D * cfg.mlp_ratio;
  Vec c = linear(gelu(linear(sinusoidal(t, cfg.embed_dim), B, D, Hd, P, "time_embed.fc1")), B, Hd, D, P,
                 "time_embed.fc2");
  if (cfg.num_classes > 0) {
    const Vec& E = P.at("class_embed");
    for (int64_t b = 0; b < B; ++b)
      for (int64_t d = 0; d < D; ++d) c[static_cast<size_t>(b * D + d)] += E[static_cast<size_t>(labels[b] * D + d)];
  }
  return c;
}

Vec embed(const Vec& img, const Vec& cond, int64_t B, const DenoiserConfig& cfg, const Params& P) {
  const int64_t D = cfg.embed_dim, Np = cfg.num_patches(), S = cfg.tokens();
  const Vec tok = linear(patchify(img, B, cfg.in_channels, cfg.image_size, cfg.patch_size), B * Np, cfg.patch_dim(), D,
                         P, "patch_embed");
  const Vec& pos = P.at("pos_embed");
  Vec x(static_cast<size_t>(B * S * D));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t s = 0; s < S; ++s)
      for (int64_t d = 0; d < D; ++d) {
        const double v = s == 0 ? cond[static_cast<size_t>(b * D + d)] : tok[static_cast<size_t>((b * Np + s - 1) * D + d)];
        x[static_cast<size_t>((b * S + s) * D + d)] = v + pos[static_cast<size_t>(s * D + d)];
      }
  return x;
}

Vec final_head(const Vec& x, int64_t B, const DenoiserConfig& cfg, const Params& P, const std::string& norm,
               const std::string& proj) {
  const int64_t D = cfg.embed_dim, Np = cfg.num_patches(), S = cfg.tokens();
  const Vec n = layer_norm(x, D, P, norm);
  Vec patches;
  for (int64_t b = 0; b < B; ++b)
    patches.insert(patches.end(), n.begin() + (b * S + 1) * D, n.begin() + (b * S + S) * D);
  return linear(patches, B * Np, D, cfg.patch_dim(), P, proj);
}

Forward uvit_forward(const Vec& img, std::span<const int> t, std::span<const int64_t> labels, const DenoiserConfig& cfg,
                     const Params& P) {
  const int64_t B = static_cast<int64_t>(t.size());
  const int N = cfg.num_layers;
  Forward f;
  f.cond = conditioning(t, labels, cfg, P);
  f.acts.push_back(embed(img, f.cond, B, cfg, P));
  for (int j = 0; j < N; ++j) {
    const bool has_skip = N - 1 - j < j;
    const Vec* skip = has_skip ? &f.acts[static_cast<size_t>(N - j)] : nullptr;
    Vec next = block(f.acts.back(), skip, B, cfg, P, j);
    f.acts.push_back(std::move(next));
  }
  f.eps_tokens = final_head(f.acts.back(), B, cfg, P, "final.norm", "final.proj");
  return f;
}

Vec uem(const Vec& acts, const Vec& cond, int64_t B, const DenoiserConfig& cfg, const Params& P, const std::string& pre) {
  const int64_t D = cfg.embed_dim, S = cfg.tokens();
  Vec in(static_cast<size_t>(B * 2 * D), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t d = 0; d < D; ++d) {
      for (int64_t s = 0; s < S; ++s) in[static_cast<size_t>(b * 2 * D + d)] += acts[static_cast<size_t>((b * S + s) * D + d)];
      in[static_cast<size_t>(b * 2 * D + d)] /= static_cast<double>(S);
      in[static_cast<size_t>(b * 2 * D + D + d)] = cond[static_cast<size_t>(b * D + d)];
    }
  return sigmoid(linear(in, B, 2 * D, 1, P, pre));
}

void randomize(duodiff::ParameterStore& store, uint64_t seed, double scale) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto* p : store.all()) {
    const bool gain = p->name().ends_with("norm.weight") || p->name().ends_with("ln1.weight") ||
                      p->name().ends_with("ln2.weight");
    for (float& v : p->value().data()) v = static_cast<float>((gain ? 1.0 : 0.0) + scale * nd(gen));
  }
}

GradReport check_gradients(duodiff::ParameterStore& store, const std::function<duodiff::Var()>& build,
                           const std::function<Vec(const Params&)>& shadow, uint64_t seed, double h) {
  using namespace duodiff;
  GradReport rep;
  Params P = snapshot(store);
  Gradients grads;
  Tensor out_value;
  Vec R;
  {
    Tape tape;
    Var out = build();
    out_value = out.value();
    std::mt19937_64 gen(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> nd(0.0, 1.0);
    R.resize(static_cast<size_t>(out_value.size()));
    Tensor Rt(out_value.shape());
    for (size_t i = 0; i < R.size(); ++i) Rt[static_cast<int64_t>(i)] = static_cast<float>(R[i] = nd(gen));
    for (size_t i = 0; i < R.size(); ++i) R[i] = Rt[static_cast<int64_t>(i)];
    grads = backward(tape, sum(mul(out, constant(Rt))));
  }
  const Vec ref_out = shadow(P);
  if (ref_out.size() != R.size()) throw std::logic_error("shadow output size mismatch");
  for (size_t i = 0; i < R.size(); ++i)
    rep.forward_err = std::max(rep.forward_err, std::fabs(ref_out[i] - out_value[static_cast<int64_t>(i)]));

  auto objective = [&](const Params& Q) {
    const Vec y = shadow(Q);
    double s = 0;
    for (size_t i = 0; i < y.size(); ++i) s += y[i] * R[i];
    return s;
  };
  for (auto* p : store.all()) {
    if (!p->trainable()) continue;
    const Tensor g = grads.of(*p);
    Vec& v = P[p->name()];
    double max_fd = 0, max_diff = 0;
    for (size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double lp = objective(P);
      v[i] = orig - h;
      const double lm = objective(P);
      v[i] = orig;
      const double fd = (lp - lm) / (2 * h);
      max_fd = std::max(max_fd, std::fabs(fd));
      max_diff = std::max(max_diff, std::fabs(fd - g[static_cast<int64_t>(i)]));
      ++rep.checked;
    }
    const double rel = max_diff / std::max(max_fd, 1e-12);
    if (rel > rep.max_rel) {
      rep.max_rel = rel;
      rep.worst = p->name();
    }
  }
  return rep;
}

}  // namespace ref64
