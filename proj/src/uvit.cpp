#include "duodiff/uvit.hpp"

#include <cmath>
#include <stdexcept>

#include "duodiff/rng.hpp"

namespace duodiff {

void DenoiserConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("denoiser config: " + m); };
  if (image_size < 1 || patch_size < 1 || in_channels < 1) fail("sizes must be positive");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (embed_dim < 2 || embed_dim % 2 != 0) fail("embed_dim must be even and >= 2");
  if (num_heads < 1 || embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (num_classes < 0) fail("num_classes must be >= 0");
  if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
}

bool DenoiserConfig::compatible_with(const DenoiserConfig& o) const {
  return image_size == o.image_size && patch_size == o.patch_size && in_channels == o.in_channels &&
         num_classes == o.num_classes;
}

Tensor patchify(const Tensor& images, int p) {
  if (images.rank() != 4) throw ShapeError("patchify: expected [B,C,H,W], got " + shape_str(images.shape()));
  const int64_t B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  if (p < 1 || H % p != 0 || W % p != 0)
    throw ShapeError("patchify: spatial dims " + shape_str(images.shape()) + " not divisible by patch " +
                     std::to_string(p));
  const int64_t gh = H / p, gw = W / p, pd = int64_t{p} * p * C;
  Tensor out(Shape{B, gh * gw, pd});
  int64_t o = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t gy = 0; gy < gh; ++gy)
      for (int64_t gx = 0; gx < gw; ++gx)
        for (int64_t py = 0; py < p; ++py)
          for (int64_t px = 0; px < p; ++px)
            for (int64_t c = 0; c < C; ++c)
              out[o++] = images[((b * C + c) * H + gy * p + py) * W + gx * p + px];
  return out;
}

Tensor unpatchify(const Tensor& tokens, int channels, int image_size, int p) {
  if (tokens.rank() != 3 || p < 1 || image_size % p != 0)
    throw ShapeError("unpatchify: bad token tensor " + shape_str(tokens.shape()));
  const int64_t B = tokens.dim(0), g = image_size / p, C = channels, S = image_size;
  if (tokens.dim(1) != g * g || tokens.dim(2) != int64_t{p} * p * C)
    throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) + " do not match image " +
                     std::to_string(image_size) + " patch " + std::to_string(p));
  Tensor out(Shape{B, C, S, S});
  int64_t o = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t gy = 0; gy < g; ++gy)
      for (int64_t gx = 0; gx < g; ++gx)
        for (int64_t py = 0; py < p; ++py)
          for (int64_t px = 0; px < p; ++px)
            for (int64_t c = 0; c < C; ++c) out[((b * C + c) * S + gy * p + py) * S + gx * p + px] = tokens[o++];
  return out;
}

Tensor sinusoidal_embedding(std::span<const int> t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("sinusoidal_embedding: dim must be even");
  const int half = dim / 2;
  Tensor out(Shape{static_cast<int64_t>(t.size()), dim});
  for (size_t r = 0; r < t.size(); ++r) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      const double arg = static_cast<double>(t[r]) * freq;
      out[static_cast<int64_t>(r) * dim + k] = static_cast<float>(std::sin(arg));
      out[static_cast<int64_t>(r) * dim + half + k] = static_cast<float>(std::cos(arg));
    }
  }
  return out;
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, Tensor weight) {
  if (weight.shape() != Shape{in, out}) throw ShapeError("linear " + name, {weight.shape(), Shape{in, out}});
  w_ = &store.add(name + ".weight", std::move(weight));
  b_ = &store.add(name + ".bias", Tensor(Shape{out}));
}

Var Linear::operator()(const Var& x) const { return add(matmul(x, param(*w_)), param(*b_)); }

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int dim) {
  g_ = &store.add(name + ".weight", Tensor(Shape{dim}, 1.0f));
  b_ = &store.add(name + ".bias", Tensor(Shape{dim}));
}

Var LayerNorm::operator()(const Var& x) const { return layer_norm(x, param(*g_), param(*b_)); }

UVitModel::UVitModel(const DenoiserConfig& config, uint64_t seed) : cfg_(config) {
  cfg_.validate();
  Rng rng(seed);
  const int D = cfg_.embed_dim;
  const int hidden = D * cfg_.mlp_ratio;
  auto w = [&](int in, int out) { return rng.truncated_normal(Shape{in, out}, 0.02f); };

  patch_embed_ = Linear(store_, "patch_embed", cfg_.patch_dim(), D, w(cfg_.patch_dim(), D));
  pos_embed_ = &store_.add("pos_embed", rng.truncated_normal(Shape{cfg_.tokens(), D}, 0.02f));
  time_fc1_ = Linear(store_, "time_embed.fc1", D, hidden, w(D, hidden));
  time_fc2_ = Linear(store_, "time_embed.fc2", hidden, D, w(hidden, D));
  if (cfg_.num_classes > 0)
    class_embed_ = &store_.add("class_embed", rng.truncated_normal(Shape{cfg_.num_classes, D}, 0.02f));

  const int N = cfg_.num_layers;
  for (int j = 0; j < N; ++j) {
    const std::string pre = "blocks." + std::to_string(j);
    Block b;
    b.has_skip = N - 1 - j < j;
    if (b.has_skip) b.skip = Linear(store_, pre + ".skip", 2 * D, D, w(2 * D, D));
    b.ln1 = LayerNorm(store_, pre + ".ln1", D);
    b.qkv = Linear(store_, pre + ".attn.qkv", D, 3 * D, w(D, 3 * D));
    b.proj = Linear(store_, pre + ".attn.proj", D, D, w(D, D));
    b.ln2 = LayerNorm(store_, pre + ".ln2", D);
    b.fc1 = Linear(store_, pre + ".mlp.fc1", D, hidden, w(D, hidden));
    b.fc2 = Linear(store_, pre + ".mlp.fc2", hidden, D, w(hidden, D));
    blocks_.push_back(std::move(b));
  }
  final_norm_ = LayerNorm(store_, "final.norm", D);
  final_proj_ = Linear(store_, "final.proj", D, cfg_.patch_dim(), Tensor(Shape{D, cfg_.patch_dim()}));
}

void UVitModel::check_inputs(const Tensor& xt, std::span<const int> t, std::span<const int64_t> labels) const {
  const Shape expect{xt.rank() == 4 ? xt.dim(0) : -1, cfg_.in_channels, cfg_.image_size, cfg_.image_size};
  if (xt.rank() != 4 || xt.shape() != expect) throw ShapeError("uvit.forward", {xt.shape(), expect});
  const auto B = static_cast<size_t>(xt.dim(0));
  if (t.size() != B) throw ShapeError("uvit.forward: need one timestep per batch row");
  if (cfg_.num_classes > 0 && labels.size() != B)
    throw std::invalid_argument("uvit.forward: class-conditional model requires one label per batch row");
  if (cfg_.num_classes == 0 && !labels.empty())
    throw std::invalid_argument("uvit.forward: unconditional model does not accept class labels");
}

Var UVitModel::conditioning(std::span<const int> t, std::span<const int64_t> labels) const {
  Var temb = constant(sinusoidal_embedding(t, cfg_.embed_dim));
  Var c = time_fc2_(gelu(time_fc1_(temb)));
  if (class_embed_) c = add(c, embedding(param(*class_embed_), labels));
  return c;
}

Var UVitModel::embed(const Tensor& xt, const Var& cond) const {
  const int64_t B = xt.dim(0);
  const int64_t D = cfg_.embed_dim;
  Var tokens = patch_embed_(constant(patchify(xt, cfg_.patch_size)));
  Var cond_tok = reshape(cond, Shape{B, 1, D});
  const Var parts[] = {cond_tok, tokens};
  return add(concat(parts, 1), param(*pos_embed_));
}

int UVitModel::skip_source(int j) const {
  const int N = cfg_.num_layers;
  return blocks_.at(static_cast<size_t>(j)).has_skip ? N - j : -1;
}

Var UVitModel::attention(const Block& b, const Var& x) const {
  const int64_t B = x.dim(0), S = x.dim(1), D = cfg_.embed_dim, H = cfg_.num_heads, Dh = D / H;
  Var qkv = b.qkv(x);
  const int64_t sizes[] = {D, D, D};
  auto parts = split(qkv, 2, sizes);
  auto heads = [&](const Var& v) {
    return reshape(transpose(reshape(v, Shape{B, S, H, Dh}), 1, 2), Shape{B * H, S, Dh});
  };
  Var q = heads(parts[0]);
  Var k = heads(parts[1]);
  Var v = heads(parts[2]);
  Var scores = scale(matmul(q, transpose(k, 1, 2)), 1.0f / std::sqrt(static_cast<float>(Dh)));
  Var o = matmul(softmax(scores), v);
  o = reshape(transpose(reshape(o, Shape{B, H, S, Dh}), 1, 2), Shape{B, S, D});
  return b.proj(o);
}

Var UVitModel::block(int j, const Var& x_in, const Var* skip) const {
  const Block& b = blocks_.at(static_cast<size_t>(j));
  Var x = x_in;
  if (b.has_skip) {
    if (!skip) throw std::invalid_argument("uvit.block: block " + std::to_string(j) + " needs its long skip");
    const Var parts[] = {x, *skip};
    x = b.skip(concat(parts, 2));
  }
  x = add(x, attention(b, b.ln1(x)));
  x = add(x, b.fc2(gelu(b.fc1(b.ln2(x)))));
  return x;
}

Var UVitModel::head(const Var& x) const {
  const int64_t P = cfg_.num_patches();
  const int64_t sizes[] = {1, P};
  Var patches = split(final_norm_(x), 1, sizes)[1];
  return final_proj_(patches);
}

Tensor UVitModel::to_image(const Var& eps_tokens) const {
  return unpatchify(eps_tokens.value(), cfg_.in_channels, cfg_.image_size, cfg_.patch_size);
}

DenoiserOutput UVitModel::forward(const Tensor& xt, std::span<const int> t, std::span<const int64_t> labels) const {
  check_inputs(xt, t, labels);
  DenoiserOutput out;
  out.time_embedding = conditioning(t, labels);
  out.activations.reserve(static_cast<size_t>(cfg_.num_layers + 1));
  out.activations.push_back(embed(xt, out.time_embedding));
  for (int j = 0; j < cfg_.num_layers; ++j) {
    const int s = skip_source(j);
    const Var* skip = s >= 0 ? &out.activations[static_cast<size_t>(s)] : nullptr;
    Var next = block(j, out.activations.back(), skip);
    out.activations.push_back(std::move(next));
  }
  out.eps_tokens = head(out.activations.back());
  return out;
}

Tensor UVitModel::predict(const Tensor& xt, std::span<const int> t, std::span<const int64_t> labels) const {
  return to_image(forward(xt, t, labels).eps_tokens);
}

}  // namespace duodiff
