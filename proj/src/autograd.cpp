#include "duodiff/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "duodiff/kernels.hpp"

namespace duodiff {

// ---------------------------------------------------------------- parameters

Parameter& ParameterStore::add(std::string name, Tensor value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  return params_.emplace_back(std::move(name), std::move(value));
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name() == name) return &p;
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name() == name) return &p;
  return nullptr;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

int64_t ParameterStore::element_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value().size();
  return n;
}

void ParameterStore::set_trainable(bool on) {
  for (auto& p : params_) p.set_trainable(on);
}

// ---------------------------------------------------------------- tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }
Tape::~Tape() { g_active_tape = previous_; }
Tape* Tape::active() { return g_active_tape; }

Tensor* GradSink::grad(size_t k) {
  const auto& input = node_.inputs[k];
  if (!input->requires_grad) return nullptr;
  auto [it, inserted] = grads_.try_emplace(input.get());
  if (inserted) it->second = Tensor(input->value.shape());
  return &it->second;
}

Tensor Gradients::of(const Parameter& p) const {
  auto it = grads_.find(&p);
  if (it == grads_.end()) return Tensor(p.shape());
  return it->second;
}

Gradients backward(const Tape& tape, const Var& loss) {
  if (!loss.node() || loss.value().size() != 1)
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.node() ? shape_str(loss.shape()) : std::string("<null>")));
  Gradients result;
  if (!loss.requires_grad()) return result;

  std::unordered_map<const Node*, Tensor> grads;
  grads.emplace(loss.node().get(), Tensor(loss.shape(), 1.0f));
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const Node* node = it->get();
    auto g = grads.find(node);
    if (g == grads.end()) continue;
    GradSink sink(*node, grads);
    node->backward(*node, g->second, sink);
    grads.erase(node);
  }
  for (auto& [node, grad] : grads) {
    if (!node->param) continue;
    auto [slot, inserted] = result.grads_.try_emplace(node->param);
    if (inserted) {
      slot->second = std::move(grad);
    } else {
      for (int64_t i = 0; i < grad.size(); ++i) slot->second[i] += grad[i];
    }
  }
  return result;
}

// ---------------------------------------------------------------- helpers

namespace {

Var make_result(Tensor value, const char* op, std::initializer_list<Var> inputs, Node::BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->op = op;
  Tape* tape = Tape::active();
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (tape && needs_grad) {
    if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite value in output");
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(fn);
  }
  node->value = std::move(value);
  if (node->requires_grad) tape->record(node);
  return Var(std::move(node));
}

Var make_result_n(Tensor value, const char* op, std::span<const Var> inputs, Node::BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->op = op;
  Tape* tape = Tape::active();
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (tape && needs_grad) {
    if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite value in output");
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(fn);
  }
  node->value = std::move(value);
  if (node->requires_grad) tape->record(node);
  return Var(std::move(node));
}

int norm_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void check_binary(const char* op, const Var& a, const Var& b) {
  if (!is_suffix(a.shape(), b.shape())) throw ShapeError(op, {a.shape(), b.shape()});
}

// Copies `in` (shape `shape`) into `out` with axes `a0` and `a1` swapped.
void swap_axes_copy(const float* in, const Shape& shape, int a0, int a1, float* out) {
  const int rank = static_cast<int>(shape.size());
  Shape out_shape = shape;
  std::swap(out_shape[static_cast<size_t>(a0)], out_shape[static_cast<size_t>(a1)]);
  std::vector<int64_t> in_strides(static_cast<size_t>(rank), 1);
  for (int i = rank - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * shape[static_cast<size_t>(i + 1)];
  std::vector<int64_t> strides = in_strides;  // strides of `in` indexed by output axis
  std::swap(strides[static_cast<size_t>(a0)], strides[static_cast<size_t>(a1)]);

  const int64_t total = numel(shape);
  if (total == 0) return;
  const int64_t inner = out_shape.back();
  const int64_t inner_stride = strides.back();
  std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
  int64_t o = 0;
  while (o < total) {
    int64_t base = 0;
    for (int i = 0; i < rank - 1; ++i) base += idx[static_cast<size_t>(i)] * strides[static_cast<size_t>(i)];
    for (int64_t j = 0; j < inner; ++j) out[o++] = in[base + j * inner_stride];
    for (int i = rank - 2; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
}

Var slice(const Var& a, int axis, int64_t start, int64_t len) {
  const Shape& s = a.shape();
  const int64_t outer = numel(Shape(s.begin(), s.begin() + axis));
  const int64_t inner = numel(Shape(s.begin() + axis + 1, s.end()));
  const int64_t full = s[static_cast<size_t>(axis)];
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(a.value().ptr() + (o * full + start) * inner, len * inner, out.ptr() + o * len * inner);
  return make_result(std::move(out), "split", {a},
                     [=](const Node&, const Tensor& g, GradSink& sink) {
                       if (Tensor* ga = sink.grad(0)) {
                         for (int64_t o = 0; o < outer; ++o) {
                           float* dst = ga->ptr() + (o * full + start) * inner;
                           const float* src = g.ptr() + o * len * inner;
                           for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

}  // namespace

// ---------------------------------------------------------------- leaves

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var param(Parameter& p) {
  auto node = std::make_shared<Node>();
  node->value = p.value();
  node->param = &p;
  node->requires_grad = p.trainable() && Tape::active() != nullptr;
  return Var(std::move(node));
}

Var detach(const Var& v) { return constant(v.value()); }

// ---------------------------------------------------------------- ops

Var matmul(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() == 2 && !as.empty() && as.back() == bs[0]) {
    const int64_t K = bs[0], N = bs[1];
    const int64_t M = a.value().size() / std::max<int64_t>(K, 1);
    Shape out_shape(as.begin(), as.end() - 1);
    out_shape.push_back(N);
    Tensor out(out_shape);
    kernels::gemm_nn(M, N, K, a.value().ptr(), b.value().ptr(), out.ptr());
    return make_result(std::move(out), "matmul", {a, b},
                       [M, N, K](const Node& self, const Tensor& g, GradSink& sink) {
                         const Tensor& av = self.inputs[0]->value;
                         const Tensor& bv = self.inputs[1]->value;
                         if (Tensor* ga = sink.grad(0)) kernels::gemm_nt_acc(M, K, N, g.ptr(), bv.ptr(), ga->ptr());
                         if (Tensor* gb = sink.grad(1)) kernels::gemm_tn_acc(M, N, K, av.ptr(), g.ptr(), gb->ptr());
                       });
  }
  if (as.size() == 3 && bs.size() == 3 && as[0] == bs[0] && as[2] == bs[1]) {
    const int64_t B = as[0], M = as[1], K = as[2], N = bs[2];
    Tensor out(Shape{B, M, N});
    for (int64_t i = 0; i < B; ++i)
      kernels::gemm_nn(M, N, K, a.value().ptr() + i * M * K, b.value().ptr() + i * K * N, out.ptr() + i * M * N);
    return make_result(std::move(out), "matmul", {a, b},
                       [B, M, N, K](const Node& self, const Tensor& g, GradSink& sink) {
                         const Tensor& av = self.inputs[0]->value;
                         const Tensor& bv = self.inputs[1]->value;
                         Tensor* ga = sink.grad(0);
                         Tensor* gb = sink.grad(1);
                         for (int64_t i = 0; i < B; ++i) {
                           const float* gi = g.ptr() + i * M * N;
                           if (ga) kernels::gemm_nt_acc(M, K, N, gi, bv.ptr() + i * K * N, ga->ptr() + i * M * K);
                           if (gb) kernels::gemm_tn_acc(M, N, K, av.ptr() + i * M * K, gi, gb->ptr() + i * K * N);
                         }
                       });
  }
  throw ShapeError("matmul", {as, bs});
}

Var add(const Var& a, const Var& b) {
  check_binary("add", a, b);
  Tensor out = a.value();
  const int64_t nb = b.value().size();
  const float* bp = b.value().ptr();
  for (int64_t i = 0; i < out.size(); i += nb)
    for (int64_t j = 0; j < nb; ++j) out[i + j] += bp[j];
  return make_result(std::move(out), "add", {a, b}, [nb](const Node&, const Tensor& g, GradSink& sink) {
    if (Tensor* ga = sink.grad(0))
      for (int64_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = sink.grad(1))
      for (int64_t i = 0; i < g.size(); i += nb)
        for (int64_t j = 0; j < nb; ++j) (*gb)[j] += g[i + j];
  });
}

Var sub(const Var& a, const Var& b) {
  check_binary("sub", a, b);
  Tensor out = a.value();
  const int64_t nb = b.value().size();
  const float* bp = b.value().ptr();
  for (int64_t i = 0; i < out.size(); i += nb)
    for (int64_t j = 0; j < nb; ++j) out[i + j] -= bp[j];
  return make_result(std::move(out), "sub", {a, b}, [nb](const Node&, const Tensor& g, GradSink& sink) {
    if (Tensor* ga = sink.grad(0))
      for (int64_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = sink.grad(1))
      for (int64_t i = 0; i < g.size(); i += nb)
        for (int64_t j = 0; j < nb; ++j) (*gb)[j] -= g[i + j];
  });
}

Var mul(const Var& a, const Var& b) {
  check_binary("mul", a, b);
  Tensor out = a.value();
  const int64_t nb = b.value().size();
  const float* bp = b.value().ptr();
  for (int64_t i = 0; i < out.size(); i += nb)
    for (int64_t j = 0; j < nb; ++j) out[i + j] *= bp[j];
  return make_result(std::move(out), "mul", {a, b}, [nb](const Node& self, const Tensor& g, GradSink& sink) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (Tensor* ga = sink.grad(0))
      for (int64_t i = 0; i < g.size(); i += nb)
        for (int64_t j = 0; j < nb; ++j) (*ga)[i + j] += g[i + j] * bv[j];
    if (Tensor* gb = sink.grad(1))
      for (int64_t i = 0; i < g.size(); i += nb)
        for (int64_t j = 0; j < nb; ++j) (*gb)[j] += g[i + j] * av[i + j];
  });
}

Var scale(const Var& a, float s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return make_result(std::move(out), "scale", {a}, [s](const Node&, const Tensor& g, GradSink& sink) {
    if (Tensor* ga = sink.grad(0))
      for (int64_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  axis = norm_axis(axis, static_cast<int>(s0.size()), "concat");
  std::vector<int64_t> widths;
  Shape out_shape = s0;
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != s0.size()) throw ShapeError("concat", {s0, s});
    for (size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != s0[i]) throw ShapeError("concat", {s0, s});
    widths.push_back(s[static_cast<size_t>(axis)]);
    out_shape[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
  }
  const int64_t outer = numel(Shape(s0.begin(), s0.begin() + axis));
  const int64_t inner = numel(Shape(s0.begin() + axis + 1, s0.end()));
  const int64_t total = out_shape[static_cast<size_t>(axis)];
  Tensor out(out_shape);
  int64_t offset = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const int64_t w = widths[k];
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(parts[k].value().ptr() + o * w * inner, w * inner, out.ptr() + (o * total + offset) * inner);
    offset += w;
  }
  return make_result_n(std::move(out), "concat", parts,
                       [widths, outer, inner, total](const Node&, const Tensor& g, GradSink& sink) {
                         int64_t off = 0;
                         for (size_t k = 0; k < widths.size(); ++k) {
                           const int64_t w = widths[k];
                           if (Tensor* gk = sink.grad(k)) {
                             for (int64_t o = 0; o < outer; ++o) {
                               const float* src = g.ptr() + (o * total + off) * inner;
                               float* dst = gk->ptr() + o * w * inner;
                               for (int64_t i = 0; i < w * inner; ++i) dst[i] += src[i];
                             }
                           }
                           off += w;
                         }
                       });
}

std::vector<Var> split(const Var& a, int axis, std::span<const int64_t> sizes) {
  axis = norm_axis(axis, a.rank(), "split");
  const int64_t total = std::accumulate(sizes.begin(), sizes.end(), int64_t{0});
  if (total != a.dim(axis)) throw ShapeError("split: sizes do not cover axis of " + shape_str(a.shape()));
  std::vector<Var> out;
  int64_t start = 0;
  for (auto len : sizes) {
    out.push_back(slice(a, axis, start, len));
    start += len;
  }
  return out;
}

Var transpose(const Var& a, int axis0, int axis1) {
  const int rank = a.rank();
  axis0 = norm_axis(axis0, rank, "transpose");
  axis1 = norm_axis(axis1, rank, "transpose");
  Shape out_shape = a.shape();
  std::swap(out_shape[static_cast<size_t>(axis0)], out_shape[static_cast<size_t>(axis1)]);
  Tensor out(out_shape);
  swap_axes_copy(a.value().ptr(), a.shape(), axis0, axis1, out.ptr());
  return make_result(std::move(out), "transpose", {a},
                     [axis0, axis1, out_shape](const Node&, const Tensor& g, GradSink& sink) {
                       if (Tensor* ga = sink.grad(0)) {
                         Tensor tmp(ga->shape());
                         swap_axes_copy(g.ptr(), out_shape, axis0, axis1, tmp.ptr());
                         for (int64_t i = 0; i < tmp.size(); ++i) (*ga)[i] += tmp[i];
                       }
                     });
}

Var reshape(const Var& a, Shape shape) {
  if (numel(shape) != a.value().size()) throw ShapeError("reshape", {a.shape(), shape});
  return make_result(a.value().reshaped(std::move(shape)), "reshape", {a},
                     [](const Node&, const Tensor& g, GradSink& sink) {
                       if (Tensor* ga = sink.grad(0))
                         for (int64_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                     });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  return make_result(Tensor::scalar(static_cast<float>(acc)), "sum", {a},
                     [](const Node&, const Tensor& g, GradSink& sink) {
                       if (Tensor* ga = sink.grad(0))
                         for (auto& v : ga->data()) v += g[0];
                     });
}

Var mean(const Var& a) {
  const int64_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty input");
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  return make_result(Tensor::scalar(static_cast<float>(acc / static_cast<double>(n))), "mean", {a},
                     [n](const Node&, const Tensor& g, GradSink& sink) {
                       if (Tensor* ga = sink.grad(0)) {
                         const float d = g[0] / static_cast<float>(n);
                         for (auto& v : ga->data()) v += d;
                       }
                     });
}

Var mean(const Var& a, int axis) {
  axis = norm_axis(axis, a.rank(), "mean");
  const Shape& s = a.shape();
  const int64_t outer = numel(Shape(s.begin(), s.begin() + axis));
  const int64_t n = s[static_cast<size_t>(axis)];
  const int64_t inner = numel(Shape(s.begin() + axis + 1, s.end()));
  if (n == 0) throw ShapeError("mean: empty axis in " + shape_str(s));
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + axis);
  Tensor out(out_shape);
  const float inv = 1.0f / static_cast<float>(n);
  const float* ap = a.value().ptr();
  for (int64_t o = 0; o < outer; ++o) {
    float* dst = out.ptr() + o * inner;
    for (int64_t k = 0; k < n; ++k) {
      const float* src = ap + (o * n + k) * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (int64_t i = 0; i < inner; ++i) dst[i] *= inv;
  }
  return make_result(std::move(out), "mean", {a}, [outer, n, inner, inv](const Node&, const Tensor& g, GradSink& sink) {
    if (Tensor* ga = sink.grad(0))
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < n; ++k)
          for (int64_t i = 0; i < inner; ++i) (*ga)[(o * n + k) * inner + i] += g[o * inner + i] * inv;
  });
}

namespace {

// Normalizes rows of length d; returns xhat and per-row reciprocal std.
void normalize_rows(const Tensor& x, int64_t d, float eps, Tensor& xhat, std::vector<float>& rstd) {
  const int64_t rows = x.size() / d;
  xhat = Tensor(x.shape());
  rstd.assign(static_cast<size_t>(rows), 0.0f);
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x.ptr() + r * d;
    float mu = 0.0f;
    for (int64_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<float>(d);
    float var = 0.0f;
    for (int64_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<float>(d);
    const float rs = 1.0f / std::sqrt(var + eps);
    rstd[static_cast<size_t>(r)] = rs;
    float* yr = xhat.ptr() + r * d;
    for (int64_t i = 0; i < d; ++i) yr[i] = (xr[i] - mu) * rs;
  }
}

// dx = rstd * (gy - mean(gy) - xhat * mean(gy * xhat)), accumulated into gx.
void normalize_rows_backward(const float* gy, const Tensor& xhat, const std::vector<float>& rstd, int64_t d,
                             float* gx) {
  const int64_t rows = xhat.size() / d;
  for (int64_t r = 0; r < rows; ++r) {
    const float* g = gy + r * d;
    const float* xh = xhat.ptr() + r * d;
    float mg = 0.0f, mgx = 0.0f;
    for (int64_t i = 0; i < d; ++i) {
      mg += g[i];
      mgx += g[i] * xh[i];
    }
    mg /= static_cast<float>(d);
    mgx /= static_cast<float>(d);
    const float rs = rstd[static_cast<size_t>(r)];
    float* out = gx + r * d;
    for (int64_t i = 0; i < d; ++i) out[i] += rs * (g[i] - mg - xh[i] * mgx);
  }
}

}  // namespace

Var layer_norm(const Var& x, float eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const int64_t d = x.dim(-1);
  Tensor xhat;
  std::vector<float> rstd;
  normalize_rows(x.value(), d, eps, xhat, rstd);
  Tensor out = xhat;
  return make_result(std::move(out), "layer_norm", {x},
                     [d, xhat = std::move(xhat), rstd = std::move(rstd)](const Node&, const Tensor& g, GradSink& sink) {
                       if (Tensor* gx = sink.grad(0)) normalize_rows_backward(g.ptr(), xhat, rstd, d, gx->ptr());
                     });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const int64_t d = x.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    throw ShapeError("layer_norm", {x.shape(), gamma.shape(), beta.shape()});
  Tensor xhat;
  std::vector<float> rstd;
  normalize_rows(x.value(), d, eps, xhat, rstd);
  Tensor out(x.shape());
  const float* gp = gamma.value().ptr();
  const float* bp = beta.value().ptr();
  for (int64_t i = 0; i < out.size(); i += d)
    for (int64_t j = 0; j < d; ++j) out[i + j] = xhat[i + j] * gp[j] + bp[j];
  return make_result(std::move(out), "layer_norm", {x, gamma, beta},
                     [d, xhat = std::move(xhat), rstd = std::move(rstd)](const Node& self, const Tensor& g, GradSink& sink) {
                       const Tensor& gam = self.inputs[1]->value;
                       if (Tensor* gg = sink.grad(1))
                         for (int64_t i = 0; i < g.size(); i += d)
                           for (int64_t j = 0; j < d; ++j) (*gg)[j] += g[i + j] * xhat[i + j];
                       if (Tensor* gb = sink.grad(2))
                         for (int64_t i = 0; i < g.size(); i += d)
                           for (int64_t j = 0; j < d; ++j) (*gb)[j] += g[i + j];
                       if (Tensor* gx = sink.grad(0)) {
                         Tensor gxhat(g.shape());
                         for (int64_t i = 0; i < g.size(); i += d)
                           for (int64_t j = 0; j < d; ++j) gxhat[i + j] = g[i + j] * gam[j];
                         normalize_rows_backward(gxhat.ptr(), xhat, rstd, d, gx->ptr());
                       }
                     });
}

Var softmax(const Var& x) {
  if (x.rank() < 1) throw ShapeError("softmax: scalar input");
  const int64_t d = x.dim(-1);
  Tensor out(x.shape());
  const float* xp = x.value().ptr();
  for (int64_t r = 0; r < out.size(); r += d) {
    float mx = xp[r];
    for (int64_t i = 1; i < d; ++i) mx = std::max(mx, xp[r + i]);
    float z = 0.0f;
    for (int64_t i = 0; i < d; ++i) {
      out[r + i] = std::exp(xp[r + i] - mx);
      z += out[r + i];
    }
    const float inv = 1.0f / z;
    for (int64_t i = 0; i < d; ++i) out[r + i] *= inv;
  }
  Tensor y = out;
  return make_result(std::move(out), "softmax", {x}, [d, y = std::move(y)](const Node&, const Tensor& g, GradSink& sink) {
    if (Tensor* gx = sink.grad(0))
      for (int64_t r = 0; r < g.size(); r += d) {
        float dot = 0.0f;
        for (int64_t i = 0; i < d; ++i) dot += g[r + i] * y[r + i];
        for (int64_t i = 0; i < d; ++i) (*gx)[r + i] += y[r + i] * (g[r + i] - dot);
      }
  });
}

Var gelu(const Var& x) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  Tensor out(x.shape());
  const float* xp = x.value().ptr();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = 0.5f * xp[i] * (1.0f + std::erf(xp[i] * kInvSqrt2));
  return make_result(std::move(out), "gelu", {x}, [](const Node& self, const Tensor& g, GradSink& sink) {
    constexpr float kInvSqrt2Pi = 0.39894228040143268f;
    constexpr float kInvSqrt2b = 0.70710678118654752f;
    if (Tensor* gx = sink.grad(0)) {
      const Tensor& xv = self.inputs[0]->value;
      for (int64_t i = 0; i < g.size(); ++i) {
        const float v = xv[i];
        const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2b));
        const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
        (*gx)[i] += g[i] * (cdf + v * pdf);
      }
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  const float* xp = x.value().ptr();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = 1.0f / (1.0f + std::exp(-xp[i]));
  Tensor y = out;
  return make_result(std::move(out), "sigmoid", {x}, [y = std::move(y)](const Node&, const Tensor& g, GradSink& sink) {
    if (Tensor* gx = sink.grad(0))
      for (int64_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (1.0f - y[i]);
  });
}

Var embedding(const Var& table, std::span<const int64_t> indices) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  const int64_t rows = table.dim(0), d = table.dim(1);
  std::vector<int64_t> idx(indices.begin(), indices.end());
  Tensor out(Shape{static_cast<int64_t>(idx.size()), d});
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= rows)
      throw ShapeError("embedding: index " + std::to_string(idx[r]) + " out of range for table " +
                       shape_str(table.shape()));
    std::copy_n(table.value().ptr() + idx[r] * d, d, out.ptr() + static_cast<int64_t>(r) * d);
  }
  return make_result(std::move(out), "embedding", {table},
                     [idx = std::move(idx), d](const Node&, const Tensor& g, GradSink& sink) {
                       if (Tensor* gt = sink.grad(0))
                         for (size_t r = 0; r < idx.size(); ++r)
                           for (int64_t j = 0; j < d; ++j) (*gt)[idx[r] * d + j] += g[static_cast<int64_t>(r) * d + j];
                     });
}

}  // namespace duodiff
