#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "duodiff/tensor.hpp"

namespace duodiff {

/// A named trainable tensor. Frozen parameters enter graphs as constants.
class Parameter {
 public:
  Parameter(std::string name, Tensor value) : name_(std::move(name)), value_(std::move(value)) {}

  const std::string& name() const { return name_; }
  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }
  const Shape& shape() const { return value_.shape(); }
  bool trainable() const { return trainable_; }
  void set_trainable(bool on) { trainable_ = on; }

 private:
  std::string name_;
  Tensor value_;
  bool trainable_ = true;
};

/// Owns parameters with stable addresses, in registration order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Tensor value);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  size_t size() const { return params_.size(); }
  int64_t element_count() const;
  void set_trainable(bool on);

 private:
  std::deque<Parameter> params_;
};

class GradSink;

struct Node {
  using BackwardFn = std::function<void(const Node& self, const Tensor& grad_out, GradSink& sink)>;

  Tensor value;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  Parameter* param = nullptr;
  bool requires_grad = false;
  const char* op = "leaf";
};

/// Handle to a value in the (possibly recorded) computation.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t dim(int axis) const { return node_->value.dim(axis); }
  int rank() const { return node_->value.rank(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable ops. Constructing a Tape makes it the
/// active recorder for the current thread until it is destroyed; with no
/// active tape, ops evaluate without recording (inference mode).
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::shared_ptr<Node> node) { nodes_.push_back(std::move(node)); }
  const std::vector<std::shared_ptr<Node>>& nodes() const { return nodes_; }
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
  Tape* previous_;
};

/// Accumulation targets handed to an op's backward function.
class GradSink {
 public:
  GradSink(const Node& node, std::unordered_map<const Node*, Tensor>& grads) : node_(node), grads_(grads) {}
  /// Gradient buffer for input `k`, or nullptr if that input needs none.
  Tensor* grad(size_t k);

 private:
  const Node& node_;
  std::unordered_map<const Node*, Tensor>& grads_;
};

/// Parameter gradients produced by one backward pass.
class Gradients {
 public:
  /// Gradient of `p`; zeros when `p` did not take part in the loss.
  Tensor of(const Parameter& p) const;
  bool contains(const Parameter& p) const { return grads_.count(&p) != 0; }
  const std::unordered_map<const Parameter*, Tensor>& map() const { return grads_; }

 private:
  friend Gradients backward(const Tape&, const Var&);
  std::unordered_map<const Parameter*, Tensor> grads_;
};

/// Reverse-mode sweep over `tape` from scalar `loss`. Does not mutate the
/// tape, so repeated calls return identical gradients.
Gradients backward(const Tape& tape, const Var& loss);

// Leaves.
Var constant(Tensor value);
Var param(Parameter& p);
Var detach(const Var& v);

// Differentiable ops. Binary elementwise ops accept either equal shapes or a
// right operand whose shape is a suffix of the left operand's shape.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var concat(std::span<const Var> parts, int axis);
std::vector<Var> split(const Var& a, int axis, std::span<const int64_t> sizes);
Var transpose(const Var& a, int axis0, int axis1);
Var reshape(const Var& a, Shape shape);
Var sum(const Var& a);
Var mean(const Var& a);
/// Mean over one axis; the axis is removed.
Var mean(const Var& a, int axis);
Var layer_norm(const Var& x, float eps = 1e-5f);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);
Var softmax(const Var& x);
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var embedding(const Var& table, std::span<const int64_t> indices);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, float s) { return scale(a, s); }

}  // namespace duodiff
