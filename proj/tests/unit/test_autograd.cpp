#include <doctest.h>

#include <cmath>
#include <limits>

#include "duodiff/autograd.hpp"
#include "duodiff/optim.hpp"
#include "duodiff/rng.hpp"
#include "ref64.hpp"

using namespace duodiff;

TEST_CASE("softmax of equal logits is uniform") {
  const Var s = softmax(constant(Tensor(Shape{3}, 0.0f)));
  for (int i = 0; i < 3; ++i) CHECK(s.value()[i] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  const Var s = softmax(constant(Tensor(Shape{2, 3}, std::vector<float>{1000, 1001, 1002, -5, 0, 5})));
  for (int r = 0; r < 2; ++r) {
    double acc = 0;
    for (int i = 0; i < 3; ++i) acc += s.value()[r * 3 + i];
    CHECK(acc == doctest::Approx(1.0));
  }
  CHECK(s.value().all_finite());
}

TEST_CASE("layer_norm without affine gives zero mean and unit variance") {
  Rng rng(1);
  Tensor x = rng.normal_tensor({4, 32});
  for (float& v : x.data()) v = 3.0f * v + 7.0f;
  const Var y = layer_norm(constant(x));
  for (int r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (int i = 0; i < 32; ++i) m += y.value()[r * 32 + i];
    m /= 32;
    for (int i = 0; i < 32; ++i) v += std::pow(y.value()[r * 32 + i] - m, 2);
    v /= 32;
    CHECK(std::fabs(m) < 1e-5);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("matmul by identity returns the operand") {
  Rng rng(2);
  const Tensor a = rng.normal_tensor({3, 3});
  Tensor eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 4] = 1.0f;
  CHECK(bitwise_equal(matmul(constant(eye), constant(a)).value(), a));
}

TEST_CASE("matmul broadcasts a rank-2 right operand over the batch") {
  Rng rng(3);
  const Tensor a = rng.normal_tensor({2, 3, 4});
  const Tensor w = rng.normal_tensor({4, 5});
  const Tensor y = matmul(constant(a), constant(w)).value();
  CHECK(y.shape() == Shape{2, 3, 5});
  const Tensor y1 = matmul(constant(row(a, 1)), constant(w)).value();
  for (int i = 0; i < 15; ++i) CHECK(y[15 + i] == y1[i]);
}

TEST_CASE("shape mismatches raise ShapeError") {
  const Var a = constant(Tensor(Shape{2, 3}));
  const Var b = constant(Tensor(Shape{4, 2}));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(reshape(a, {5}), ShapeError);
  CHECK_THROWS_AS(embedding(a, std::vector<int64_t>{2}), ShapeError);
  CHECK_THROWS_AS(layer_norm(constant(Tensor::scalar(1.0f))), ShapeError);
}

TEST_CASE("gradient of sum(p) is ones and of sum(p*p) is 2p") {
  ParameterStore st;
  Rng rng(4);
  Parameter& p = st.add("p", rng.normal_tensor({2, 3}));
  {
    Tape tape;
    const Gradients g = backward(tape, sum(param(p)));
    const Tensor gp = g.of(p);
    for (float v : gp.data()) CHECK(v == 1.0f);
  }
  {
    Tape tape;
    const Var v = param(p);
    const Gradients g = backward(tape, sum(v * v));
    for (int i = 0; i < 6; ++i) CHECK(g.of(p)[i] == doctest::Approx(2.0f * p.value()[i]));
  }
}

TEST_CASE("backward is repeatable on the same tape") {
  ParameterStore st;
  Rng rng(5);
  Parameter& w = st.add("w", rng.normal_tensor({3, 3}));
  Tape tape;
  const Var x = constant(rng.normal_tensor({2, 3}));
  const Var loss = mean(gelu(matmul(x, param(w))));
  const Gradients g1 = backward(tape, loss);
  const Gradients g2 = backward(tape, loss);
  CHECK(bitwise_equal(g1.of(w), g2.of(w)));
}

TEST_CASE("backward rejects a non-scalar loss") {
  ParameterStore st;
  Parameter& p = st.add("p", Tensor(Shape{3}, 1.0f));
  Tape tape;
  CHECK_THROWS_AS(backward(tape, param(p) * 2.0f), ShapeError);
}

TEST_CASE("non-finite values in a recorded graph raise NumericError") {
  ParameterStore st;
  Parameter& p = st.add("p", Tensor(Shape{2}, 1.0f));
  Tape tape;
  Tensor bad(Shape{2});
  bad[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(add(param(p), constant(bad)), NumericError);
}

TEST_CASE("frozen parameters receive no gradient") {
  ParameterStore st;
  Parameter& a = st.add("a", Tensor(Shape{2}, 1.0f));
  Parameter& b = st.add("b", Tensor(Shape{2}, 2.0f));
  b.set_trainable(false);
  Tape tape;
  const Gradients g = backward(tape, sum(param(a) * param(b)));
  CHECK(g.contains(a));
  CHECK_FALSE(g.contains(b));
  CHECK(g.of(a)[0] == 2.0f);
}

TEST_CASE("two-layer perceptron gradients match double-precision finite differences") {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    ParameterStore st;
    Rng rng(100 + seed);
    Parameter& x = st.add("x", rng.normal_tensor({4, 6}));
    Parameter& w1 = st.add("w1", rng.normal_tensor({6, 8}));
    Parameter& b1 = st.add("b1", rng.normal_tensor({8}));
    Parameter& w2 = st.add("w2", rng.normal_tensor({8, 3}));
    Parameter& b2 = st.add("b2", rng.normal_tensor({3}));
    const auto rep = ref64::check_gradients(
        st,
        [&] { return sigmoid(add(matmul(gelu(add(matmul(param(x), param(w1)), param(b1))), param(w2)), param(b2))); },
        [](const ref64::Params& P) {
          const auto h = ref64::gelu(ref64::linear(P.at("x"), 4, 6, 8, P.at("w1"), P.at("b1")));
          return ref64::sigmoid(ref64::linear(h, 4, 8, 3, P.at("w2"), P.at("b2")));
        },
        seed);
    CHECK(rep.max_rel < 1e-3);
    CHECK(rep.forward_err < 1e-4);
  }
}

TEST_CASE("adamw leaves parameters unchanged for zero gradient without decay") {
  ParameterStore st;
  Rng rng(6);
  Parameter& p = st.add("p", rng.normal_tensor({4}));
  const Tensor before = p.value();
  AdamW opt(AdamWOptions{.lr = 0.1f, .weight_decay = 0.0f, .warmup_steps = 0});
  for (int k = 0; k < 3; ++k) {
    Tape tape;
    const Gradients g = backward(tape, sum(param(p) * 0.0f));
    auto params = st.all();
    opt.step(params, g);
  }
  CHECK(bitwise_equal(p.value(), before));
  CHECK(opt.step_count() == 3);
}

TEST_CASE("adamw single step from p=1 with unit gradient") {
  ParameterStore st;
  Parameter& p = st.add("p", Tensor(Shape{1}, 1.0f));
  AdamW opt(AdamWOptions{.lr = 0.1f, .weight_decay = 0.0f, .beta1 = 0.0f, .beta2 = 0.0f, .warmup_steps = 0});
  Tape tape;
  const Gradients g = backward(tape, sum(param(p)));
  auto params = st.all();
  opt.step(params, g);
  CHECK(p.value()[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(opt.first_moment().at("p").shape() == p.shape());
  CHECK(opt.second_moment().at("p").shape() == p.shape());
}

TEST_CASE("adamw warmup is linear") {
  AdamW opt(AdamWOptions{.lr = 2e-4f, .warmup_steps = 1500});
  CHECK(opt.effective_lr(750) == doctest::Approx(1e-4));
  CHECK(opt.effective_lr(1500) == doctest::Approx(2e-4));
  CHECK(opt.effective_lr(5000) == doctest::Approx(2e-4));
}

TEST_CASE("adamw aborts on a non-finite gradient without touching state") {
  ParameterStore st;
  Parameter& p = st.add("p", Tensor(Shape{2}, 1.0f));
  AdamW opt(AdamWOptions{.lr = 0.1f});
  auto params = st.all();
  {
    Tape tape;
    opt.step(params, backward(tape, sum(param(p))));
  }
  const Tensor value = p.value();
  const Tensor m = opt.first_moment().at("p");
  // Finite forward values whose chained derivative overflows.
  Parameter& q = st.add("q", Tensor(Shape{1}, 1e-30f));
  params = st.all();
  Tape tape;
  const Gradients g = backward(tape, sum(param(p)) + sum(scale(scale(param(q), 1e30f), 1e30f)));
  CHECK_FALSE(g.of(q).all_finite());
  CHECK_THROWS_AS(opt.step(params, g), NumericError);
  CHECK(bitwise_equal(p.value(), value));
  CHECK(bitwise_equal(opt.first_moment().at("p"), m));
  CHECK(opt.step_count() == 1);
}
