#include <doctest.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "common.hpp"
#include "duodiff/adadiff.hpp"
#include "ref64.hpp"

using namespace duodiff;
using testutil::tiny_config;

namespace {

AdaDiffModel random_model(uint64_t seed, int layers = 3, int classes = 0) {
  UVitModel m(tiny_config(layers, classes), seed);
  ref64::randomize(m.parameters(), seed, 0.1);
  AdaDiffModel a(std::move(m), seed + 1);
  ref64::randomize(a.exit_parameters(), seed + 2, 0.2);
  return a;
}

Var scalar_var(float v) { return constant(Tensor(Shape{1}, std::vector<float>{v})); }

}  // namespace

TEST_CASE("uem with zero weights outputs one half") {
  AdaDiffModel a(UVitModel(tiny_config(), 1), 2);
  for (Parameter* p : a.exit_parameters().all()) p->value().fill(0.0f);
  Rng rng(3);
  const Tensor x = rng.normal_tensor({4, 3, 8, 8});
  const auto t = testutil::random_t(rng, 4);
  const DenoiserOutput out = a.backbone().forward(x, t);
  for (int i = 0; i < a.depth(); ++i) {
    const Tensor u = a.uem(i, out.activations[static_cast<size_t>(i)], out.time_embedding).value();
    for (float v : u.data()) CHECK(v == 0.5f);
  }
}

TEST_CASE("uem output is in [0, 1] and increases with its bias") {
  AdaDiffModel a = random_model(4);
  Rng rng(5);
  const Tensor x = rng.normal_tensor({64, 3, 8, 8});
  for (Parameter* p : a.exit_parameters().all()) p->value().fill(0.0f);
  ref64::randomize(a.exit_parameters(), 6, 3.0);
  const auto t = testutil::random_t(rng, 64);
  const DenoiserOutput out = a.backbone().forward(x, t);
  for (int i = 0; i < a.depth(); ++i) {
    const Tensor u = a.uem(i, out.activations[static_cast<size_t>(i)], out.time_embedding).value();
    for (float v : u.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  Parameter* bias = a.exit_parameters().find("uems.0.bias");
  REQUIRE(bias);
  bias->value()[0] = -1.0f;
  const Tensor lo = a.uem(0, out.activations[0], out.time_embedding).value();
  bias->value()[0] = 1.0f;
  const Tensor hi = a.uem(0, out.activations[0], out.time_embedding).value();
  for (int64_t r = 0; r < lo.size(); ++r) CHECK(hi[r] > lo[r]);
}

TEST_CASE("pseudo_uncertainty examples") {
  Rng rng(7);
  const Tensor e = rng.normal_tensor({3, 5});
  const Tensor u0 = pseudo_uncertainty(e, e);
  for (float v : u0.data()) CHECK(v == 0.0f);
  Tensor shifted = e;
  for (int64_t i = 0; i < 5; ++i) shifted[i] += 1.0f;
  for (int64_t i = 5; i < 10; ++i) shifted[i] -= 1.0f;
  for (int64_t i = 10; i < 15; ++i) shifted[i] += 1e6f;
  const Tensor u = pseudo_uncertainty(shifted, e);
  CHECK(u[0] == doctest::Approx(0.76159).epsilon(1e-5));
  CHECK(u[1] == doctest::Approx(0.76159).epsilon(1e-5));
  CHECK(u[2] <= 1.0f);
  CHECK_THROWS_AS(pseudo_uncertainty(e, rng.normal_tensor({3, 4})), ShapeError);
}

TEST_CASE("loss_u examples") {
  const std::vector<Var> u{scalar_var(0.5f)};
  const std::vector<Tensor> uh{Tensor(Shape{1})};
  CHECK(loss_u(u, uh).value().item() == doctest::Approx(0.25));

  Rng rng(8);
  std::vector<Var> us;
  std::vector<Tensor> hats;
  for (int i = 0; i < 4; ++i) {
    Tensor a = rng.normal_tensor({6});
    us.push_back(constant(a));
    hats.push_back(rng.normal_tensor({6}));
  }
  const float forward = loss_u(us, hats).value().item();
  std::vector<Var> rus(us.rbegin(), us.rend());
  std::vector<Tensor> rhats(hats.rbegin(), hats.rend());
  CHECK(loss_u(rus, rhats).value().item() == doctest::Approx(forward).epsilon(1e-6));
  std::vector<Tensor> same;
  for (const Var& v : us) same.push_back(v.value());
  CHECK(loss_u(us, same).value().item() == 0.0f);
  CHECK_THROWS_AS(loss_u(us, std::vector<Tensor>(hats.begin(), hats.begin() + 2)), std::invalid_argument);
}

TEST_CASE("loss_ual examples") {
  const Tensor eps(Shape{1, 1}, std::vector<float>{0.0f});
  const std::vector<Var> pred{constant(Tensor(Shape{1, 1}, std::vector<float>{std::sqrt(2.0f)}))};
  const std::vector<Var> half{scalar_var(0.5f)};
  CHECK(loss_ual(pred, eps, half).value().item() == doctest::Approx(1.0).epsilon(1e-6));

  Rng rng(9);
  const Tensor target = rng.normal_tensor({4, 3, 5});
  std::vector<Var> preds, ones, zeros;
  double plain = 0;
  for (int i = 0; i < 3; ++i) {
    const Tensor p = rng.normal_tensor({4, 3, 5});
    preds.push_back(constant(p));
    ones.push_back(constant(Tensor(Shape{4}, 1.0f)));
    zeros.push_back(constant(Tensor(Shape{4}, 0.0f)));
    double s = 0;
    for (int64_t k = 0; k < p.size(); ++k) s += std::pow(p[k] - target[k], 2);
    plain += s / 15.0 / 4.0;
  }
  CHECK(loss_ual(preds, target, ones).value().item() == 0.0f);
  CHECK(loss_ual(preds, target, zeros).value().item() == doctest::Approx(plain).epsilon(1e-5));
}

TEST_CASE("loss_ual does not propagate into the uncertainty weights") {
  AdaDiffModel a = random_model(10);
  Rng rng(11);
  const Tensor x = rng.normal_tensor({4, 3, 8, 8});
  const Tensor eps = rng.normal_tensor({4, 3, 8, 8});
  const auto t = testutil::random_t(rng, 4);
  Tape tape;
  const AdaDiffLoss l = a.loss_all(x, t, {}, eps, AdaDiffLossWeights{.lambda = 0.0f, .beta = 1.0f});
  const Gradients g = backward(tape, l.total);
  for (int i = 0; i < a.depth(); ++i) {
    const Parameter* w = a.exit_parameters().find("uems." + std::to_string(i) + ".weight");
    REQUIRE(w);
    const Tensor gw = g.of(*w);
    for (float v : gw.data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("loss_all with zero weights is the simple loss") {
  AdaDiffModel a = random_model(12);
  Rng rng(13);
  const Tensor x = rng.normal_tensor({4, 3, 8, 8});
  const Tensor eps = rng.normal_tensor({4, 3, 8, 8});
  const auto t = testutil::random_t(rng, 4);
  const AdaDiffLoss l = a.loss_all(x, t, {}, eps, AdaDiffLossWeights{.lambda = 0.0f, .beta = 0.0f});
  const Tensor pred = a.backbone().predict(x, t);
  double mse = 0;
  for (int64_t k = 0; k < pred.size(); ++k) mse += std::pow(pred[k] - eps[k], 2);
  mse /= static_cast<double>(pred.size());
  CHECK(l.total.value().item() == doctest::Approx(mse).epsilon(1e-5));
  CHECK(l.simple == doctest::Approx(mse).epsilon(1e-5));
  const AdaDiffLoss d = a.loss_all(x, t, {}, eps);
  CHECK(d.total.value().item() == doctest::Approx(d.simple + d.u + d.ual).epsilon(1e-5));
  CHECK_THROWS_AS(a.loss_all(x, t, {}, eps, AdaDiffLossWeights{.lambda = -1.0f}), std::invalid_argument);
}

TEST_CASE("head-only training decreases the loss and leaves the backbone untouched") {
  DatasetSpec ds;
  ds.image_size = 8;
  ds.num_classes = 0;
  ds.count = 256;
  const ImageSet data = materialize(ds);
  UVitModel m(tiny_config(3), 14);
  ref64::randomize(m.parameters(), 15, 0.1);
  AdaDiffModel a(std::move(m), 16);
  std::vector<Tensor> before;
  for (const Parameter* p : a.backbone().parameters().all()) before.push_back(p->value());
  AdamW opt(AdamWOptions{.lr = 1e-3f, .warmup_steps = 20});
  TrainOptions o;
  o.steps = 500;
  o.batch = 16;
  o.log_every = 1;
  o.seed = 3;
  const auto log = train_adadiff(a, opt, data, make_schedule(), o);
  REQUIRE(log.size() == 500);
  auto avg = [&](size_t lo, size_t hi) {
    double s = 0;
    for (size_t i = lo; i < hi; ++i) s += log[i].u + log[i].ual;
    return s / static_cast<double>(hi - lo);
  };
  CHECK(avg(450, 500) < avg(0, 50));
  size_t k = 0;
  for (const Parameter* p : a.backbone().parameters().all()) CHECK(bitwise_equal(p->value(), before[k++]));
}

TEST_CASE("extreme thresholds") {
  const AdaDiffModel a = random_model(17);
  Rng rng(18);
  const Tensor x = rng.normal_tensor({5, 3, 8, 8});
  const auto t = testutil::random_t(rng, 5);

  const EarlyExitResult all = a.early_exit_forward(x, t, {}, 1.0);
  for (int e : all.exit_layer) CHECK(e == 0);
  const DenoiserOutput out = a.backbone().forward(x, t);
  CHECK(bitwise_equal(all.eps, a.backbone().to_image(a.head(0, out.activations[0]))));

  const EarlyExitResult none = a.early_exit_forward(x, t, {}, -0.5);
  for (int e : none.exit_layer) CHECK(e == a.depth());
  for (const auto& u : none.u) CHECK(static_cast<int>(u.size()) == a.depth());
  CHECK(bitwise_equal(none.eps, a.backbone().predict(x, t)));
  CHECK(bitwise_equal(a.simulate_batch_early_exit(x, t, {}, -0.5).eps, a.backbone().predict(x, t)));
}

TEST_CASE("simulated exit matches the shrinking batch") {
  const AdaDiffModel a = random_model(19, 4, 3);
  Rng rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    const int B = 1 + static_cast<int>(rng.below(8));
    const Tensor x = rng.normal_tensor({B, 3, 8, 8});
    const auto t = testutil::random_t(rng, B);
    std::vector<int64_t> y(static_cast<size_t>(B));
    for (auto& v : y) v = rng.below(3);
    const EarlyExitResult probe = a.simulate_batch_early_exit(x, t, y, -1.0);
    const double theta = probe.u[0][static_cast<size_t>(rng.below(a.depth()))];
    const EarlyExitResult sim = a.simulate_batch_early_exit(x, t, y, theta);
    const EarlyExitResult shr = a.early_exit_forward(x, t, y, theta);
    CHECK(sim.exit_layer == shr.exit_layer);
    CHECK(max_abs_diff(sim.eps, shr.eps) <= 1e-6f);
    for (int r = 0; r < B; ++r) {
      const int e = sim.exit_layer[static_cast<size_t>(r)];
      // exit at N iff no visited u is below theta
      bool any = false;
      for (float u : sim.u[static_cast<size_t>(r)]) any = any || u <= theta;
      CHECK((e == a.depth()) == !any);
    }
  }
}

TEST_CASE("estimate_latency") {
  const std::vector<int> full(10, 8);
  CHECK(estimate_latency(full, 2.0, 8) == doctest::Approx(2.0));
  const std::vector<int> half(10, 4);
  CHECK(estimate_latency(half, 2.0, 8) == doctest::Approx(1.0));
  const std::vector<int> mixed{0, 2, 3, 8, 7};
  CHECK(estimate_latency(mixed, 3.0, 8) == doctest::Approx(3.0 * 4.0 / 8.0));
  CHECK_THROWS_AS(estimate_latency(std::vector<int>{}, 1.0, 8), std::invalid_argument);

  // Two steps with different row counts: the per-step means are 1 and 6.
  const ExitTrace trace{{0, 10, 0, 0.f}, {1, 10, 2, 0.f}, {0, 9, 6, 0.f}};
  CHECK(estimate_latency(trace, 1.0, 7) == doctest::Approx(3.5 / 7.0));
  CHECK_THROWS_AS(estimate_latency(ExitTrace{}, 1.0, 7), std::invalid_argument);
}
