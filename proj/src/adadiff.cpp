#include "duodiff/adadiff.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "duodiff/rng.hpp"

namespace duodiff {

OutputHead::OutputHead(ParameterStore& store, const std::string& name, const DenoiserConfig& cfg)
    : norm_(store, name + ".norm", cfg.embed_dim),
      proj_(store, name + ".proj", cfg.embed_dim, cfg.patch_dim(), Tensor(Shape{cfg.embed_dim, cfg.patch_dim()})),
      num_patches_(cfg.num_patches()) {}

Var OutputHead::operator()(const Var& activations) const {
  const int64_t sizes[] = {1, num_patches_};
  return proj_(split(norm_(activations), 1, sizes)[1]);
}

UncertaintyModule::UncertaintyModule(ParameterStore& store, const std::string& name, int embed_dim, Tensor weight) {
  if (weight.shape() != Shape{2 * embed_dim, 1}) throw ShapeError("uem " + name, {weight.shape(), Shape{2 * embed_dim, 1}});
  w_ = &store.add(name + ".weight", std::move(weight));
  b_ = &store.add(name + ".bias", Tensor(Shape{1}));
}

Var UncertaintyModule::operator()(const Var& activations, const Var& time_embedding) const {
  const Var parts[] = {mean(activations, 1), time_embedding};
  Var logit = add(matmul(concat(parts, 1), param(*w_)), param(*b_));
  return reshape(sigmoid(logit), Shape{activations.dim(0)});
}

Tensor pseudo_uncertainty(const Tensor& eps_pred, const Tensor& eps) {
  if (eps_pred.shape() != eps.shape() || eps.rank() < 1)
    throw ShapeError("pseudo_uncertainty", {eps_pred.shape(), eps.shape()});
  const int64_t B = eps.dim(0);
  const int64_t per = eps.size() / std::max<int64_t>(B, 1);
  Tensor out(Shape{B});
  for (int64_t b = 0; b < B; ++b) {
    double acc = 0.0;
    for (int64_t i = 0; i < per; ++i) acc += std::fabs(static_cast<double>(eps_pred[b * per + i]) - eps[b * per + i]);
    out[b] = static_cast<float>(std::tanh(acc / static_cast<double>(per)));
  }
  return out;
}

Var per_sample_mse(const Var& pred, const Tensor& target) {
  if (pred.shape() != target.shape() || pred.rank() < 1) throw ShapeError("mse", {pred.shape(), target.shape()});
  const int64_t B = pred.dim(0);
  Var d = sub(pred, constant(target));
  return mean(reshape(mul(d, d), Shape{B, pred.value().size() / std::max<int64_t>(B, 1)}), 1);
}

Var loss_u(std::span<const Var> u, std::span<const Tensor> u_hat) {
  if (u.size() != u_hat.size() || u.empty()) throw std::invalid_argument("loss_u: need equal, non-empty layer lists");
  Var total;
  for (size_t i = 0; i < u.size(); ++i) {
    Var d = sub(u[i], constant(u_hat[i]));
    Var term = mean(mul(d, d));
    total = i == 0 ? term : add(total, term);
  }
  return total;
}

Var loss_ual(std::span<const Var> eps_preds, const Tensor& eps, std::span<const Var> u) {
  if (eps_preds.size() != u.size() || u.empty()) throw std::invalid_argument("loss_ual: need equal, non-empty layer lists");
  Var total;
  for (size_t i = 0; i < u.size(); ++i) {
    Tensor w = u[i].value();
    for (auto& v : w.data()) v = 1.0f - v;
    Var term = mean(mul(per_sample_mse(eps_preds[i], eps), constant(std::move(w))));
    total = i == 0 ? term : add(total, term);
  }
  return total;
}

AdaDiffModel::AdaDiffModel(UVitModel backbone, uint64_t seed) : backbone_(std::move(backbone)) {
  const DenoiserConfig& cfg = backbone_.config();
  Rng rng(seed);
  for (int i = 0; i < cfg.num_layers; ++i) {
    heads_.emplace_back(store_, "heads." + std::to_string(i), cfg);
    uems_.emplace_back(store_, "uems." + std::to_string(i), cfg.embed_dim,
                       rng.truncated_normal(Shape{2 * cfg.embed_dim, 1}, 0.02f));
  }
}

Var AdaDiffModel::head(int i, const Var& activations) const { return heads_.at(static_cast<size_t>(i))(activations); }

Var AdaDiffModel::uem(int i, const Var& activations, const Var& time_embedding) const {
  return uems_.at(static_cast<size_t>(i))(activations, time_embedding);
}

AdaDiffLoss AdaDiffModel::loss_all(const Tensor& xt, std::span<const int> t, std::span<const int64_t> labels,
                                   const Tensor& eps, AdaDiffLossWeights weights) const {
  if (weights.lambda < 0 || weights.beta < 0) throw std::invalid_argument("loss_all: lambda and beta must be >= 0");
  if (eps.shape() != xt.shape()) throw ShapeError("loss_all", {xt.shape(), eps.shape()});
  const DenoiserOutput out = backbone_.forward(xt, t, labels);
  const Tensor target = patchify(eps, backbone_.config().patch_size);
  const int N = depth();

  std::vector<Var> preds, us;
  std::vector<Tensor> u_hat;
  for (int i = 0; i < N; ++i) {
    const Var& L = out.activations[static_cast<size_t>(i)];
    preds.push_back(head(i, L));
    us.push_back(uem(i, L, out.time_embedding));
    u_hat.push_back(pseudo_uncertainty(preds.back().value(), target));
  }
  AdaDiffLoss loss;
  Var simple = mean(per_sample_mse(out.eps_tokens, target));
  Var lu = loss_u(us, u_hat);
  Var lual = loss_ual(preds, target, us);
  loss.simple = simple.value().item();
  loss.u = lu.value().item();
  loss.ual = lual.value().item();
  loss.total = add(add(simple, scale(lu, weights.lambda)), scale(lual, weights.beta));
  return loss;
}

EarlyExitResult AdaDiffModel::early_exit_forward(const Tensor& xt, std::span<const int> t,
                                                 std::span<const int64_t> labels, double theta) const {
  backbone_.check_inputs(xt, t, labels);
  const int N = depth();
  const int64_t B = xt.dim(0);
  EarlyExitResult res;
  res.eps = Tensor(xt.shape());
  res.exit_layer.assign(static_cast<size_t>(B), N);
  res.u.resize(static_cast<size_t>(B));

  std::vector<int64_t> active(static_cast<size_t>(B));
  std::iota(active.begin(), active.end(), int64_t{0});
  Var cond = backbone_.conditioning(t, labels);
  std::vector<Var> acts{backbone_.embed(xt, cond)};

  for (int i = 0; i < N; ++i) {
    const Tensor u = uem(i, acts[static_cast<size_t>(i)], cond).value();
    std::vector<int64_t> leave, stay;
    for (int64_t r = 0; r < u.size(); ++r) {
      res.u[static_cast<size_t>(active[static_cast<size_t>(r)])].push_back(u[r]);
      (u[r] <= theta ? leave : stay).push_back(r);
    }
    if (!leave.empty()) {
      const Var& L = acts[static_cast<size_t>(i)];
      Var sub_l = stay.empty() ? L : constant(take_rows(L.value(), leave));
      const Tensor img = backbone_.to_image(head(i, sub_l));
      std::vector<int64_t> global;
      for (auto r : leave) {
        global.push_back(active[static_cast<size_t>(r)]);
        res.exit_layer[static_cast<size_t>(global.back())] = i;
      }
      put_rows(res.eps, global, img);
      if (stay.empty()) return res;

      for (auto& a : acts) a = constant(take_rows(a.value(), stay));
      cond = constant(take_rows(cond.value(), stay));
      std::vector<int64_t> next;
      for (auto r : stay) next.push_back(active[static_cast<size_t>(r)]);
      active = std::move(next);
    }
    const int s = backbone_.skip_source(i);
    Var next = backbone_.block(i, acts[static_cast<size_t>(i)], s >= 0 ? &acts[static_cast<size_t>(s)] : nullptr);
    acts.push_back(std::move(next));
  }
  put_rows(res.eps, active, backbone_.to_image(backbone_.head(acts.back())));
  return res;
}

EarlyExitResult AdaDiffModel::simulate_batch_early_exit(const Tensor& xt, std::span<const int> t,
                                                        std::span<const int64_t> labels, double theta) const {
  const DenoiserOutput out = backbone_.forward(xt, t, labels);
  const int N = depth();
  const int64_t B = xt.dim(0);
  EarlyExitResult res;
  res.eps = backbone_.to_image(out.eps_tokens);
  res.exit_layer.assign(static_cast<size_t>(B), N);
  res.u.resize(static_cast<size_t>(B));

  std::vector<Tensor> u(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i)
    u[static_cast<size_t>(i)] = uem(i, out.activations[static_cast<size_t>(i)], out.time_embedding).value();
  std::map<int, std::vector<int64_t>> exits_at;
  for (int64_t r = 0; r < B; ++r) {
    for (int i = 0; i < N; ++i) {
      const float v = u[static_cast<size_t>(i)][r];
      res.u[static_cast<size_t>(r)].push_back(v);
      if (v <= theta) {
        res.exit_layer[static_cast<size_t>(r)] = i;
        exits_at[i].push_back(r);
        break;
      }
    }
  }
  for (const auto& [i, rows] : exits_at) {
    const Tensor img = backbone_.to_image(head(i, out.activations[static_cast<size_t>(i)]));
    put_rows(res.eps, rows, take_rows(img, rows));
  }
  return res;
}

std::vector<AdaDiffLossPoint> train_adadiff(AdaDiffModel& model, AdamW& optimizer, const ImageSet& data,
                                            const NoiseSchedule& sched, const TrainOptions& options,
                                            AdaDiffLossWeights weights, bool head_only,
                                            const CheckpointFn& on_checkpoint) {
  model.backbone().parameters().set_trainable(!head_only);
  std::vector<Parameter*> params = model.exit_parameters().all();
  if (!head_only)
    for (Parameter* p : model.backbone().parameters().all()) params.push_back(p);
  const bool conditional = model.backbone().config().num_classes > 0;
  std::vector<AdaDiffLossPoint> log;
  for (int64_t step = optimizer.step_count(); step < options.steps;) {
    const TrainBatch b = draw_batch(data, sched.steps(), options.batch, options.seed, step, conditional);
    const Tensor xt = forward_noise_batch(b.x0, b.t, b.eps, sched);
    Tape tape;
    const AdaDiffLoss loss = model.loss_all(xt, b.t, b.labels, b.eps, weights);
    const float total = loss.total.value().item();
    if (!std::isfinite(total)) throw NumericError("train_adadiff: non-finite loss at step " + std::to_string(step));
    optimizer.step(params, backward(tape, loss.total));
    ++step;
    if (options.log_every > 0 && (step % options.log_every == 0 || step == options.steps))
      log.push_back({step, total, loss.simple, loss.u, loss.ual});
    if (on_checkpoint && options.checkpoint_every > 0 && step % options.checkpoint_every == 0) on_checkpoint(step);
  }
  return log;
}

double estimate_latency(std::span<const int> exit_layers, double full_time, int num_layers) {
  if (exit_layers.empty()) throw std::invalid_argument("estimate_latency: no exit layers");
  if (num_layers < 1) throw std::invalid_argument("estimate_latency: num_layers must be >= 1");
  const double m = std::accumulate(exit_layers.begin(), exit_layers.end(), 0.0) / static_cast<double>(exit_layers.size());
  return full_time * m / num_layers;
}

double estimate_latency(const ExitTrace& trace, double full_time, int num_layers) {
  if (trace.empty()) throw std::invalid_argument("estimate_latency: empty trace");
  if (num_layers < 1) throw std::invalid_argument("estimate_latency: num_layers must be >= 1");
  std::map<int, std::pair<double, int>> per_step;
  for (const auto& r : trace) {
    auto& [sum, count] = per_step[r.t];
    sum += r.exit_layer;
    ++count;
  }
  double acc = 0.0;
  for (const auto& [t, sc] : per_step) acc += sc.first / sc.second;
  return full_time * (acc / static_cast<double>(per_step.size())) / num_layers;
}

}  // namespace duodiff
