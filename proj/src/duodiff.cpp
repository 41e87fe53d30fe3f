#include "duodiff/duodiff.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "duodiff/adadiff.hpp"

namespace duodiff {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

Backbone select_backbone(int t, int T, int t_s) {
  if (T <= 0 || t < 0 || t >= T) throw std::out_of_range("select_backbone: t = " + std::to_string(t));
  if (t_s < 0 || t_s > T) throw std::invalid_argument("select_backbone: t_s out of range");
  return t >= T - t_s ? Backbone::Shallow : Backbone::Full;
}

DuoDiffSampler::DuoDiffSampler(const UVitModel* shallow, const UVitModel& full, NoiseSchedule sched, SamplerSpec spec)
    : shallow_(shallow), full_(&full), sched_(std::move(sched)), spec_(spec) {
  spec_.validate(sched_.steps());
  if (spec_.t_s > 0 && !shallow_) throw std::invalid_argument("t_s > 0 needs a shallow backbone");
  if (shallow_ && !shallow_->config().compatible_with(full_->config()))
    throw std::invalid_argument("shallow and full backbones use different tokenization or conditioning");
}

SampleResult DuoDiffSampler::sample(int64_t n, std::span<const int64_t> labels, int64_t batch) const {
  if (n <= 0 || batch <= 0) throw std::invalid_argument("sample: n and batch must be positive");
  const DenoiserConfig& cfg = full_->config();
  const bool conditional = cfg.num_classes > 0;
  if (conditional && static_cast<int64_t>(labels.size()) != n)
    throw std::invalid_argument("sample: a class-conditional model needs one label per sample");
  if (!conditional && !labels.empty()) throw std::invalid_argument("sample: labels given to an unconditional model");

  const int T = sched_.steps();
  SampleResult res;
  res.images = Tensor(Shape{n, cfg.in_channels, cfg.image_size, cfg.image_size});
  res.timesteps = sampling_timesteps(spec_, T);
  for (int t : res.timesteps) res.backbone.push_back(select_backbone(t, T, spec_.t_s));
  res.timing.n_samples = n;

  const auto t_total = Clock::now();
  for (int64_t start = 0, c = 0; start < n; start += batch, ++c) {
    const int64_t rows = std::min(batch, n - start);
    std::vector<int64_t> idx(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) idx[static_cast<size_t>(r)] = start + r;
    std::vector<int64_t> lbl;
    if (conditional) lbl.assign(labels.begin() + start, labels.begin() + start + rows);

    Rng rng(mix_seed(spec_.seed, static_cast<uint64_t>(c)));
    Tensor x = rng.normal_tensor(Shape{rows, cfg.in_channels, cfg.image_size, cfg.image_size});
    EpsFn eps_fn = [&](const Tensor& xt, int t) {
      const bool shallow = select_backbone(t, T, spec_.t_s) == Backbone::Shallow;
      const std::vector<int> tv(static_cast<size_t>(rows), t);
      const auto t0 = Clock::now();
      Tensor eps = (shallow ? shallow_ : full_)->predict(xt, tv, lbl);
      (shallow ? res.timing.shallow_seconds : res.timing.full_seconds) += seconds_since(t0);
      return eps;
    };
    x = reverse_chain(std::move(x), sched_, spec_, eps_fn, rng);
    if (!x.all_finite()) throw NumericError("sample: non-finite values in generated images");
    put_rows(res.images, idx, x);
  }
  res.timing.total_seconds = seconds_since(t_total);
  return res;
}

std::vector<LossPoint> train_backbone(UVitModel& model, AdamW& optimizer, const ImageSet& data,
                                      const NoiseSchedule& sched, const TrainOptions& options,
                                      const CheckpointFn& on_checkpoint) {
  if (options.batch <= 0) throw std::invalid_argument("train: batch must be positive");
  model.parameters().set_trainable(true);
  const std::vector<Parameter*> params = model.parameters().all();
  const DenoiserConfig& cfg = model.config();
  std::vector<LossPoint> log;
  for (int64_t step = optimizer.step_count(); step < options.steps;) {
    const TrainBatch b = draw_batch(data, sched.steps(), options.batch, options.seed, step, cfg.num_classes > 0);
    const Tensor xt = forward_noise_batch(b.x0, b.t, b.eps, sched);
    Tape tape;
    const Var loss = mean(per_sample_mse(model.forward(xt, b.t, b.labels).eps_tokens, patchify(b.eps, cfg.patch_size)));
    const float value = loss.value().item();
    if (!std::isfinite(value)) throw NumericError("train: non-finite loss at step " + std::to_string(step));
    optimizer.step(params, backward(tape, loss));
    ++step;
    if (options.log_every > 0 && (step % options.log_every == 0 || step == options.steps)) log.push_back({step, value});
    if (on_checkpoint && options.checkpoint_every > 0 && step % options.checkpoint_every == 0) on_checkpoint(step);
  }
  return log;
}

}  // namespace duodiff
