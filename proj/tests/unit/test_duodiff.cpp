#include <doctest.h>

#include <numeric>
#include <stdexcept>

#include "common.hpp"
#include "duodiff/duodiff.hpp"
#include "ref64.hpp"

using namespace duodiff;
using testutil::tiny_config;

namespace {

UVitModel random_backbone(int layers, uint64_t seed, int classes = 0) {
  UVitModel m(tiny_config(layers, classes), seed);
  ref64::randomize(m.parameters(), seed + 1, 0.1);
  return m;
}

ImageSet toy_data(int classes = 0) {
  DatasetSpec ds;
  ds.image_size = 8;
  ds.num_classes = classes;
  ds.count = 256;
  return materialize(ds);
}

}  // namespace

TEST_CASE("select_backbone examples") {
  for (int t = 0; t < 1000; ++t) {
    CHECK(select_backbone(t, 1000, 0) == Backbone::Full);
    CHECK(select_backbone(t, 1000, 1000) == Backbone::Shallow);
    CHECK(select_backbone(t, 1000, 300) == (t >= 700 ? Backbone::Shallow : Backbone::Full));
  }
  CHECK(select_backbone(800, 1000, 300) == Backbone::Shallow);
  CHECK(select_backbone(600, 1000, 300) == Backbone::Full);
  CHECK_THROWS(select_backbone(1000, 1000, 300));
  CHECK_THROWS(select_backbone(5, 1000, 1001));
}

TEST_CASE("t_s = 0 reproduces full-only sampling") {
  const UVitModel full = random_backbone(3, 1);
  const UVitModel shallow = random_backbone(1, 2);
  SamplerSpec spec;
  spec.kind = SamplerKind::DDPM;
  spec.seed = 42;
  const NoiseSchedule sched = make_schedule(50);
  const SampleResult a = DuoDiffSampler(&shallow, full, sched, spec).sample(5, {}, 3);
  const SampleResult b = DuoDiffSampler(nullptr, full, sched, spec).sample(5, {}, 3);
  CHECK(bitwise_equal(a.images, b.images));
  CHECK(a.images.shape() == Shape{5, 3, 8, 8});
  for (Backbone k : a.backbone) CHECK(k == Backbone::Full);
  CHECK(a.timing.shallow_seconds == 0.0);
  CHECK(a.timing.n_samples == 5);
}

TEST_CASE("sampling is a function of seed, spec and models") {
  const UVitModel full = random_backbone(3, 3);
  const UVitModel shallow = random_backbone(1, 4);
  SamplerSpec spec;
  spec.kind = SamplerKind::DDIM;
  spec.eta = 0.5;
  spec.n_steps = 10;
  spec.t_s = 400;
  spec.seed = 9;
  const NoiseSchedule sched = make_schedule();
  const DuoDiffSampler s(&shallow, full, sched, spec);
  CHECK(bitwise_equal(s.sample(4, {}, 2).images, s.sample(4, {}, 2).images));
  spec.seed = 10;
  CHECK_FALSE(bitwise_equal(s.sample(4, {}, 2).images, DuoDiffSampler(&shallow, full, sched, spec).sample(4, {}, 2).images));
}

TEST_CASE("ddim routing with t_s = 150") {
  const UVitModel full = random_backbone(3, 5);
  const UVitModel shallow = random_backbone(1, 6);
  SamplerSpec spec;
  spec.kind = SamplerKind::DDIM;
  spec.n_steps = 50;
  spec.t_s = 150;
  const SampleResult r = DuoDiffSampler(&shallow, full, make_schedule(), spec).sample(2);
  REQUIRE(r.timesteps.size() == 50);
  int shallow_steps = 0;
  for (size_t k = 0; k < r.timesteps.size(); ++k) {
    CHECK((r.backbone[k] == Backbone::Shallow) == (r.timesteps[k] >= 850));
    shallow_steps += r.backbone[k] == Backbone::Shallow;
  }
  // 999 - 20.388 k >= 850 for k = 0..7
  CHECK(shallow_steps == 8);
  CHECK(r.timing.shallow_seconds > 0.0);
  CHECK(r.timing.full_seconds > 0.0);
  CHECK(r.timing.total_seconds >= r.timing.shallow_seconds + r.timing.full_seconds);
}

TEST_CASE("sampler argument checks") {
  const UVitModel full = random_backbone(3, 7, 3);
  const UVitModel shallow = random_backbone(1, 8, 3);
  const UVitModel other = random_backbone(1, 9, 0);
  SamplerSpec spec;
  spec.kind = SamplerKind::DDIM;
  spec.n_steps = 5;
  spec.t_s = 300;
  const NoiseSchedule sched = make_schedule();
  CHECK_THROWS_AS(DuoDiffSampler(nullptr, full, sched, spec), std::invalid_argument);
  CHECK_THROWS_AS(DuoDiffSampler(&other, full, sched, spec), std::invalid_argument);
  const DuoDiffSampler s(&shallow, full, sched, spec);
  CHECK_THROWS_AS(s.sample(2), std::invalid_argument);
  const std::vector<int64_t> y{0, 2};
  CHECK(s.sample(2, y).images.shape() == Shape{2, 3, 8, 8});
  spec.t_s = 1001;
  CHECK_THROWS_AS(DuoDiffSampler(&shallow, full, sched, spec), std::invalid_argument);
}

TEST_CASE("train_backbone reduces the loss") {
  const ImageSet data = toy_data();
  UVitModel m(tiny_config(2), 10);
  AdamW opt(AdamWOptions{.lr = 1e-3f, .warmup_steps = 50});
  TrainOptions o;
  o.steps = 500;
  o.batch = 16;
  o.log_every = 1;
  o.seed = 1;
  const auto log = train_backbone(m, opt, data, make_schedule(), o);
  REQUIRE(log.size() == 500);
  double early = 0, late = 0;
  for (int i = 0; i < 10; ++i) early += log[static_cast<size_t>(i)].loss / 10.0;
  for (int i = 450; i < 500; ++i) late += log[static_cast<size_t>(i)].loss / 50.0;
  CHECK(late < early);
  CHECK(opt.step_count() == 500);
}

TEST_CASE("identical seeds give identical parameters and resume continues the run") {
  const ImageSet data = toy_data(3);
  TrainOptions o;
  o.steps = 20;
  o.batch = 8;
  o.seed = 5;
  auto run = [&](int64_t stop_at) {
    UVitModel m(tiny_config(2, 3), 11);
    AdamW opt(AdamWOptions{.lr = 1e-3f, .warmup_steps = 5});
    TrainOptions first = o;
    first.steps = stop_at;
    train_backbone(m, opt, data, make_schedule(), first);
    train_backbone(m, opt, data, make_schedule(), o);
    return m;
  };
  const UVitModel a = run(20);
  const UVitModel b = run(20);
  const UVitModel c = run(7);
  const auto pa = a.parameters().all();
  const auto pb = b.parameters().all();
  const auto pc = c.parameters().all();
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(bitwise_equal(pa[i]->value(), pb[i]->value()));
    CHECK(bitwise_equal(pa[i]->value(), pc[i]->value()));
  }
}

TEST_CASE("draw_batch is a function of seed and step") {
  const ImageSet data = toy_data(3);
  const TrainBatch a = draw_batch(data, 1000, 8, 3, 17, true);
  const TrainBatch b = draw_batch(data, 1000, 8, 3, 17, true);
  CHECK(bitwise_equal(a.x0, b.x0));
  CHECK(bitwise_equal(a.eps, b.eps));
  CHECK(a.t == b.t);
  CHECK(a.labels == b.labels);
  CHECK(a.labels.size() == 8);
  for (int t : a.t) {
    CHECK(t >= 0);
    CHECK(t < 1000);
  }
  CHECK_FALSE(bitwise_equal(a.eps, draw_batch(data, 1000, 8, 3, 18, true).eps));
  CHECK_THROWS_AS(draw_batch(ImageSet{}, 1000, 8, 3, 0, false), DataError);
  CHECK_THROWS_AS(draw_batch(toy_data(0), 1000, 8, 3, 0, true), DataError);
}
