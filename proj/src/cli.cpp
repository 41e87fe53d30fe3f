#include "duodiff/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "duodiff/adadiff.hpp"
#include "duodiff/checkpoint.hpp"
#include "duodiff/config.hpp"
#include "duodiff/duodiff.hpp"
#include "duodiff/eval.hpp"
#include "duodiff/image_io.hpp"
#include "duodiff/version.hpp"

namespace duodiff {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

RunConfig load_run_config(const Common& c) {
  Config cfg = c.config_path.empty() ? Config() : Config::from_file(c.config_path);
  for (const auto& o : c.overrides) cfg.set_assignment(o);
  RunConfig r = to_run_config(cfg);
  fs::create_directories(r.out_dir);
  std::ofstream(r.out_dir / "config.txt") << "# duodiff " << kVersion << " config_hash=" << r.hash << "\n"
                                          << cfg.dump();
  return r;
}

ArtifactStamp stamp_of(const RunConfig& r) { return {r.hash, r.seed, kVersion}; }

json stamp_json(const RunConfig& r) { return {{"config_hash", r.hash}, {"seed", r.seed}, {"version", kVersion}}; }

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
}

ImageSet load_training_data(const RunConfig& r, bool need_labels) {
  ImageSet data = r.data_dir.empty() ? materialize(r.data) : load_rgb_directory(r.data_dir, r.data.image_size);
  if (need_labels && !data.labeled())
    throw ConfigError("model.conditional", "the dataset has no labels; set model.conditional = false");
  return data;
}

/// A held-out reference set: same generator, independent seed.
ImageSet reference_data(const RunConfig& r, int64_t n) {
  DatasetSpec spec = r.data;
  spec.seed = mix_seed(r.data.seed, 0x5eedf00dULL);
  spec.count = n;
  return materialize(spec);
}

std::vector<int64_t> cyclic_labels(const DenoiserConfig& cfg, int64_t n) {
  std::vector<int64_t> labels;
  if (cfg.num_classes > 0)
    for (int64_t i = 0; i < n; ++i) labels.push_back(i % cfg.num_classes);
  return labels;
}

void expect_arch(const DenoiserConfig& got, const DenoiserConfig& want, const std::string& what) {
  if (!(got == want))
    throw ConfigError(what, "checkpoint architecture " + to_json(got).dump() + " does not match the config " +
                                to_json(want).dump());
}

UVitModel load_backbone(const fs::path& path, const DenoiserConfig& want, const std::string& role) {
  const Checkpoint ck = load_checkpoint(path);
  if (!ck.meta.contains("model")) throw CheckpointError(path.string() + ": no model config in checkpoint");
  const DenoiserConfig cfg = denoiser_config_from_json(ck.meta.at("model"));
  expect_arch(cfg, want, role);
  UVitModel m(cfg, 0);
  const std::string prefix = ck.meta.value("kind", "") == "adadiff" ? "backbone." : "model.";
  restore_parameters(ck, prefix, m.parameters());
  return m;
}

AdaDiffModel load_adadiff(const fs::path& path, const DenoiserConfig& want) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.meta.value("kind", "") != "adadiff") throw CheckpointError(path.string() + ": not an AdaDiff checkpoint");
  const DenoiserConfig cfg = denoiser_config_from_json(ck.meta.at("model"));
  expect_arch(cfg, want, "--adadiff");
  AdaDiffModel m(UVitModel(cfg, 0), 0);
  restore_parameters(ck, "backbone.", m.backbone().parameters());
  restore_parameters(ck, "exit.", m.exit_parameters());
  return m;
}

Checkpoint backbone_checkpoint(const RunConfig& r, const UVitModel& m, const AdamW& opt) {
  Checkpoint ck;
  ck.meta = stamp_json(r);
  ck.meta["kind"] = "backbone";
  ck.meta["model"] = to_json(m.config());
  ck.meta["step"] = opt.step_count();
  store_parameters(ck, "model.", m.parameters());
  store_optimizer(ck, "optim.", opt);
  return ck;
}

Checkpoint adadiff_checkpoint(const RunConfig& r, const AdaDiffModel& m, const AdamW& opt) {
  Checkpoint ck;
  ck.meta = stamp_json(r);
  ck.meta["kind"] = "adadiff";
  ck.meta["model"] = to_json(m.backbone().config());
  ck.meta["step"] = opt.step_count();
  store_parameters(ck, "backbone.", m.backbone().parameters());
  store_parameters(ck, "exit.", m.exit_parameters());
  store_optimizer(ck, "optim.", opt);
  return ck;
}

// ---- train ----

int cmd_train(const Common& common, const std::string& which, const std::string& resume) {
  const RunConfig r = load_run_config(common);
  const DenoiserConfig& cfg = which == "shallow" ? r.shallow : r.full;
  const NoiseSchedule sched = r.schedule();
  const ImageSet data = load_training_data(r, cfg.num_classes > 0);

  UVitModel model(cfg, mix_seed(r.seed, which == "shallow" ? 2 : 1));
  AdamW opt(r.train.adam);
  if (!resume.empty()) {
    const Checkpoint ck = load_checkpoint(resume);
    expect_arch(denoiser_config_from_json(ck.meta.at("model")), cfg, "--resume");
    restore_parameters(ck, "model.", model.parameters());
    restore_optimizer(ck, "optim.", opt);
    std::cerr << "resuming from step " << opt.step_count() << "\n";
  }
  const fs::path ckpt = r.out_dir / (which + ".ckpt");
  auto save = [&](int64_t step) {
    save_checkpoint(ckpt, backbone_checkpoint(r, model, opt));
    std::cerr << "step " << step << ": checkpoint " << ckpt.string() << "\n";
  };
  const std::vector<LossPoint> log = train_backbone(model, opt, data, sched, r.train, save);
  save_checkpoint(ckpt, backbone_checkpoint(r, model, opt));

  std::ostringstream csv;
  csv << "# duodiff " << kVersion << " config_hash=" << r.hash << " seed=" << r.seed << "\nstep,loss\n";
  for (const auto& p : log) csv << p.step << ',' << p.loss << '\n';
  write_text(r.out_dir / (which + "_loss.csv"), csv.str());

  const auto profile = per_step_mse_profile(eps_fn_of(model), data, sched, std::max<int64_t>(r.eval_n / 4, 8), 20,
                                            mix_seed(r.seed, 7));
  write_text(r.out_dir / (which + "_mse_profile.csv"), profile_csv(profile, stamp_of(r)));
  PlotSeries s{which, {}, {}};
  for (const auto& b : profile) {
    s.x.push_back(0.5 * (b.t_lo + b.t_hi));
    s.y.push_back(b.mean_sq_error);
  }
  write_text(r.out_dir / (which + "_mse_profile.svg"),
             render_svg("noise prediction error by timestep", "t", "mean squared error", std::span(&s, 1),
                        stamp_of(r)));
  std::cout << "trained " << which << " backbone to step " << opt.step_count() << " -> " << ckpt.string() << "\n";
  return kOk;
}

// ---- train-adadiff ----

int cmd_train_adadiff(const Common& common, const std::string& backbone_path) {
  const RunConfig r = load_run_config(common);
  const NoiseSchedule sched = r.schedule();
  AdaDiffModel model(load_backbone(backbone_path, r.full, "--backbone"), mix_seed(r.seed, 3));
  const ImageSet data = load_training_data(r, r.full.num_classes > 0);
  AdamW opt(r.adadiff_train.adam);
  const fs::path ckpt = r.out_dir / "adadiff.ckpt";
  auto save = [&](int64_t) { save_checkpoint(ckpt, adadiff_checkpoint(r, model, opt)); };
  const auto log = train_adadiff(model, opt, data, sched, r.adadiff_train, r.weights, true, save);
  save_checkpoint(ckpt, adadiff_checkpoint(r, model, opt));

  std::ostringstream csv;
  csv << "# duodiff " << kVersion << " config_hash=" << r.hash << " seed=" << r.seed
      << "\nstep,loss_all,loss_simple,loss_u,loss_ual\n";
  for (const auto& p : log) csv << p.step << ',' << p.total << ',' << p.simple << ',' << p.u << ',' << p.ual << '\n';
  write_text(r.out_dir / "adadiff_loss.csv", csv.str());
  std::cout << "trained exit heads to step " << opt.step_count() << " -> " << ckpt.string() << "\n";
  return kOk;
}

// ---- sample ----

struct ModelPaths {
  std::string full, shallow, adadiff;
};

int cmd_sample(const Common& common, const ModelPaths& paths, std::optional<double> theta) {
  const RunConfig r = load_run_config(common);
  const NoiseSchedule sched = r.schedule();
  const std::vector<int64_t> labels = cyclic_labels(r.full, r.n_samples);
  json timing = stamp_json(r);
  timing["sampler"] = {{"kind", to_string(r.sampler.kind)}, {"eta", r.sampler.eta},
                       {"n_steps", r.sampler.n_steps}, {"t_s", r.sampler.t_s}, {"clip_x0", r.sampler.clip_x0}};
  timing["n_samples"] = r.n_samples;
  timing["t_s"] = r.sampler.t_s;
  timing["n_steps"] = static_cast<int64_t>(sampling_timesteps(r.sampler, sched.steps()).size());
  Tensor images;
  if (!paths.adadiff.empty()) {
    const AdaDiffModel m = load_adadiff(paths.adadiff, r.full);
    const double th = theta.value_or(r.theta);
    const AdaDiffSampleResult res = sample_adadiff(m, sched, r.sampler, r.n_samples, th, labels, r.sample_batch);
    images = res.images;
    std::vector<int> exits;
    for (const auto& e : res.trace) exits.push_back(e.exit_layer);
    timing["mode"] = "adadiff";
    timing["theta"] = th;
    timing["total_seconds"] = res.seconds;
    timing["seconds_per_sample"] = res.seconds / static_cast<double>(r.n_samples);
    timing["mean_exit_layer"] = estimate_latency(exits, 1.0, m.depth()) * m.depth();
  } else {
    if (paths.full.empty()) throw ConfigError("--full", "a full backbone checkpoint is required");
    const UVitModel full = load_backbone(paths.full, r.full, "--full");
    std::optional<UVitModel> shallow;
    if (!paths.shallow.empty()) shallow.emplace(load_backbone(paths.shallow, r.shallow, "--shallow"));
    if (r.sampler.t_s > 0 && !shallow) throw ConfigError("--shallow", "sampler.t_s > 0 needs a shallow checkpoint");
    const DuoDiffSampler sampler(shallow ? &*shallow : nullptr, full, sched, r.sampler);
    const SampleResult res = sampler.sample(r.n_samples, labels, r.sample_batch);
    images = res.images;
    int64_t shallow_steps = std::count(res.backbone.begin(), res.backbone.end(), Backbone::Shallow);
    timing["mode"] = "duodiff";
    timing["shallow_steps"] = shallow_steps;
    timing["full_steps"] = static_cast<int64_t>(res.backbone.size()) - shallow_steps;
    timing["shallow_seconds"] = res.timing.shallow_seconds;
    timing["full_seconds"] = res.timing.full_seconds;
    timing["total_seconds"] = res.timing.total_seconds;
    timing["seconds_per_sample"] = res.timing.total_seconds / static_cast<double>(r.n_samples);
  }
  const std::map<std::string, std::string> text = {
      {"Software", std::string("duodiff ") + kVersion}, {"config_hash", r.hash}, {"seed", std::to_string(r.seed)}};
  write_png(r.out_dir / "samples.png", make_grid(images, 8), text);
  write_text(r.out_dir / "samples_timing.json", timing.dump(2) + "\n");
  std::cout << "wrote " << (r.out_dir / "samples.png").string() << " (" << timing["seconds_per_sample"]
            << " s/sample)\n";
  return kOk;
}

// ---- profile-exits ----

std::string theta_tag(double theta) {
  std::ostringstream o;
  o << theta;
  return o.str();
}

int cmd_profile_exits(const Common& common, const std::string& adadiff_path, const std::vector<double>& thetas) {
  const RunConfig r = load_run_config(common);
  const NoiseSchedule sched = r.schedule();
  const AdaDiffModel m = load_adadiff(adadiff_path, r.full);
  std::vector<PlotSeries> all;
  for (double th : thetas) {
    if (r.n_samples < 64) throw ConfigError("sampler.n", "exit profiles need at least 64 samples");
    const std::vector<int64_t> labels = cyclic_labels(r.full, r.n_samples);
    const AdaDiffSampleResult res = sample_adadiff(m, sched, r.sampler, r.n_samples, th, labels, r.sample_batch);
    const TrendProfile p = trend_from_trace(res.trace, th, m.depth());
    const std::string tag = theta_tag(th);
    write_text(r.out_dir / ("exits_theta" + tag + ".csv"), exit_trace_csv(res.trace, stamp_of(r)));
    write_text(r.out_dir / ("trend_theta" + tag + ".csv"), trend_csv(p, stamp_of(r)));
    PlotSeries s{"theta = " + tag, {}, {}};
    for (size_t i = 0; i < p.t.size(); ++i) {
      s.x.push_back(p.t[i]);
      s.y.push_back(p.mean_exit[i]);
    }
    write_text(r.out_dir / ("trend_theta" + tag + ".svg"),
               render_svg("mean exit layer, theta = " + tag, "t", "exit layer", std::span(&s, 1), stamp_of(r), true));
    all.push_back(std::move(s));
    std::cout << "theta " << tag << ": " << p.t.size() << " timesteps profiled\n";
  }
  write_text(r.out_dir / "trend_all.svg",
             render_svg("mean exit layer by timestep", "t", "exit layer", all, stamp_of(r), true));
  return kOk;
}

// ---- bench ----

int cmd_bench(const Common& common, const ModelPaths& paths, int runs) {
  const RunConfig r = load_run_config(common);
  const NoiseSchedule sched = r.schedule();
  if (paths.full.empty()) throw ConfigError("--full", "a full backbone checkpoint is required");
  const UVitModel full = load_backbone(paths.full, r.full, "--full");
  std::optional<UVitModel> shallow;
  if (!paths.shallow.empty()) shallow.emplace(load_backbone(paths.shallow, r.shallow, "--shallow"));
  const int64_t n = r.n_samples;
  const std::vector<int64_t> labels = cyclic_labels(r.full, n);

  std::vector<std::string> ids;
  std::vector<double> secs;
  auto record = [&](const std::string& id, const LatencyStats& s) {
    ids.push_back(id);
    secs.push_back(s.median);
    std::cout << id << ": " << s.median << " s/sample (IQR " << s.iqr() << ")\n";
  };

  SamplerSpec base = r.sampler;
  base.t_s = 0;
  const DuoDiffSampler baseline(nullptr, full, sched, base);
  const LatencyStats full_stats =
      latency_bench([&](int64_t k, int64_t b) { baseline.sample(k, labels, b); }, n, r.sample_batch, 1, runs);
  record("baseline_full", full_stats);

  if (shallow) {
    const int T = sched.steps();
    for (int pct : {30, 40, 50}) {
      SamplerSpec s = r.sampler;
      s.t_s = T * pct / 100;
      const DuoDiffSampler duo(&*shallow, full, sched, s);
      record("duodiff_ts" + std::to_string(s.t_s),
             latency_bench([&](int64_t k, int64_t b) { duo.sample(k, labels, b); }, n, r.sample_batch, 1, runs));
    }
  }
  if (!paths.adadiff.empty()) {
    const AdaDiffModel m = load_adadiff(paths.adadiff, r.full);
    ExitTrace trace;
    const LatencyStats measured = latency_bench(
        [&](int64_t k, int64_t b) { trace = sample_adadiff(m, sched, r.sampler, k, r.theta, labels, b).trace; }, n,
        r.sample_batch, 1, runs);
    const std::string tag = theta_tag(r.theta);
    LatencyStats simulated;
    simulated.median = simulated.q1 = simulated.q3 = estimate_latency(trace, full_stats.median, m.depth());
    record("adadiff_theta" + tag + "_simulated", simulated);
    record("adadiff_theta" + tag + "_measured", measured);
  }
  write_text(r.out_dir / "bench.csv", bench_csv(ids, secs, stamp_of(r)));
  return kOk;
}

// ---- fid ----

int cmd_fid(const Common& common, const ModelPaths& paths, std::optional<double> theta) {
  const RunConfig r = load_run_config(common);
  const NoiseSchedule sched = r.schedule();
  const int64_t n = r.eval_n;
  const std::vector<int64_t> labels = cyclic_labels(r.full, n);
  Tensor samples;
  json out = stamp_json(r);
  if (!paths.adadiff.empty()) {
    const AdaDiffModel m = load_adadiff(paths.adadiff, r.full);
    const double th = theta.value_or(r.theta);
    samples = sample_adadiff(m, sched, r.sampler, n, th, labels, r.sample_batch, false, false).images;
    out["mode"] = "adadiff";
    out["theta"] = th;
  } else {
    if (paths.full.empty()) throw ConfigError("--full", "a full backbone checkpoint is required");
    const UVitModel full = load_backbone(paths.full, r.full, "--full");
    std::optional<UVitModel> shallow;
    if (!paths.shallow.empty()) shallow.emplace(load_backbone(paths.shallow, r.shallow, "--shallow"));
    if (r.sampler.t_s > 0 && !shallow) throw ConfigError("--shallow", "sampler.t_s > 0 needs a shallow checkpoint");
    samples = DuoDiffSampler(shallow ? &*shallow : nullptr, full, sched, r.sampler).sample(n, labels, r.sample_batch).images;
    out["mode"] = "duodiff";
    out["t_s"] = r.sampler.t_s;
  }
  const ImageSet ref = reference_data(r, n);
  const FeatureExtractor fx(samples.size() / n, r.feature_seed);
  const double fid = fid_proxy(samples, ref.images, fx);
  out["fid_proxy"] = fid;
  out["n"] = n;
  write_text(r.out_dir / "fid.json", out.dump(2) + "\n");
  std::cout << "fid_proxy = " << fid << "\n";
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Dual-backbone diffusion sampling and early-exit experiments"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", common.overrides, "override one config key (key=value)");
  };

  std::string which = "full", resume, backbone;
  ModelPaths paths;
  std::optional<double> theta;
  std::vector<double> thetas{0.05, 0.07, 0.09};
  int runs = 5;

  auto* train = app.add_subcommand("train", "train one backbone");
  add_common(train);
  train->add_option("--model", which, "full or shallow")->check(CLI::IsMember({"full", "shallow"}));
  train->add_option("--resume", resume, "continue from a backbone checkpoint")->check(CLI::ExistingFile);

  auto* train_ada = app.add_subcommand("train-adadiff", "train exit heads and uncertainty modules");
  add_common(train_ada);
  train_ada->add_option("--backbone", backbone, "trained full backbone checkpoint")->required()->check(CLI::ExistingFile);

  auto add_models = [&](CLI::App* sub, bool ada) {
    sub->add_option("--full", paths.full, "full backbone checkpoint")->check(CLI::ExistingFile);
    sub->add_option("--shallow", paths.shallow, "shallow backbone checkpoint")->check(CLI::ExistingFile);
    if (ada) sub->add_option("--adadiff", paths.adadiff, "AdaDiff checkpoint")->check(CLI::ExistingFile);
  };
  auto* sample = app.add_subcommand("sample", "generate an image grid");
  add_common(sample);
  add_models(sample, true);
  sample->add_option("--theta", theta, "exit threshold (AdaDiff)");

  auto* profile = app.add_subcommand("profile-exits", "per-timestep exit-layer profiles");
  add_common(profile);
  profile->add_option("--adadiff", paths.adadiff, "AdaDiff checkpoint")->required()->check(CLI::ExistingFile);
  profile->add_option("--theta", thetas, "exit thresholds")->expected(1, -1);

  auto* bench = app.add_subcommand("bench", "latency of baseline, DuoDiff and AdaDiff sampling");
  add_common(bench);
  add_models(bench, true);
  bench->add_option("--runs", runs, "timed runs per configuration")->check(CLI::PositiveNumber);

  auto* fid = app.add_subcommand("fid", "Frechet distance of samples to held-out data");
  add_common(fid);
  add_models(fid, true);
  fid->add_option("--theta", theta, "exit threshold (AdaDiff)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*train) return cmd_train(common, which, resume);
    if (*train_ada) return cmd_train_adadiff(common, backbone);
    if (*sample) return cmd_sample(common, paths, theta);
    if (*profile) return cmd_profile_exits(common, paths.adadiff, thetas);
    if (*bench) return cmd_bench(common, paths, runs);
    if (*fid) return cmd_fid(common, paths, theta);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace duodiff
