#include "duodiff/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "duodiff/kernels.hpp"
#include "duodiff/rng.hpp"

namespace duodiff {

namespace {

using Clock = std::chrono::steady_clock;
using Mat = Eigen::MatrixXd;

Mat to_matrix(const Tensor& f) {
  if (f.rank() != 2) throw ShapeError("frechet_distance", {f.shape()});
  Mat m(f.dim(0), f.dim(1));
  for (int64_t i = 0; i < f.dim(0); ++i)
    for (int64_t j = 0; j < f.dim(1); ++j) m(i, j) = f[i * f.dim(1) + j];
  return m;
}

Mat sqrt_psd(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  if (es.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
  const Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

std::string header(const ArtifactStamp& s) {
  std::ostringstream o;
  o << "# duodiff " << s.version << " config_hash=" << s.config_hash << " seed=" << s.seed << "\n";
  return o.str();
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

FeatureExtractor::FeatureExtractor(int64_t input_dim, uint64_t seed, int features)
    : in_(input_dim), out_(features) {
  if (input_dim <= 0 || features <= 0) throw std::invalid_argument("FeatureExtractor: dimensions must be positive");
  Rng rng(seed);
  proj_ = rng.normal_tensor(Shape{input_dim, features});
  const auto s = static_cast<float>(1.0 / std::sqrt(static_cast<double>(input_dim)));
  for (auto& v : proj_.data()) v *= s;
}

Tensor FeatureExtractor::operator()(const Tensor& images) const {
  if (images.rank() < 1 || images.size() != images.dim(0) * in_)
    throw ShapeError("FeatureExtractor", {images.shape(), Shape{-1, in_}});
  const int64_t n = images.dim(0);
  Tensor out(Shape{n, out_});
  kernels::gemm_nn(n, out_, in_, images.ptr(), proj_.ptr(), out.ptr());
  for (auto& v : out.data()) v = std::tanh(v);
  return out;
}

double frechet_distance(const Tensor& feats_a, const Tensor& feats_b) {
  const Mat a = to_matrix(feats_a);
  const Mat b = to_matrix(feats_b);
  if (a.cols() != b.cols()) throw ShapeError("frechet_distance", {feats_a.shape(), feats_b.shape()});
  const int64_t d = a.cols();
  if (a.rows() < d + 1 || b.rows() < d + 1)
    throw std::invalid_argument("frechet_distance: need at least d + 1 samples per set");

  const Eigen::VectorXd mu_a = a.colwise().mean();
  const Eigen::VectorXd mu_b = b.colwise().mean();
  const Mat ca = a.rowwise() - mu_a.transpose();
  const Mat cb = b.rowwise() - mu_b.transpose();
  const Mat sa = ca.transpose() * ca / static_cast<double>(a.rows() - 1);
  const Mat sb = cb.transpose() * cb / static_cast<double>(b.rows() - 1);
  if (!sa.allFinite() || !sb.allFinite()) throw NumericError("frechet_distance: non-finite covariance");

  const Mat ra = sqrt_psd(sa);
  Mat inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose());
  const double tr = sa.trace() + sb.trace() - 2.0 * sqrt_psd(inner).trace();
  return std::max(0.0, (mu_a - mu_b).squaredNorm() + tr);
}

double fid_proxy(const Tensor& samples, const Tensor& reference, const FeatureExtractor& extractor) {
  if (samples.rank() < 2 || reference.rank() < 2 ||
      !std::equal(samples.shape().begin() + 1, samples.shape().end(), reference.shape().begin() + 1,
                  reference.shape().end()))
    throw ShapeError("fid_proxy", {samples.shape(), reference.shape()});
  return frechet_distance(extractor(samples), extractor(reference));
}

BatchEpsFn eps_fn_of(const UVitModel& model) {
  return [&model](const Tensor& xt, std::span<const int> t, std::span<const int64_t> labels) {
    return model.predict(xt, t, labels);
  };
}

std::vector<BucketStat> per_step_mse_profile(const BatchEpsFn& f, const ImageSet& data, const NoiseSchedule& sched,
                                             int64_t n, int buckets, uint64_t seed, int64_t batch) {
  const int T = sched.steps();
  if (buckets <= 0 || buckets > T) throw std::invalid_argument("per_step_mse_profile: bad bucket count");
  if (n <= 0 || batch <= 0) throw std::invalid_argument("per_step_mse_profile: n and batch must be positive");
  if (data.size() == 0) throw DataError("per_step_mse_profile: empty dataset");

  std::vector<BucketStat> out;
  for (int k = 0; k < buckets; ++k) {
    const int lo = static_cast<int>(static_cast<int64_t>(k) * T / buckets);
    const int hi = static_cast<int>(static_cast<int64_t>(k + 1) * T / buckets);
    Rng rng(mix_seed(seed, static_cast<uint64_t>(k)));
    double total = 0.0;
    for (int64_t start = 0; start < n; start += batch) {
      const int64_t rows = std::min(batch, n - start);
      std::vector<int64_t> idx(static_cast<size_t>(rows));
      for (auto& i : idx) i = rng.below(data.size());
      std::vector<int> t(static_cast<size_t>(rows));
      for (auto& v : t) v = lo + static_cast<int>(rng.below(hi - lo));
      const Tensor x0 = data.gather(idx);
      const Tensor eps = rng.normal_tensor(x0.shape());
      const std::vector<int64_t> labels = data.labeled() ? data.gather_labels(idx) : std::vector<int64_t>{};
      const Tensor pred = f(forward_noise_batch(x0, t, eps, sched), t, labels);
      if (pred.shape() != eps.shape()) throw ShapeError("per_step_mse_profile", {pred.shape(), eps.shape()});
      for (int64_t i = 0; i < eps.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - eps[i];
        total += d * d;
      }
    }
    out.push_back({lo, hi, total / static_cast<double>(n)});
  }
  return out;
}

AdaDiffSampleResult sample_adadiff(const AdaDiffModel& model, const NoiseSchedule& sched, const SamplerSpec& spec,
                                   int64_t n, double theta, std::span<const int64_t> labels, int64_t batch,
                                   bool simulate, bool record) {
  spec.validate(sched.steps());
  if (n <= 0 || batch <= 0) throw std::invalid_argument("sample_adadiff: n and batch must be positive");
  const DenoiserConfig& cfg = model.backbone().config();
  if (cfg.num_classes > 0 && static_cast<int64_t>(labels.size()) != n)
    throw std::invalid_argument("sample_adadiff: a class-conditional model needs one label per sample");

  AdaDiffSampleResult res;
  res.images = Tensor(Shape{n, cfg.in_channels, cfg.image_size, cfg.image_size});
  const auto t0 = Clock::now();
  for (int64_t start = 0, c = 0; start < n; start += batch, ++c) {
    const int64_t rows = std::min(batch, n - start);
    std::vector<int64_t> idx(static_cast<size_t>(rows));
    std::iota(idx.begin(), idx.end(), start);
    std::vector<int64_t> lbl;
    if (cfg.num_classes > 0) lbl.assign(labels.begin() + start, labels.begin() + start + rows);

    Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(c)));
    Tensor x = rng.normal_tensor(Shape{rows, cfg.in_channels, cfg.image_size, cfg.image_size});
    EpsFn eps_fn = [&](const Tensor& xt, int t) {
      const std::vector<int> tv(static_cast<size_t>(rows), t);
      EarlyExitResult r = simulate ? model.simulate_batch_early_exit(xt, tv, lbl, theta)
                                   : model.early_exit_forward(xt, tv, lbl, theta);
      if (record)
        for (int64_t i = 0; i < rows; ++i) {
          const auto& u = r.u[static_cast<size_t>(i)];
          res.trace.push_back({start + i, t, r.exit_layer[static_cast<size_t>(i)], u.empty() ? 0.0f : u.back()});
        }
      return std::move(r.eps);
    };
    x = reverse_chain(std::move(x), sched, spec, eps_fn, rng);
    if (!x.all_finite()) throw NumericError("sample_adadiff: non-finite values in generated images");
    put_rows(res.images, idx, x);
  }
  res.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return res;
}

TrendProfile trend_from_trace(const ExitTrace& trace, double theta, int num_layers) {
  TrendProfile p;
  p.theta = theta;
  p.num_layers = num_layers;
  std::vector<int> order;
  std::map<int, std::pair<double, double>> acc;  // t -> (sum, sum of squares)
  std::map<int, int64_t> count;
  int64_t max_id = -1;
  for (const ExitRecord& r : trace) {
    if (!acc.count(r.t)) order.push_back(r.t);
    auto& [s, s2] = acc[r.t];
    s += r.exit_layer;
    s2 += static_cast<double>(r.exit_layer) * r.exit_layer;
    ++count[r.t];
    max_id = std::max(max_id, r.sample_id);
  }
  p.n_samples = max_id + 1;
  for (int t : order) {
    const double c = static_cast<double>(count[t]);
    const double m = acc[t].first / c;
    p.t.push_back(t);
    p.mean_exit.push_back(m);
    p.std_exit.push_back(std::sqrt(std::max(0.0, acc[t].second / c - m * m)));
  }
  return p;
}

TrendProfile exit_trend_profile(const AdaDiffModel& model, double theta, int64_t n, const NoiseSchedule& sched,
                                const SamplerSpec& spec, int64_t batch) {
  if (n < 64) throw std::invalid_argument("exit_trend_profile: needs at least 64 samples");
  const int classes = model.backbone().config().num_classes;
  std::vector<int64_t> labels;
  if (classes > 0)
    for (int64_t i = 0; i < n; ++i) labels.push_back(i % classes);
  const AdaDiffSampleResult r = sample_adadiff(model, sched, spec, n, theta, labels, batch);
  return trend_from_trace(r.trace, theta, model.depth());
}

LatencyStats latency_bench(const std::function<void(int64_t, int64_t)>& sampler_fn, int64_t n, int64_t batch,
                           int warmup_runs, int runs) {
  if (warmup_runs < 1 || runs < 1) throw std::invalid_argument("latency_bench: need warmup_runs >= 1 and runs >= 1");
  if (n <= 0) throw std::invalid_argument("latency_bench: n must be positive");
  for (int i = 0; i < warmup_runs; ++i) sampler_fn(n, batch);
  LatencyStats s;
  for (int i = 0; i < runs; ++i) {
    const auto t0 = Clock::now();
    sampler_fn(n, batch);
    s.runs.push_back(std::chrono::duration<double>(Clock::now() - t0).count() / static_cast<double>(n));
  }
  s.median = quantile(s.runs, 0.5);
  s.q1 = quantile(s.runs, 0.25);
  s.q3 = quantile(s.runs, 0.75);
  return s;
}

std::string render_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                       std::span<const PlotSeries> series, const ArtifactStamp& stamp, bool steps) {
  constexpr double W = 640, H = 400, ml = 60, mr = 20, mt = 40, mb = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("render_svg: x and y lengths differ");
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        first = false;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream o;
  o.precision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<metadata>duodiff " << xml_escape(stamp.version) << " config_hash=" << xml_escape(stamp.config_hash)
    << " seed=" << stamp.seed << "</metadata>\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(title)
    << "</text>\n";
  o << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - mb + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << xv
      << "</text>\n";
    o << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << yv
      << "</text>\n";
  }
  o << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"13\">"
    << xml_escape(x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
    << H / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  for (size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % std::size(colors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (steps && i > 0) o << px(s.x[i]) << ',' << py(s.y[i - 1]) << ' ';
      o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    o << "\"/>\n";
    o << "<text x=\"" << W - mr - 4 << "\" y=\"" << mt + 14 * (k + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
      << color << "\">" << xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string exit_trace_csv(const ExitTrace& trace, const ArtifactStamp& stamp) {
  std::ostringstream o;
  o << header(stamp) << "sample_id,t,exit_layer,u_exit\n";
  for (const auto& r : trace) o << r.sample_id << ',' << r.t << ',' << r.exit_layer << ',' << r.u_exit << '\n';
  return o.str();
}

std::string trend_csv(const TrendProfile& p, const ArtifactStamp& stamp) {
  std::ostringstream o;
  o << header(stamp) << "# theta=" << p.theta << " n_samples=" << p.n_samples << "\n";
  o << "t,mean_exit,std_exit\n";
  for (size_t i = 0; i < p.t.size(); ++i) o << p.t[i] << ',' << p.mean_exit[i] << ',' << p.std_exit[i] << '\n';
  return o.str();
}

std::string profile_csv(std::span<const BucketStat> p, const ArtifactStamp& stamp) {
  std::ostringstream o;
  o << header(stamp) << "t_bucket_lo,t_bucket_hi,mean_mse\n";
  for (const auto& b : p) o << b.t_lo << ',' << b.t_hi << ',' << b.mean_sq_error << '\n';
  return o.str();
}

std::string bench_csv(std::span<const std::string> run_ids, std::span<const double> seconds_per_sample,
                      const ArtifactStamp& stamp) {
  if (run_ids.size() != seconds_per_sample.size()) throw std::invalid_argument("bench_csv: length mismatch");
  std::ostringstream o;
  o.precision(9);
  o << header(stamp) << "run_id,seconds_per_sample\n";
  for (size_t i = 0; i < run_ids.size(); ++i) o << run_ids[i] << ',' << seconds_per_sample[i] << '\n';
  return o.str();
}

}  // namespace duodiff
