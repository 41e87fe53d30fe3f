#include "duodiff/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

#include "duodiff/rng.hpp"

namespace duodiff {

std::string to_string(DatasetKind kind) { return kind == DatasetKind::Shapes ? "shapes" : "gaussian_blobs"; }

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "shapes") return DatasetKind::Shapes;
  if (s == "gaussian_blobs") return DatasetKind::GaussianBlobs;
  throw DataError("unknown dataset kind: " + s);
}

void DatasetSpec::validate() const {
  if (image_size < 4) throw DataError("dataset: image_size must be >= 4");
  if (count < 1) throw DataError("dataset: count must be >= 1");
  if (num_classes < 0 || num_classes > 3) throw DataError("dataset: num_classes must lie in [0, 3]");
}

namespace {

constexpr int kSuper = 4;  // supersampling factor per axis

using Color = std::array<float, 3>;

bool inside_triangle(double px, double py, double cx, double cy, double r) {
  // Upward triangle inscribed in the circle of radius r.
  const double ax = cx, ay = cy - r;
  const double bx = cx - r * 0.8660254, by = cy + r * 0.5;
  const double qx = cx + r * 0.8660254, qy = cy + r * 0.5;
  auto edge = [&](double x0, double y0, double x1, double y1) { return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0); };
  const double e0 = edge(ax, ay, bx, by), e1 = edge(bx, by, qx, qy), e2 = edge(qx, qy, ax, ay);
  return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
}

Tensor render_shape(int kind, int S, Rng& rng) {
  Color bg, fg;
  for (auto& c : bg) c = static_cast<float>(rng.uniform(0.0, 0.35));
  for (auto& c : fg) c = static_cast<float>(rng.uniform(0.55, 1.0));
  const double r = rng.uniform(0.22, 0.38) * S;
  const double cx = rng.uniform(0.35, 0.65) * S;
  const double cy = rng.uniform(0.35, 0.65) * S;

  Tensor img(Shape{3, S, S});
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper;
          const double py = y + (sy + 0.5) / kSuper;
          bool in = false;
          switch (kind) {
            case 0: in = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r; break;
            case 1: in = std::fabs(px - cx) <= r * 0.8 && std::fabs(py - cy) <= r * 0.8; break;
            default: in = inside_triangle(px, py, cx, cy, r); break;
          }
          hits += in ? 1 : 0;
        }
      }
      const float cover = static_cast<float>(hits) / (kSuper * kSuper);
      for (int c = 0; c < 3; ++c) img[(c * S + y) * S + x] = bg[c] + cover * (fg[c] - bg[c]);
    }
  }
  return img;
}

Tensor render_blobs(int blobs, int S, Rng& rng) {
  Tensor img(Shape{3, S, S});
  Color bg;
  for (auto& c : bg) c = static_cast<float>(rng.uniform(0.1, 0.4));
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      for (int c = 0; c < 3; ++c) img[(c * S + y) * S + x] = bg[c];
  for (int k = 0; k < blobs; ++k) {
    const double cx = rng.uniform(0.15, 0.85) * S, cy = rng.uniform(0.15, 0.85) * S;
    const double sigma = rng.uniform(0.08, 0.2) * S;
    Color col;
    for (auto& c : col) c = static_cast<float>(rng.uniform(-0.4, 0.7));
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const double d2 = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy);
        const auto w = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
        for (int c = 0; c < 3; ++c) img[(c * S + y) * S + x] += w * col[c];
      }
  }
  for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

}  // namespace

Example generate(const DatasetSpec& spec, int64_t index) {
  spec.validate();
  if (index < 0 || index >= spec.count)
    throw DataError("dataset: index " + std::to_string(index) + " outside [0, " + std::to_string(spec.count) + ")");
  Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(index)));
  const int kinds = spec.num_classes > 0 ? spec.num_classes : 3;
  const auto cls = static_cast<int>(rng.below(kinds));
  Example ex;
  ex.image = spec.kind == DatasetKind::Shapes ? render_shape(cls, spec.image_size, rng)
                                              : render_blobs(cls + 1, spec.image_size, rng);
  ex.image = normalize(ex.image);
  if (spec.num_classes > 0) ex.label = cls;
  return ex;
}

std::vector<int64_t> ImageSet::gather_labels(std::span<const int64_t> idx) const {
  std::vector<int64_t> out;
  if (labels.empty()) return out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels.at(static_cast<size_t>(i)));
  return out;
}

ImageSet materialize(const DatasetSpec& spec, int64_t begin, int64_t count) {
  spec.validate();
  if (count < 0) count = spec.count - begin;
  if (begin < 0 || count < 0 || begin + count > spec.count) throw DataError("dataset: requested range out of bounds");
  const int S = spec.image_size;
  ImageSet set;
  set.images = Tensor(Shape{count, 3, S, S});
  const int64_t per = int64_t{3} * S * S;
  for (int64_t i = 0; i < count; ++i) {
    Example ex = generate(spec, begin + i);
    std::copy_n(ex.image.ptr(), per, set.images.ptr() + i * per);
    if (ex.label) set.labels.push_back(*ex.label);
  }
  return set;
}

ImageSet load_rgb_directory(const std::filesystem::path& dir, int image_size) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("image directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("image directory is empty: " + dir.string());
  const int S = image_size;
  const auto expected = static_cast<uintmax_t>(3) * S * S;
  ImageSet set;
  set.images = Tensor(Shape{static_cast<int64_t>(files.size()), 3, S, S});
  for (size_t n = 0; n < files.size(); ++n) {
    if (fs::file_size(files[n]) != expected)
      throw DataError("raw RGB image " + files[n].string() + " is not " + std::to_string(S) + "x" +
                      std::to_string(S) + "x3 bytes");
    std::ifstream in(files[n], std::ios::binary);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() != expected) throw DataError("short read: " + files[n].string());
    float* dst = set.images.ptr() + static_cast<int64_t>(n) * 3 * S * S;
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        for (int c = 0; c < 3; ++c)
          dst[(c * S + y) * S + x] = static_cast<float>(buf[static_cast<size_t>((y * S + x) * 3 + c)]) / 127.5f - 1.0f;
  }
  return set;
}

Tensor normalize(const Tensor& image, float lo, float hi) {
  Tensor out(image.shape());
  const float scale = 2.0f / (hi - lo);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = (image[i] - lo) * scale - 1.0f;
  return out;
}

Tensor denormalize(const Tensor& image, float lo, float hi) {
  Tensor out(image.shape());
  const float scale = (hi - lo) / 2.0f;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = (image[i] + 1.0f) * scale + lo;
  return out;
}

}  // namespace duodiff
