#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "duodiff/tensor.hpp"

namespace duodiff {

/// Bad or unreadable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { Shapes, GaussianBlobs };

std::string to_string(DatasetKind kind);
/// Throws DataError for unknown names.
DatasetKind parse_dataset_kind(const std::string& s);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Shapes;
  int image_size = 16;
  int num_classes = 3;  // 0 = unlabeled
  int64_t count = 4096;
  uint64_t seed = 0;

  void validate() const;
};

struct Example {
  Tensor image;  // [3, S, S], values in [-1, 1]
  std::optional<int64_t> label;
};

/// Pure function of (spec, index). Shapes: one anti-aliased circle, square
/// or triangle per image, class = shape kind. Blobs: smooth Gaussian bumps,
/// class = blob count - 1.
Example generate(const DatasetSpec& spec, int64_t index);

/// A batch-addressable image collection.
struct ImageSet {
  Tensor images;                // [n, C, S, S]
  std::vector<int64_t> labels;  // empty when unlabeled

  int64_t size() const { return images.rank() ? images.dim(0) : 0; }
  bool labeled() const { return !labels.empty(); }
  Tensor gather(std::span<const int64_t> idx) const { return take_rows(images, idx); }
  std::vector<int64_t> gather_labels(std::span<const int64_t> idx) const;
};

/// Generates indices [begin, begin + count) of `spec` (count < 0: to the end).
ImageSet materialize(const DatasetSpec& spec, int64_t begin = 0, int64_t count = -1);

/// Imports every regular file of `dir` (sorted by name) as a raw interleaved
/// 8-bit RGB image of image_size x image_size. Files of any other size are
/// rejected with DataError.
ImageSet load_rgb_directory(const std::filesystem::path& dir, int image_size);

/// Affine map of [lo, hi] onto [-1, 1] and back.
Tensor normalize(const Tensor& image, float lo = 0.0f, float hi = 1.0f);
Tensor denormalize(const Tensor& image, float lo = 0.0f, float hi = 1.0f);

}  // namespace duodiff
