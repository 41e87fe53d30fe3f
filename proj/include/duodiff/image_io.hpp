#pragma once

#include <filesystem>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "duodiff/tensor.hpp"

namespace duodiff {

/// Tiles [n, 3, S, S] images in [-1, 1] into one 8-bit RGB grid with
/// `cols` columns, a 1-pixel gap between tiles and a 1-pixel frame.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // interleaved RGB, row-major
};
RgbImage make_grid(const Tensor& images, int cols);

/// Writes an RGB PNG with the given tEXt entries. Output bytes depend only
/// on the inputs.
void write_png(const std::filesystem::path& path, const RgbImage& img,
               const std::map<std::string, std::string>& text = {});

}  // namespace duodiff
