#include "duodiff/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

#include <png.h>

namespace duodiff {

RgbImage make_grid(const Tensor& images, int cols) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != images.dim(3))
    throw ShapeError("make_grid", {images.shape()});
  if (cols <= 0) throw std::invalid_argument("make_grid: cols must be positive");
  const int n = static_cast<int>(images.dim(0));
  const int S = static_cast<int>(images.dim(2));
  const int c = std::min(cols, std::max(n, 1));
  const int r = (n + c - 1) / c;
  RgbImage img;
  img.width = c * (S + 1) + 1;
  img.height = std::max(r, 1) * (S + 1) + 1;
  img.pixels.assign(static_cast<size_t>(img.width) * img.height * 3, 0);
  for (int k = 0; k < n; ++k) {
    const int ox = 1 + (k % c) * (S + 1), oy = 1 + (k / c) * (S + 1);
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          const float v = images[((static_cast<int64_t>(k) * 3 + ch) * S + y) * S + x];
          const float q = std::clamp((v + 1.0f) * 127.5f, 0.0f, 255.0f);
          img.pixels[(static_cast<size_t>(oy + y) * img.width + ox + x) * 3 + ch] =
              static_cast<uint8_t>(std::lround(q));
        }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const RgbImage& img, const std::map<std::string, std::string>& text) {
  if (img.width <= 0 || img.height <= 0 || img.pixels.size() != static_cast<size_t>(img.width) * img.height * 3)
    throw std::invalid_argument("write_png: inconsistent image");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!f) throw std::runtime_error("cannot write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: write failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_text> chunks;
  for (const auto& [k, v] : text) {
    png_text t{};
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = const_cast<char*>(k.c_str());
    t.text = const_cast<char*>(v.c_str());
    chunks.push_back(t);
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(y) * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace duodiff
