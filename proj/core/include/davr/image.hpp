#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "davr/tensor.hpp"

namespace davr {

// 8-bit interleaved RGB image, row-major.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // size = width * height * 3

  uint8_t& at(int y, int x, int c) { return pixels[static_cast<size_t>((y * width + x) * 3 + c)]; }
  uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<size_t>((y * width + x) * 3 + c)];
  }
  double mean_brightness() const;
};

// PNG and JPEG, selected by file magic. Throws davr-style runtime errors that
// name the offending path.
ImageU8 read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& img);
bool is_supported_image(const std::filesystem::path& path);

ImageU8 resize_bilinear(const ImageU8& img, int out_w, int out_h);

// [0,255] u8 <-> [-1,1] tensors, [N,3,H,W].
Tensor images_to_tensor(const std::vector<ImageU8>& images);
ImageU8 tensor_to_image(const Tensor& t, int64_t n);

// Float-plane image used by the synthetic renderer, values in [0,1].
struct ImageF {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // interleaved RGB

  ImageF() = default;
  ImageF(int w, int h) : width(w), height(h), pixels(static_cast<size_t>(w * h * 3), 0.0) {}
  double& at(int y, int x, int c) { return pixels[static_cast<size_t>((y * width + x) * 3 + c)]; }
  double at(int y, int x, int c) const {
    return pixels[static_cast<size_t>((y * width + x) * 3 + c)];
  }
};

ImageU8 quantize_image(const ImageF& img);
void gaussian_blur_inplace(ImageF& img, double radius);

}  // namespace davr
