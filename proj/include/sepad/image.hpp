#pragma once

// 8-bit raster I/O (binary PPM/PGM), tensor conversion, the fixed
// preprocessing used before every network forward, and a heatmap renderer.

#include <cstdint>
#include <string>
#include <vector>

#include "sepad/tensor.hpp"

namespace sepad {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;  // 3 (RGB) or 1 (gray)
  std::vector<uint8_t> pixels;  // row-major, interleaved

  uint8_t& at(int y, int x, int c) {
    return pixels[size_t((y * width + x) * channels + c)];
  }
  uint8_t at(int y, int x, int c) const {
    return pixels[size_t((y * width + x) * channels + c)];
  }
};

Image make_image(int width, int height, int channels, uint8_t fill = 0);

// Binary PPM (P6) for RGB, binary PGM (P5) for single-channel.
Image read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Image& img);

// channels x H x W in [0, 1]
Tensor to_tensor(const Image& img);
Image to_image(const Tensor& t);  // clamps to [0, 1] before quantizing

// Bilinear resize to size x size, then per-channel standardization with the
// ImageNet constants mean (0.485, 0.456, 0.406), std (0.229, 0.224, 0.225).
// Input is 3 x H x W in [0, 1].
Tensor preprocess(const Tensor& rgb01, int size);
Tensor preprocess(const Image& img, int size);

// H x W map in [0, 1] to a blue-cyan-yellow-red heatmap.
Image heatmap(const Tensor& map);

}  // namespace sepad
