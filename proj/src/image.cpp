#include "sepad/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "sepad/errors.hpp"
#include "sepad/kernels.hpp"

namespace sepad {

Image make_image(int width, int height, int channels, uint8_t fill) {
  if (width <= 0 || height <= 0 || (channels != 1 && channels != 3)) {
    throw Error(Error::Kind::shape, "make_image: bad dimensions " + std::to_string(width) + "x" +
                                        std::to_string(height) + "x" + std::to_string(channels));
  }
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(size_t(width) * size_t(height) * size_t(channels), fill);
  return img;
}

namespace {

// Reads the next header integer, skipping whitespace and '#' comments.
int64_t pnm_int(const std::string& bytes, size_t& pos, const std::string& path) {
  while (pos < bytes.size()) {
    char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= bytes.size()) {
    throw Error(Error::Kind::truncated, "pnm: header ended early in " + path);
  }
  if (bytes[pos] < '0' || bytes[pos] > '9') {
    throw Error(Error::Kind::format, "pnm: expected integer in header of " + path);
  }
  int64_t v = 0;
  while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
    v = v * 10 + (bytes[pos] - '0');
    if (v > (int64_t(1) << 40)) {
      throw Error(Error::Kind::format, "pnm: absurd header value in " + path);
    }
    ++pos;
  }
  return v;
}

}  // namespace

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Error::Kind::io, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw Error(Error::Kind::format, "pnm: not a binary PGM/PPM file: " + path);
  }
  const int channels = bytes[1] == '6' ? 3 : 1;
  size_t pos = 2;
  const int64_t w = pnm_int(bytes, pos, path);
  const int64_t h = pnm_int(bytes, pos, path);
  const int64_t maxval = pnm_int(bytes, pos, path);
  if (w <= 0 || h <= 0 || w * h > (int64_t(1) << 26)) {
    throw Error(Error::Kind::format, "pnm: bad dimensions in " + path);
  }
  if (maxval != 255) {
    throw Error(Error::Kind::format, "pnm: only maxval 255 is supported, got " +
                                         std::to_string(maxval) + " in " + path);
  }
  // Exactly one whitespace byte separates the header from the raster.
  if (pos >= bytes.size() ||
      !(bytes[pos] == '\n' || bytes[pos] == ' ' || bytes[pos] == '\t' || bytes[pos] == '\r')) {
    throw Error(Error::Kind::format, "pnm: missing raster separator in " + path);
  }
  ++pos;

  const size_t need = size_t(w) * size_t(h) * size_t(channels);
  if (bytes.size() - pos < need) {
    throw Error(Error::Kind::truncated, "pnm: raster data ended early in " + path);
  }
  Image img = make_image(int(w), int(h), channels);
  std::copy(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(pos + need),
            img.pixels.begin());
  return img;
}

void write_pnm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw Error(Error::Kind::shape,
                "write_pnm: image must have 1 or 3 channels, got " + std::to_string(img.channels));
  }
  if (img.width <= 0 || img.height <= 0 ||
      img.pixels.size() != size_t(img.width) * size_t(img.height) * size_t(img.channels)) {
    throw Error(Error::Kind::shape, "write_pnm: inconsistent image buffer");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Error::Kind::io, "cannot open " + path + " for writing");
  char header[64];
  std::snprintf(header, sizeof(header), "P%c\n%d %d\n255\n", img.channels == 3 ? '6' : '5',
                img.width, img.height);
  out << header;
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            std::streamsize(img.pixels.size()));
  if (!out) throw Error(Error::Kind::io, "short write to " + path);
}

Tensor to_tensor(const Image& img) {
  Tensor t({img.channels, img.height, img.width});
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        t.at3(c, y, x) = double(img.at(y, x, c)) / 255.0;
      }
    }
  }
  return t;
}

Image to_image(const Tensor& t) {
  if (t.ndim() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw Error(Error::Kind::shape, "to_image: want 1xHxW or 3xHxW, got " + t.shape_str());
  }
  Image img = make_image(t.dim(2), t.dim(1), t.dim(0));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        double v = t.at3(c, y, x);
        if (!(v == v)) throw Error(Error::Kind::numeric, "to_image: NaN pixel value");
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        img.at(y, x, c) = uint8_t(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

Tensor preprocess(const Tensor& rgb01, int size) {
  if (rgb01.ndim() != 3 || rgb01.dim(0) != 3) {
    throw Error(Error::Kind::shape, "preprocess: want 3xHxW input, got " + rgb01.shape_str());
  }
  if (size <= 0) throw Error(Error::Kind::config, "preprocess: size must be positive");
  static const double kMean[3] = {0.485, 0.456, 0.406};
  static const double kStd[3] = {0.229, 0.224, 0.225};
  Tensor out({3, size, size});
  kern::resize_bilinear_forward(rgb01.ptr(), 3, rgb01.dim(1), rgb01.dim(2), size, size, out.ptr());
  for (int c = 0; c < 3; ++c) {
    const double inv = 1.0 / kStd[c];
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        out.at3(c, y, x) = (out.at3(c, y, x) - kMean[c]) * inv;
      }
    }
  }
  return out;
}

Tensor preprocess(const Image& img, int size) {
  if (img.channels != 3) {
    throw Error(Error::Kind::format, "preprocess: need an RGB image, got " +
                                         std::to_string(img.channels) + " channel(s)");
  }
  return preprocess(to_tensor(img), size);
}

Image heatmap(const Tensor& map) {
  if (map.ndim() != 2) {
    throw Error(Error::Kind::shape, "heatmap: want HxW map, got " + map.shape_str());
  }
  // Four-stop gradient: dark blue, cyan, yellow, red.
  static const double stops[4][3] = {
      {20, 20, 140}, {0, 200, 220}, {235, 220, 40}, {200, 30, 30}};
  const int h = map.dim(0);
  const int w = map.dim(1);
  Image img = make_image(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = map.data[size_t(y) * size_t(w) + size_t(x)];
      if (!(v == v)) throw Error(Error::Kind::numeric, "heatmap: NaN map value");
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      const double pos = v * 3.0;
      const int seg = pos >= 3.0 ? 2 : int(pos);
      const double f = pos - seg;
      for (int c = 0; c < 3; ++c) {
        const double col = stops[seg][c] * (1.0 - f) + stops[seg + 1][c] * f;
        img.at(y, x, c) = uint8_t(std::lround(col));
      }
    }
  }
  return img;
}

}  // namespace sepad
