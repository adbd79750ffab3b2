#include "sepad/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "sepad/errors.hpp"
#include "sepad/kernels.hpp"

namespace sepad {

using Kind = Error::Kind;

namespace {

Tensor channel_mean_sq(const Tensor& a, const Tensor& b, const char* what) {
  require_same_shape(a, b, what);
  if (a.ndim() != 3) throw Error(Kind::shape, std::string(what) + ": expected C x H x W");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  Tensor out = Tensor::zeros({h, w});
  const long hw = long(h) * w;
  for (long j = 0; j < hw; ++j) {
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double d = a.data[size_t(ch * hw + j)] - b.data[size_t(ch * hw + j)];
      acc += d * d;
    }
    out.data[size_t(j)] = acc / double(c);
  }
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) {
    const double t = std::exp(-z);
    return 1.0 / (1.0 + t);
  }
  const double t = std::exp(z);
  return t / (1.0 + t);
}

}  // namespace

Tensor global_map(const Tensor& s_a, const Tensor& a) {
  return channel_mean_sq(s_a, a, "global_map");
}

Tensor local_map(const Tensor& t, const Tensor& s_t) {
  return channel_mean_sq(t, s_t, "local_map");
}

RawMaps raw_maps(const TripletModel& m, const Tensor& image) {
  Tensor t = teacher_forward(m, image);
  auto [s_t, s_a] = ema_shadow_forward(m, image);
  Tensor a = autoencoder_forward(m, image);
  return {global_map(s_a, a), local_map(t, s_t)};
}

CalibrationStats calibrate(const TripletModel& m,
                           const std::vector<Tensor>& validation_images, double q_low,
                           double q_high) {
  if (validation_images.empty())
    throw Error(Kind::data, "calibrate: empty validation set");
  if (q_low > q_high)
    throw Error(Kind::config, "calibrate: q_low must not exceed q_high");
  std::vector<double> pool_g, pool_l;
  for (const Tensor& img : validation_images) {
    RawMaps maps = raw_maps(m, img);
    pool_g.insert(pool_g.end(), maps.global.data.begin(), maps.global.data.end());
    pool_l.insert(pool_l.end(), maps.local.data.begin(), maps.local.data.end());
  }
  CalibrationStats stats;
  stats.global = {quantile(pool_g, q_low), quantile(pool_g, q_high)};
  stats.local = {quantile(pool_l, q_low), quantile(pool_l, q_high)};
  return stats;
}

Tensor normalize_map(const Tensor& raw, const BranchStats& stats, bool sigmoid_on) {
  if (raw.numel() == 0) throw Error(Kind::shape, "normalize_map: empty map");
  Tensor out = raw;
  if (stats.degenerate()) {
    std::fprintf(stderr,
                 "warning: degenerate calibration (q_low == q_high == %g); "
                 "emitting a constant 0.5 map\n",
                 stats.q_low);
    std::fill(out.data.begin(), out.data.end(), 0.5);
    return out;
  }
  const double scale = 1.0 / (stats.q_high - stats.q_low);
  for (double& v : out.data) {
    const double z = (v - stats.q_low) * scale;
    v = sigmoid_on ? sigmoid(z) : z;
  }
  return out;
}

Tensor combine(const Tensor& global_norm, const Tensor& local_norm) {
  require_same_shape(global_norm, local_norm, "combine");
  Tensor out = global_norm;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = 0.5 * (global_norm.data[i] + local_norm.data[i]);
  return out;
}

double image_score(const Tensor& map) {
  if (map.numel() == 0) throw Error(Kind::shape, "image_score: empty map");
  return *std::max_element(map.data.begin(), map.data.end());
}

ScoreResult score_image(const TripletModel& m, const CalibrationStats& stats,
                        const Tensor& image, bool sigmoid_on) {
  RawMaps raw = raw_maps(m, image);
  Tensor g = normalize_map(raw.global, stats.global, sigmoid_on);
  Tensor l = normalize_map(raw.local, stats.local, sigmoid_on);
  Tensor low = combine(g, l);

  const int h = image.dim(1), w = image.dim(2);
  Tensor up = Tensor::zeros({h, w});
  kern::resize_bilinear_forward(low.data.data(), 1, low.dim(0), low.dim(1), h, w,
                                up.data.data());
  const double score = image_score(up);
  return {std::move(up), score};
}

void write_map_f32(const std::string& path, const Tensor& map) {
  if (map.ndim() != 2) throw Error(Kind::shape, "write_map_f32: expected H x W");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Kind::io, "cannot open " + path);
  for (double v : map.data) {
    const float x = float(v);
    uint32_t bits;
    static_assert(sizeof bits == sizeof x);
    std::memcpy(&bits, &x, sizeof bits);
    const unsigned char b[4] = {
        (unsigned char)(bits & 0xff), (unsigned char)((bits >> 8) & 0xff),
        (unsigned char)((bits >> 16) & 0xff), (unsigned char)((bits >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!f) throw Error(Kind::io, "failed writing " + path);
}

Tensor read_map_f32(const std::string& path, int h, int w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Kind::io, "cannot open " + path);
  Tensor out = Tensor::zeros({h, w});
  for (double& v : out.data) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4))
      throw Error(Kind::truncated, "short read in " + path);
    uint32_t bits = uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
                    (uint32_t(b[3]) << 24);
    float x;
    std::memcpy(&x, &bits, sizeof x);
    v = double(x);
  }
  char probe;
  if (f.read(&probe, 1))
    throw Error(Kind::format, "trailing bytes in " + path);
  return out;
}

}  // namespace sepad
