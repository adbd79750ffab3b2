#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sepad/errors.hpp"
#include "sepad/rng.hpp"

namespace sepad {

// Dense row-major array of doubles. Values are stored in 64-bit precision;
// anything persisted to disk is rounded to 32-bit floats (see nets checkpoint
// format), and parameters are kept float-representable by snap_f32.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(size_t(numel_of(shape)), 0.0);
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw_shape("tensor dimension must be positive, got " + std::to_string(d));
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = v;
    return t;
  }

  static Tensor from(std::vector<int> s, std::vector<double> v) {
    Tensor t;
    t.shape = std::move(s);
    if (int64_t(v.size()) != numel_of(t.shape)) {
      throw_shape("value count does not match shape product");
    }
    t.data = std::move(v);
    return t;
  }

  static Tensor randn(std::vector<int> s, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = rng.normal() * stddev;
    return t;
  }

  int64_t numel() const { return int64_t(data.size()); }
  int ndim() const { return int(shape.size()); }
  int dim(int i) const { return shape[size_t(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  // 3D accessors (C x H x W)
  double& at3(int c, int h, int w) {
    return data[size_t((int64_t(c) * shape[1] + h) * shape[2] + w)];
  }
  double at3(int c, int h, int w) const {
    return data[size_t((int64_t(c) * shape[1] + h) * shape[2] + w)];
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  // Round every element to the nearest float32 value. Keeps parameters
  // bit-exact across the float32 checkpoint round trip.
  void snap_f32() {
    for (double& x : data) x = double(float(x));
  }

  bool all_finite() const;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw_shape(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

// Linear-interpolation quantile of the values (index q*(n-1) into the sorted
// sequence). q outside [0,1] or an empty sequence is an error.
double quantile(const std::vector<double>& values, double q);
double quantile(const double* values, int64_t n, double q);

}  // namespace sepad
