#include "sepad/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace sepad {

bool Tensor::all_finite() const {
  for (double x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double quantile(const double* values, int64_t n, double q) {
  if (n <= 0) throw Error(Error::Kind::shape, "quantile of empty sequence");
  if (q < 0.0 || q > 1.0) {
    throw Error(Error::Kind::config, "quantile q must be in [0,1], got " + std::to_string(q));
  }
  std::vector<double> v(values, values + n);
  double pos = q * double(n - 1);
  int64_t lo = int64_t(pos);
  if (lo >= n - 1) {
    return *std::max_element(v.begin(), v.end());
  }
  double frac = pos - double(lo);
  std::nth_element(v.begin(), v.begin() + lo, v.end());
  double a = v[size_t(lo)];
  // smallest element strictly above position lo
  double b = *std::min_element(v.begin() + lo + 1, v.end());
  return a + frac * (b - a);
}

double quantile(const std::vector<double>& values, double q) {
  return quantile(values.data(), int64_t(values.size()), q);
}

}  // namespace sepad
