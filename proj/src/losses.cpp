#include "sepad/losses.hpp"

#include <cmath>
#include <string>

#include "sepad/errors.hpp"

namespace sepad {

using ad::Var;

namespace {
constexpr double kNormEps = 1e-12;
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0))
    throw Error(Error::Kind::config, "alpha must be >= 0, got " + std::to_string(alpha));
  if (!(margin >= 0.0 && margin <= 2.0))
    throw Error(Error::Kind::config,
                "margin must lie in [0, 2], got " + std::to_string(margin));
  if (!(q_ts >= 0.0 && q_ts <= 1.0))
    throw Error(Error::Kind::config, "q_ts must lie in [0, 1], got " + std::to_string(q_ts));
  if (!(q_ta >= 0.0 && q_ta <= 1.0))
    throw Error(Error::Kind::config, "q_ta must lie in [0, 1], got " + std::to_string(q_ta));
}

double msd_value(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "msd");
  double s = 0.0;
  for (long i = 0; i < a.numel(); ++i) {
    const double d = a.data[size_t(i)] - b.data[size_t(i)];
    s += d * d;
  }
  return s / double(a.numel());
}

Var msd(Var a, Var b) { return ad::mean_sq_diff(a, b); }

Tensor hard_mask(const Tensor& diff_sq, double q) {
  const double tau = quantile(diff_sq.ptr(), diff_sq.numel(), q);
  Tensor mask(diff_sq.shape);
  for (long i = 0; i < diff_sq.numel(); ++i)
    mask.data[size_t(i)] = diff_sq.data[size_t(i)] >= tau ? 1.0 : 0.0;
  return mask;
}

Tensor active_locations(const Tensor& mask) {
  if (mask.ndim() != 3)
    throw_shape("active_locations: mask must be CxHxW, got " + mask.shape_str());
  const int c = mask.dim(0), h = mask.dim(1), w = mask.dim(2);
  const long hw = long(h) * w;
  Tensor act = Tensor::zeros({h, w});
  for (int ci = 0; ci < c; ++ci) {
    const double* mc = mask.ptr() + size_t(ci) * hw;
    for (long p = 0; p < hw; ++p)
      if (mc[p] != 0.0) act.data[size_t(p)] = 1.0;
  }
  return act;
}

namespace {

Tensor sq_diff_values(const Tensor& a, const Tensor& b) {
  Tensor d(a.shape);
  for (long i = 0; i < a.numel(); ++i) {
    const double x = a.data[size_t(i)] - b.data[size_t(i)];
    d.data[size_t(i)] = x * x;
  }
  return d;
}

}  // namespace

Var masked_ts_loss(Var t_map, Var s_t, double q_ts) {
  require_same_shape(t_map.value(), s_t.value(), "masked_ts_loss");
  const Tensor mask = hard_mask(sq_diff_values(t_map.value(), s_t.value()), q_ts);
  return ad::masked_mean_sq_diff(t_map, s_t, mask);
}

Var dfsc_loss(Var t_map, Var a_map, double q_ta, double margin, bool all_locations,
              bool* no_active) {
  require_same_shape(t_map.value(), a_map.value(), "dfsc_loss");
  if (!(margin >= 0.0 && margin <= 2.0))
    throw Error(Error::Kind::config,
                "dfsc margin must lie in [0, 2], got " + std::to_string(margin));
  if (no_active) *no_active = false;
  ad::Tape* tape = a_map.tape;

  const Tensor mask = hard_mask(sq_diff_values(t_map.value(), a_map.value()), q_ta);
  Tensor active = active_locations(mask);
  double count = 0.0;
  for (double v : active.data) count += v;
  if (all_locations) {
    active = Tensor::full(active.shape, 1.0);
    count = double(active.numel());
  }
  if (count == 0.0) {
    if (no_active) *no_active = true;
    return tape->constant(Tensor::full({1}, 0.0));
  }

  Var t_masked = ad::mul_mask(ad::detach(t_map), mask);
  Var a_masked = ad::mul_mask(a_map, mask);
  Var t_unit = ad::channel_l2_normalize(t_masked, kNormEps);
  Var a_unit = ad::channel_l2_normalize(a_masked, kNormEps);
  Var dist = ad::channel_l2_distance(t_unit, a_unit);
  return ad::hinge_mean(dist, margin, active, count);
}

LossGraph total_loss(Var t_map, Var s_t, Var s_a, Var a_map, const LossWeights& w) {
  w.validate();
  ad::Tape* tape = a_map.tape;

  Var t_const = ad::detach(t_map);
  Var d_sa = w.stopgrad_sa_to_a ? ad::mean_sq_diff(s_a, ad::detach(a_map))
                                : ad::mean_sq_diff(s_a, a_map);
  Var d_ta = ad::mean_sq_diff(t_const, a_map);
  Var d_ts = masked_ts_loss(t_const, s_t, w.q_ts);

  LossGraph g{Var{}, LossBundle{}};
  Var l_dfsc = w.dfsc_enabled
                   ? dfsc_loss(t_const, a_map, w.q_ta, w.margin, w.dfsc_all_locations,
                               &g.values.dfsc_no_active)
                   : tape->constant(Tensor::full({1}, 0.0));

  g.total = ad::add(ad::add(ad::add(d_sa, d_ta), d_ts), ad::scale(l_dfsc, w.alpha));
  g.values.d_sa = d_sa.scalar();
  g.values.d_ta = d_ta.scalar();
  g.values.d_ts_masked = d_ts.scalar();
  g.values.l_dfsc = l_dfsc.scalar();
  g.values.total = g.total.scalar();
  return g;
}

}  // namespace sepad
