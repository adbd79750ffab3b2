#pragma once

// Training objective: three feature distances between the teacher, the two
// student heads, and the auto-encoder, plus a margin hinge that keeps the
// auto-encoder away from the teacher on the most novel features.

#include "sepad/autodiff.hpp"
#include "sepad/tensor.hpp"

namespace sepad {

struct LossWeights {
  double alpha = 2.0;   // weight of the separation hinge
  double margin = 0.4;  // hinge margin in [0, 2]
  double q_ts = 0.999;  // teacher/student mask quantile
  double q_ta = 0.999;  // teacher/auto-encoder mask quantile
  bool dfsc_enabled = true;
  // mean the hinge over every location instead of only those with at least
  // one unmasked channel (adds a constant m per fully-masked location)
  bool dfsc_all_locations = false;
  // train only the student head on the student/auto-encoder distance
  bool stopgrad_sa_to_a = false;

  void validate() const;  // throws Error(config) on out-of-range values
};

struct LossBundle {
  double d_sa = 0.0;
  double d_ta = 0.0;
  double d_ts_masked = 0.0;
  double l_dfsc = 0.0;
  double total = 0.0;
  bool dfsc_no_active = false;  // hinge had no active locations this step
};

struct LossGraph {
  ad::Var total;
  LossBundle values;
};

// mean over all elements of (a - b)^2
double msd_value(const Tensor& a, const Tensor& b);
ad::Var msd(ad::Var a, ad::Var b);

// 1 where diff_sq >= quantile(diff_sq, q), else 0; no gradient semantics
Tensor hard_mask(const Tensor& diff_sq, double q);

// HxW map, 1 where at least one channel of the CxHxW mask is set
Tensor active_locations(const Tensor& mask);

// mean of (t - s)^2 over the elements selected by hard_mask((t-s)^2, q_ts);
// the mask is recomputed from current values and treated as a constant
ad::Var masked_ts_loss(ad::Var t_map, ad::Var s_t, double q_ts);

// Separation hinge: mask (t-a)^2 by its q_ta quantile, zero out the
// non-selected features of both maps, L2-normalize the masked vectors over
// channels at each location, and penalize locations whose normalized
// distance falls short of the margin. Gradient reaches only a_map.
ad::Var dfsc_loss(ad::Var t_map, ad::Var a_map, double q_ta, double margin,
                  bool all_locations = false, bool* no_active = nullptr);

// total = d_sa + d_ta + d_ts_masked + alpha * l_dfsc
LossGraph total_loss(ad::Var t_map, ad::Var s_t, ad::Var s_a, ad::Var a_map,
                     const LossWeights& w);

}  // namespace sepad
