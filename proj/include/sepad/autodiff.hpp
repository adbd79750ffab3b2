#pragma once

// Reverse-mode gradient tape over Tensor. A tape lives for one loss
// evaluation on one thread; node values are immutable once produced.
// Quantile thresholds and masks enter ops as plain Tensors and are treated
// as constants, so no gradient flows through threshold selection.

#include <deque>
#include <functional>
#include <vector>

#include "sepad/tensor.hpp"

namespace sepad::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool defined() const { return tape != nullptr; }
  const Tensor& value() const;
  double scalar() const;
};

class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse creation order.
  // loss must be a scalar (numel == 1).
  void backward(Var loss);

  // Gradient of the last backward() w.r.t. v; zeros if nothing flowed.
  Tensor grad(Var v) const;

  struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::function<void()> bw;
  };

  int add_node(Tensor value, bool requires_grad, std::function<void()> bw);
  Node& node(int id) { return nodes_[size_t(id)]; }
  const Node& node(int id) const { return nodes_[size_t(id)]; }
  // Lazily allocated zero-initialized gradient buffer for accumulation.
  Tensor& grad_buf(int id);
  size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;  // deque keeps references stable while growing
};

// --- primitive ops ----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double k);
Var relu(Var a);
// elementwise product with a constant 0/1 (or arbitrary) tensor
Var mul_mask(Var a, const Tensor& mask);
// zero padding: top/bottom rows, left/right columns of a CxHxW map
Var pad2d(Var a, int top, int bottom, int left, int right);
Var conv2d(Var x, Var w, Var bias, int stride, int padding);
Var avg_pool2d(Var x, int k, int stride);
Var instance_norm(Var x, Var gamma, Var beta, double eps);
Var bilinear_resize(Var x, int h_out, int w_out);
Var slice_channels(Var x, int c_begin, int c_end);
Var sum(Var x);
Var mean(Var x);
// mean over all elements of (a-b)^2
Var mean_sq_diff(Var a, Var b);
// mean of (a-b)^2 over elements where mask is nonzero; 0 if mask is empty
Var masked_mean_sq_diff(Var a, Var b, const Tensor& mask);
// x / sqrt(sum_c x^2 + eps) at each spatial location
Var channel_l2_normalize(Var x, double eps);
// D[h,w] = sqrt(sum_c (a-b)^2); gradient defined as 0 where D == 0
Var channel_l2_distance(Var a, Var b);
// sum over locations with active[h,w] != 0 of max(margin - D[h,w], 0) / denom
Var hinge_mean(Var dist, double margin, const Tensor& active, double denom);
// cut the graph: value copied into a fresh constant
Var detach(Var a);

}  // namespace sepad::ad
