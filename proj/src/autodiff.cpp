#include "sepad/autodiff.hpp"

#include <cmath>
#include <utility>

#include "sepad/errors.hpp"
#include "sepad/kernels.hpp"

namespace sepad::ad {

using Kind = Error::Kind;

const Tensor& Var::value() const {
  if (!tape) throw Error(Kind::shape, "Var::value on default-constructed Var");
  return tape->node(id).value;
}

double Var::scalar() const {
  const Tensor& v = value();
  if (v.numel() != 1)
    throw Error(Kind::shape,
                "Var::scalar: tensor has " + std::to_string(v.numel()) + " elements");
  return v.data[0];
}

int Tape::add_node(Tensor value, bool requires_grad, std::function<void()> bw) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.bw = std::move(bw);
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  int id = add_node(std::move(value), requires_grad, nullptr);
  return Var{this, id};
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[size_t(id)];
  if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error(Kind::shape, "backward: Var from another tape");
  Node& top = node(loss.id);
  if (top.value.numel() != 1)
    throw Error(Kind::shape, "backward: loss must be scalar, got shape " +
                                 top.value.shape_str());
  if (!top.requires_grad) return;  // nothing depends on parameters
  grad_buf(loss.id).data[0] += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[size_t(i)];
    if (!n.requires_grad || n.grad.data.empty() || !n.bw) continue;
    n.bw();
  }
}

Tensor Tape::grad(Var v) const {
  if (v.tape != this) throw Error(Kind::shape, "grad: Var from another tape");
  const Node& n = node(v.id);
  if (n.grad.data.empty()) return Tensor::zeros(n.value.shape);
  return n.grad;
}

// --- helpers -----------------------------------------------------------------

namespace {

Tape* same_tape(Var a, Var b, const char* op) {
  if (!a.tape || !b.tape || a.tape != b.tape)
    throw Error(Kind::shape, std::string(op) + ": Vars from different tapes");
  return a.tape;
}

void require_3d(const Tensor& t, const char* op, const char* which) {
  if (t.ndim() != 3)
    throw Error(Kind::shape, std::string(op) + ": " + which + " must be CxHxW, got " +
                                 t.shape_str());
}

bool rg(Tape* t, int id) { return t->node(id).requires_grad; }

}  // namespace

// --- elementwise -------------------------------------------------------------

Var add(Var a, Var b) {
  Tape* t = same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape);
  for (long i = 0; i < av.numel(); ++i) out.data[size_t(i)] = av.data[size_t(i)] + bv.data[size_t(i)];
  bool need = rg(t, a.id) || rg(t, b.id);
  int aid = a.id, bid = b.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, aid, bid, oid]() {
      const Tensor& g = t->node(oid).grad;
      if (rg(t, aid)) {
        Tensor& ga = t->grad_buf(aid);
        for (long i = 0; i < g.numel(); ++i) ga.data[size_t(i)] += g.data[size_t(i)];
      }
      if (rg(t, bid)) {
        Tensor& gb = t->grad_buf(bid);
        for (long i = 0; i < g.numel(); ++i) gb.data[size_t(i)] += g.data[size_t(i)];
      }
    };
  }
  return Var{t, oid};
}

Var sub(Var a, Var b) {
  Tape* t = same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape);
  for (long i = 0; i < av.numel(); ++i) out.data[size_t(i)] = av.data[size_t(i)] - bv.data[size_t(i)];
  bool need = rg(t, a.id) || rg(t, b.id);
  int aid = a.id, bid = b.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, aid, bid, oid]() {
      const Tensor& g = t->node(oid).grad;
      if (rg(t, aid)) {
        Tensor& ga = t->grad_buf(aid);
        for (long i = 0; i < g.numel(); ++i) ga.data[size_t(i)] += g.data[size_t(i)];
      }
      if (rg(t, bid)) {
        Tensor& gb = t->grad_buf(bid);
        for (long i = 0; i < g.numel(); ++i) gb.data[size_t(i)] -= g.data[size_t(i)];
      }
    };
  }
  return Var{t, oid};
}

Var scale(Var a, double k) {
  Tape* t = a.tape;
  if (!t) throw Error(Kind::shape, "scale: undefined Var");
  const Tensor& av = a.value();
  Tensor out(av.shape);
  for (long i = 0; i < av.numel(); ++i) out.data[size_t(i)] = k * av.data[size_t(i)];
  bool need = rg(t, a.id);
  int aid = a.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, aid, oid, k]() {
      const Tensor& g = t->node(oid).grad;
      Tensor& ga = t->grad_buf(aid);
      for (long i = 0; i < g.numel(); ++i) ga.data[size_t(i)] += k * g.data[size_t(i)];
    };
  }
  return Var{t, oid};
}

Var relu(Var a) {
  Tape* t = a.tape;
  if (!t) throw Error(Kind::shape, "relu: undefined Var");
  const Tensor& av = a.value();
  Tensor out(av.shape);
  for (long i = 0; i < av.numel(); ++i) {
    double x = av.data[size_t(i)];
    out.data[size_t(i)] = x > 0.0 ? x : 0.0;
  }
  bool need = rg(t, a.id);
  int aid = a.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, aid, oid]() {
      const Tensor& g = t->node(oid).grad;
      const Tensor& x = t->node(aid).value;
      Tensor& ga = t->grad_buf(aid);
      for (long i = 0; i < g.numel(); ++i)
        if (x.data[size_t(i)] > 0.0) ga.data[size_t(i)] += g.data[size_t(i)];
    };
  }
  return Var{t, oid};
}

Var mul_mask(Var a, const Tensor& mask) {
  Tape* t = a.tape;
  if (!t) throw Error(Kind::shape, "mul_mask: undefined Var");
  require_same_shape(a.value(), mask, "mul_mask");
  const Tensor& av = a.value();
  Tensor out(av.shape);
  for (long i = 0; i < av.numel(); ++i)
    out.data[size_t(i)] = av.data[size_t(i)] * mask.data[size_t(i)];
  bool need = rg(t, a.id);
  int aid = a.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    Tensor m = mask;  // keep a copy alive for the backward pass
    t->node(oid).bw = [t, aid, oid, m = std::move(m)]() {
      const Tensor& g = t->node(oid).grad;
      Tensor& ga = t->grad_buf(aid);
      for (long i = 0; i < g.numel(); ++i)
        ga.data[size_t(i)] += g.data[size_t(i)] * m.data[size_t(i)];
    };
  }
  return Var{t, oid};
}

// --- structural --------------------------------------------------------------

Var pad2d(Var a, int top, int bottom, int left, int right) {
  Tape* t = a.tape;
  if (!t) throw Error(Kind::shape, "pad2d: undefined Var");
  const Tensor& av = a.value();
  require_3d(av, "pad2d", "input");
  if (top < 0 || bottom < 0 || left < 0 || right < 0)
    throw Error(Kind::shape, "pad2d: negative padding");
  int c = av.dim(0), h = av.dim(1), w = av.dim(2);
  int ho = h + top + bottom, wo = w + left + right;
  Tensor out = Tensor::zeros({c, ho, wo});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at3(ci, y + top, x + left) = av.at3(ci, y, x);
  bool need = rg(t, a.id);
  int aid = a.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, aid, oid, top, left, c, h, w]() {
      const Tensor& g = t->node(oid).grad;
      Tensor& ga = t->grad_buf(aid);
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            ga.at3(ci, y, x) += g.at3(ci, y + top, x + left);
    };
  }
  return Var{t, oid};
}

Var conv2d(Var x, Var w, Var bias, int stride, int padding) {
  Tape* t = same_tape(x, w, "conv2d");
  same_tape(x, bias, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  require_3d(xv, "conv2d", "input");
  if (wv.ndim() != 4)
    throw Error(Kind::shape, "conv2d: kernel must be CoxCixKhxKw, got " + wv.shape_str());
  if (wv.dim(1) != xv.dim(0))
    throw Error(Kind::shape, "conv2d: kernel expects " + std::to_string(wv.dim(1)) +
                                 " input channels, input has " + std::to_string(xv.dim(0)));
  if (bv.ndim() != 1 || bv.dim(0) != wv.dim(0))
    throw Error(Kind::shape, "conv2d: bias must have shape [" + std::to_string(wv.dim(0)) +
                                 "], got " + bv.shape_str());
  kern::ConvDims d = kern::conv_dims(xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(0), wv.dim(2),
                                     wv.dim(3), stride, padding);
  Tensor out({d.cout, d.oh, d.ow});
  kern::conv2d_forward(xv.ptr(), wv.ptr(), bv.ptr(), d, out.ptr());
  bool need = rg(t, x.id) || rg(t, w.id) || rg(t, bias.id);
  int xid = x.id, wid = w.id, bid = bias.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, xid, wid, bid, oid, d]() {
      const Tensor& g = t->node(oid).grad;
      if (rg(t, xid))
        kern::conv2d_backward_input(g.ptr(), t->node(wid).value.ptr(), d,
                                    t->grad_buf(xid).ptr());
      if (rg(t, wid))
        kern::conv2d_backward_weight(g.ptr(), t->node(xid).value.ptr(), d,
                                     t->grad_buf(wid).ptr(), nullptr);
      if (rg(t, bid)) {
        Tensor& gb = t->grad_buf(bid);
        const long plane = long(d.oh) * d.ow;
        for (int co = 0; co < d.cout; ++co) {
          double s = 0.0;
          const double* gp = g.ptr() + size_t(co) * plane;
          for (long i = 0; i < plane; ++i) s += gp[i];
          gb.data[size_t(co)] += s;
        }
      }
    };
  }
  return Var{t, oid};
}

Var avg_pool2d(Var x, int k, int stride) {
  Tape* t = x.tape;
  if (!t) throw Error(Kind::shape, "avg_pool2d: undefined Var");
  const Tensor& xv = x.value();
  require_3d(xv, "avg_pool2d", "input");
  kern::PoolDims d = kern::pool_dims(xv.dim(0), xv.dim(1), xv.dim(2), k, stride);
  Tensor out({d.c, d.oh, d.ow});
  kern::avgpool_forward(xv.ptr(), d, out.ptr());
  bool need = rg(t, x.id);
  int xid = x.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, xid, oid, d]() {
      kern::avgpool_backward(t->node(oid).grad.ptr(), d, t->grad_buf(xid).ptr());
    };
  }
  return Var{t, oid};
}

Var instance_norm(Var x, Var gamma, Var beta, double eps) {
  Tape* t = same_tape(x, gamma, "instance_norm");
  same_tape(x, beta, "instance_norm");
  const Tensor& xv = x.value();
  require_3d(xv, "instance_norm", "input");
  int c = xv.dim(0);
  if (gamma.value().ndim() != 1 || gamma.value().dim(0) != c)
    throw Error(Kind::shape, "instance_norm: gamma must have shape [" +
                                 std::to_string(c) + "], got " + gamma.value().shape_str());
  require_same_shape(gamma.value(), beta.value(), "instance_norm gamma/beta");
  Tensor out(xv.shape);
  std::vector<double> mean(size_t(c), 0.0), invstd(size_t(c), 0.0);
  kern::instnorm_forward(xv.ptr(), c, xv.dim(1), xv.dim(2), gamma.value().ptr(),
                         beta.value().ptr(), eps, out.ptr(), mean.data(), invstd.data());
  bool need = rg(t, x.id) || rg(t, gamma.id) || rg(t, beta.id);
  int xid = x.id, gid = gamma.id, bid = beta.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, xid, gid, bid, oid, mean = std::move(mean),
                       invstd = std::move(invstd)]() {
      const Tensor& g = t->node(oid).grad;
      const Tensor& x = t->node(xid).value;
      const Tensor& gam = t->node(gid).value;
      int c = x.dim(0), h = x.dim(1), w = x.dim(2);
      // the kernel accumulates all three; non-tracked slots get scratch buffers
      Tensor sx, sg, sb;
      double* dx = rg(t, xid) ? t->grad_buf(xid).ptr() : (sx = Tensor::zeros(x.shape)).ptr();
      double* dg = rg(t, gid) ? t->grad_buf(gid).ptr() : (sg = Tensor::zeros({c})).ptr();
      double* db = rg(t, bid) ? t->grad_buf(bid).ptr() : (sb = Tensor::zeros({c})).ptr();
      kern::instnorm_backward(g.ptr(), x.ptr(), c, h, w, gam.ptr(), mean.data(),
                              invstd.data(), dx, dg, db);
    };
  }
  return Var{t, oid};
}

Var bilinear_resize(Var x, int h_out, int w_out) {
  Tape* t = x.tape;
  if (!t) throw Error(Kind::shape, "bilinear_resize: undefined Var");
  const Tensor& xv = x.value();
  require_3d(xv, "bilinear_resize", "input");
  if (h_out <= 0 || w_out <= 0)
    throw Error(Kind::shape, "bilinear_resize: non-positive output size");
  int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor out({c, h_out, w_out});
  kern::resize_bilinear_forward(xv.ptr(), c, h, w, h_out, w_out, out.ptr());
  bool need = rg(t, x.id);
  int xid = x.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, xid, oid, c, h, w, h_out, w_out]() {
      kern::resize_bilinear_backward(t->node(oid).grad.ptr(), c, h, w, h_out, w_out,
                                     t->grad_buf(xid).ptr());
    };
  }
  return Var{t, oid};
}

Var slice_channels(Var x, int c_begin, int c_end) {
  Tape* t = x.tape;
  if (!t) throw Error(Kind::shape, "slice_channels: undefined Var");
  const Tensor& xv = x.value();
  require_3d(xv, "slice_channels", "input");
  int c = xv.dim(0);
  if (c_begin < 0 || c_end > c || c_begin >= c_end)
    throw Error(Kind::shape, "slice_channels: range [" + std::to_string(c_begin) + ", " +
                                 std::to_string(c_end) + ") invalid for " +
                                 std::to_string(c) + " channels");
  int h = xv.dim(1), w = xv.dim(2);
  long hw = long(h) * w;
  Tensor out({c_end - c_begin, h, w});
  std::copy(xv.ptr() + size_t(c_begin) * hw, xv.ptr() + size_t(c_end) * hw,
            out.data.begin());
  bool need = rg(t, x.id);
  int xid = x.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, xid, oid, c_begin, hw]() {
      const Tensor& g = t->node(oid).grad;
      Tensor& gx = t->grad_buf(xid);
      double* dst = gx.data.data() + size_t(c_begin) * hw;
      for (long i = 0; i < g.numel(); ++i) dst[i] += g.data[size_t(i)];
    };
  }
  return Var{t, oid};
}

// --- reductions --------------------------------------------------------------

Var sum(Var x) {
  Tape* t = x.tape;
  if (!t) throw Error(Kind::shape, "sum: undefined Var");
  const Tensor& xv = x.value();
  double s = 0.0;
  for (long i = 0; i < xv.numel(); ++i) s += xv.data[size_t(i)];
  bool need = rg(t, x.id);
  int xid = x.id;
  int oid = t->add_node(Tensor::full({1}, s), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, xid, oid]() {
      double g0 = t->node(oid).grad.data[0];
      Tensor& gx = t->grad_buf(xid);
      for (long i = 0; i < gx.numel(); ++i) gx.data[size_t(i)] += g0;
    };
  }
  return Var{t, oid};
}

Var mean(Var x) {
  Tape* t = x.tape;
  if (!t) throw Error(Kind::shape, "mean: undefined Var");
  const Tensor& xv = x.value();
  long n = xv.numel();
  double s = 0.0;
  for (long i = 0; i < n; ++i) s += xv.data[size_t(i)];
  bool need = rg(t, x.id);
  int xid = x.id;
  int oid = t->add_node(Tensor::full({1}, s / double(n)), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, xid, oid, n]() {
      double g0 = t->node(oid).grad.data[0] / double(n);
      Tensor& gx = t->grad_buf(xid);
      for (long i = 0; i < n; ++i) gx.data[size_t(i)] += g0;
    };
  }
  return Var{t, oid};
}

Var mean_sq_diff(Var a, Var b) {
  Tape* t = same_tape(a, b, "mean_sq_diff");
  require_same_shape(a.value(), b.value(), "mean_sq_diff");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  long n = av.numel();
  double s = 0.0;
  for (long i = 0; i < n; ++i) {
    double d = av.data[size_t(i)] - bv.data[size_t(i)];
    s += d * d;
  }
  bool need = rg(t, a.id) || rg(t, b.id);
  int aid = a.id, bid = b.id;
  int oid = t->add_node(Tensor::full({1}, s / double(n)), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, aid, bid, oid, n]() {
      double c = 2.0 * t->node(oid).grad.data[0] / double(n);
      const Tensor& av = t->node(aid).value;
      const Tensor& bv = t->node(bid).value;
      bool na = rg(t, aid), nb = rg(t, bid);
      Tensor* ga = na ? &t->grad_buf(aid) : nullptr;
      Tensor* gb = nb ? &t->grad_buf(bid) : nullptr;
      for (long i = 0; i < n; ++i) {
        double d = c * (av.data[size_t(i)] - bv.data[size_t(i)]);
        if (na) ga->data[size_t(i)] += d;
        if (nb) gb->data[size_t(i)] -= d;
      }
    };
  }
  return Var{t, oid};
}

Var masked_mean_sq_diff(Var a, Var b, const Tensor& mask) {
  Tape* t = same_tape(a, b, "masked_mean_sq_diff");
  require_same_shape(a.value(), b.value(), "masked_mean_sq_diff");
  require_same_shape(a.value(), mask, "masked_mean_sq_diff mask");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  long n = av.numel();
  double s = 0.0;
  long cnt = 0;
  for (long i = 0; i < n; ++i) {
    if (mask.data[size_t(i)] == 0.0) continue;
    double d = av.data[size_t(i)] - bv.data[size_t(i)];
    s += d * d;
    ++cnt;
  }
  double val = cnt > 0 ? s / double(cnt) : 0.0;
  bool need = (rg(t, a.id) || rg(t, b.id)) && cnt > 0;
  int aid = a.id, bid = b.id;
  int oid = t->add_node(Tensor::full({1}, val), need, nullptr);
  if (need) {
    Tensor m = mask;
    t->node(oid).bw = [t, aid, bid, oid, n, cnt, m = std::move(m)]() {
      double c = 2.0 * t->node(oid).grad.data[0] / double(cnt);
      const Tensor& av = t->node(aid).value;
      const Tensor& bv = t->node(bid).value;
      bool na = rg(t, aid), nb = rg(t, bid);
      Tensor* ga = na ? &t->grad_buf(aid) : nullptr;
      Tensor* gb = nb ? &t->grad_buf(bid) : nullptr;
      for (long i = 0; i < n; ++i) {
        if (m.data[size_t(i)] == 0.0) continue;
        double d = c * (av.data[size_t(i)] - bv.data[size_t(i)]);
        if (na) ga->data[size_t(i)] += d;
        if (nb) gb->data[size_t(i)] -= d;
      }
    };
  }
  return Var{t, oid};
}

Var channel_l2_normalize(Var x, double eps) {
  Tape* t = x.tape;
  if (!t) throw Error(Kind::shape, "channel_l2_normalize: undefined Var");
  const Tensor& xv = x.value();
  require_3d(xv, "channel_l2_normalize", "input");
  int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  long hw = long(h) * w;
  Tensor out(xv.shape);
  std::vector<double> norm(size_t(hw), 0.0);
  for (long p = 0; p < hw; ++p) {
    double s = 0.0;
    for (int ci = 0; ci < c; ++ci) {
      double v = xv.data[size_t(ci) * hw + size_t(p)];
      s += v * v;
    }
    double nr = std::sqrt(s + eps);
    norm[size_t(p)] = nr;
    for (int ci = 0; ci < c; ++ci)
      out.data[size_t(ci) * hw + size_t(p)] = xv.data[size_t(ci) * hw + size_t(p)] / nr;
  }
  bool need = rg(t, x.id);
  int xid = x.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, xid, oid, c, hw, norm = std::move(norm)]() {
      const Tensor& g = t->node(oid).grad;
      const Tensor& x = t->node(xid).value;
      Tensor& gx = t->grad_buf(xid);
      for (long p = 0; p < hw; ++p) {
        double nr = norm[size_t(p)];
        double dot = 0.0;
        for (int ci = 0; ci < c; ++ci)
          dot += g.data[size_t(ci) * hw + size_t(p)] * x.data[size_t(ci) * hw + size_t(p)];
        double n3 = nr * nr * nr;
        for (int ci = 0; ci < c; ++ci) {
          size_t idx = size_t(ci) * hw + size_t(p);
          gx.data[idx] += g.data[idx] / nr - x.data[idx] * dot / n3;
        }
      }
    };
  }
  return Var{t, oid};
}

Var channel_l2_distance(Var a, Var b) {
  Tape* t = same_tape(a, b, "channel_l2_distance");
  require_same_shape(a.value(), b.value(), "channel_l2_distance");
  const Tensor& av = a.value();
  require_3d(av, "channel_l2_distance", "input");
  const Tensor& bv = b.value();
  int c = av.dim(0), h = av.dim(1), w = av.dim(2);
  long hw = long(h) * w;
  Tensor out({h, w});
  for (long p = 0; p < hw; ++p) {
    double s = 0.0;
    for (int ci = 0; ci < c; ++ci) {
      double d = av.data[size_t(ci) * hw + size_t(p)] - bv.data[size_t(ci) * hw + size_t(p)];
      s += d * d;
    }
    out.data[size_t(p)] = std::sqrt(s);
  }
  bool need = rg(t, a.id) || rg(t, b.id);
  int aid = a.id, bid = b.id;
  int oid = t->add_node(std::move(out), need, nullptr);
  if (need) {
    t->node(oid).bw = [t, aid, bid, oid, c, hw]() {
      const Tensor& g = t->node(oid).grad;
      const Tensor& dv = t->node(oid).value;
      const Tensor& av = t->node(aid).value;
      const Tensor& bv = t->node(bid).value;
      bool na = rg(t, aid), nb = rg(t, bid);
      Tensor* ga = na ? &t->grad_buf(aid) : nullptr;
      Tensor* gb = nb ? &t->grad_buf(bid) : nullptr;
      for (long p = 0; p < hw; ++p) {
        double dist = dv.data[size_t(p)];
        if (dist == 0.0) continue;  // subgradient 0 at the cone tip
        double coef = g.data[size_t(p)] / dist;
        for (int ci = 0; ci < c; ++ci) {
          size_t idx = size_t(ci) * hw + size_t(p);
          double d = coef * (av.data[idx] - bv.data[idx]);
          if (na) ga->data[idx] += d;
          if (nb) gb->data[idx] -= d;
        }
      }
    };
  }
  return Var{t, oid};
}

namespace {

// Pairwise reduction keeps sums of equal terms exact for power-of-two counts
// (N identical hinges average back to the hinge value bit for bit).
double pairwise_sum(const double* v, size_t n) {
  if (n == 0) return 0.0;
  if (n == 1) return v[0];
  const size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

}  // namespace

Var hinge_mean(Var dist, double margin, const Tensor& active, double denom) {
  Tape* t = dist.tape;
  if (!t) throw Error(Kind::shape, "hinge_mean: undefined Var");
  const Tensor& dv = dist.value();
  require_same_shape(dv, active, "hinge_mean active mask");
  if (denom <= 0.0) throw Error(Kind::shape, "hinge_mean: denom must be positive");
  long n = dv.numel();
  std::vector<double> terms;
  terms.reserve(size_t(n));
  for (long i = 0; i < n; ++i) {
    if (active.data[size_t(i)] == 0.0) continue;
    double h = margin - dv.data[size_t(i)];
    terms.push_back(h > 0.0 ? h : 0.0);
  }
  double s = pairwise_sum(terms.data(), terms.size());
  bool need = rg(t, dist.id);
  int did = dist.id;
  int oid = t->add_node(Tensor::full({1}, s / denom), need, nullptr);
  if (need) {
    Tensor act = active;
    t->node(oid).bw = [t, did, oid, margin, denom, n, act = std::move(act)]() {
      double g0 = t->node(oid).grad.data[0] / denom;
      const Tensor& dv = t->node(did).value;
      Tensor& gd = t->grad_buf(did);
      for (long i = 0; i < n; ++i) {
        if (act.data[size_t(i)] == 0.0) continue;
        if (margin - dv.data[size_t(i)] > 0.0) gd.data[size_t(i)] -= g0;
      }
    };
  }
  return Var{t, oid};
}

Var detach(Var a) {
  Tape* t = a.tape;
  if (!t) throw Error(Kind::shape, "detach: undefined Var");
  return t->constant(a.value());
}

}  // namespace sepad::ad
