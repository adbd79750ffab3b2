#include "sepad/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "sepad/errors.hpp"

namespace sepad::kern {

namespace {
std::atomic<bool> g_parallel{true};

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

ConvDims conv_dims(int cin, int h, int w, int cout, int kh, int kw, int stride, int pad) {
  if (kh < 1 || kw < 1) throw_shape("conv2d: kernel extent must be >= 1");
  if (stride < 1) throw_shape("conv2d: stride must be >= 1");
  if (pad < 0) throw_shape("conv2d: padding must be >= 0");
  ConvDims d;
  d.cin = cin;
  d.h = h;
  d.w = w;
  d.cout = cout;
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  d.pad = pad;
  d.oh = (h + 2 * pad - kh) / stride + 1;
  d.ow = (w + 2 * pad - kw) / stride + 1;
  if (h + 2 * pad < kh || w + 2 * pad < kw || d.oh < 1 || d.ow < 1) {
    throw_shape("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                " larger than padded input " + std::to_string(h + 2 * pad) + "x" +
                std::to_string(w + 2 * pad));
  }
  return d;
}

namespace {

// One (co, oh) output row. Accumulation order over (ci, kh, kw) is fixed so
// the serial and OMP variants agree bit for bit.
inline void conv_row(const double* x, const double* k, const double* bias, const ConvDims& d,
                     int co, int oh, double* yrow) {
  const double b = bias ? bias[co] : 0.0;
  for (int ow = 0; ow < d.ow; ++ow) yrow[ow] = b;
  for (int ci = 0; ci < d.cin; ++ci) {
    const double* xc = x + (int64_t(ci) * d.h) * d.w;
    const double* kc = k + ((int64_t(co) * d.cin + ci) * d.kh) * d.kw;
    for (int r = 0; r < d.kh; ++r) {
      const int ih = oh * d.stride - d.pad + r;
      if (ih < 0 || ih >= d.h) continue;
      const double* xr = xc + int64_t(ih) * d.w;
      const double* kr = kc + int64_t(r) * d.kw;
      for (int s = 0; s < d.kw; ++s) {
        const double kv = kr[s];
        const int off = s - d.pad;
        // valid ow range: 0 <= ow*stride + off < w
        int lo = 0, hi = d.ow - 1;
        if (off < 0) lo = (-off + d.stride - 1) / d.stride;
        hi = std::min(hi, (d.w - 1 - off) / d.stride);
        if (d.stride == 1) {
          const double* xs = xr + off;
          for (int ow = lo; ow <= hi; ++ow) yrow[ow] += kv * xs[ow];
        } else {
          for (int ow = lo; ow <= hi; ++ow) yrow[ow] += kv * xr[ow * d.stride + off];
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward_serial(const double* x, const double* k, const double* bias,
                           const ConvDims& d, double* y) {
  for (int co = 0; co < d.cout; ++co)
    for (int oh = 0; oh < d.oh; ++oh)
      conv_row(x, k, bias, d, co, oh, y + (int64_t(co) * d.oh + oh) * d.ow);
}

void conv2d_forward_omp(const double* x, const double* k, const double* bias, const ConvDims& d,
                        double* y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < d.cout; ++co)
    for (int oh = 0; oh < d.oh; ++oh)
      conv_row(x, k, bias, d, co, oh, y + (int64_t(co) * d.oh + oh) * d.ow);
}

void conv2d_forward(const double* x, const double* k, const double* bias, const ConvDims& d,
                    double* y) {
  if (parallel_enabled())
    conv2d_forward_omp(x, k, bias, d, y);
  else
    conv2d_forward_serial(x, k, bias, d, y);
}

namespace {

// Gradient row for one (ci, ih) of the input; gathers over (co, kh, kw).
inline void conv_bwd_input_row(const double* g, const double* k, const ConvDims& d, int ci,
                               int ih, double* dxrow) {
  for (int co = 0; co < d.cout; ++co) {
    const double* gc = g + (int64_t(co) * d.oh) * d.ow;
    const double* kc = k + ((int64_t(co) * d.cin + ci) * d.kh) * d.kw;
    for (int r = 0; r < d.kh; ++r) {
      const int num = ih + d.pad - r;
      if (num < 0 || num % d.stride != 0) continue;
      const int oh = num / d.stride;
      if (oh >= d.oh) continue;
      const double* gr = gc + int64_t(oh) * d.ow;
      const double* kr = kc + int64_t(r) * d.kw;
      for (int s = 0; s < d.kw; ++s) {
        const double kv = kr[s];
        if (d.stride == 1) {
          // ow = iw + pad - s
          const int shift = d.pad - s;
          const int lo = std::max(0, -shift);
          const int hi = std::min(d.w - 1, d.ow - 1 - shift);
          const double* gs = gr + shift;
          for (int iw = lo; iw <= hi; ++iw) dxrow[iw] += kv * gs[iw];
        } else {
          for (int iw = 0; iw < d.w; ++iw) {
            const int numw = iw + d.pad - s;
            if (numw < 0 || numw % d.stride != 0) continue;
            const int ow = numw / d.stride;
            if (ow >= d.ow) continue;
            dxrow[iw] += kv * gr[ow];
          }
        }
      }
    }
  }
}

}  // namespace

void conv2d_backward_input_serial(const double* g, const double* k, const ConvDims& d,
                                  double* dx) {
  for (int ci = 0; ci < d.cin; ++ci)
    for (int ih = 0; ih < d.h; ++ih)
      conv_bwd_input_row(g, k, d, ci, ih, dx + (int64_t(ci) * d.h + ih) * d.w);
}

void conv2d_backward_input_omp(const double* g, const double* k, const ConvDims& d, double* dx) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int ci = 0; ci < d.cin; ++ci)
    for (int ih = 0; ih < d.h; ++ih)
      conv_bwd_input_row(g, k, d, ci, ih, dx + (int64_t(ci) * d.h + ih) * d.w);
}

void conv2d_backward_input(const double* g, const double* k, const ConvDims& d, double* dx) {
  if (parallel_enabled())
    conv2d_backward_input_omp(g, k, d, dx);
  else
    conv2d_backward_input_serial(g, k, d, dx);
}

namespace {

// Gradient for all kernel taps of one co and the bias; sums over (oh, ow) in
// a fixed order per tap.
inline void conv_bwd_weight_co(const double* g, const double* x, const ConvDims& d, int co,
                               double* dk, double* dbias) {
  const double* gc = g + (int64_t(co) * d.oh) * d.ow;
  if (dbias) {
    double acc = 0.0;
    const int64_t n = int64_t(d.oh) * d.ow;
    for (int64_t i = 0; i < n; ++i) acc += gc[i];
    dbias[co] += acc;
  }
  for (int ci = 0; ci < d.cin; ++ci) {
    const double* xc = x + (int64_t(ci) * d.h) * d.w;
    double* kc = dk + ((int64_t(co) * d.cin + ci) * d.kh) * d.kw;
    for (int r = 0; r < d.kh; ++r) {
      for (int s = 0; s < d.kw; ++s) {
        double acc = 0.0;
        for (int oh = 0; oh < d.oh; ++oh) {
          const int ih = oh * d.stride - d.pad + r;
          if (ih < 0 || ih >= d.h) continue;
          const double* gr = gc + int64_t(oh) * d.ow;
          const double* xr = xc + int64_t(ih) * d.w;
          const int off = s - d.pad;
          int lo = 0, hi = d.ow - 1;
          if (off < 0) lo = (-off + d.stride - 1) / d.stride;
          hi = std::min(hi, (d.w - 1 - off) / d.stride);
          if (d.stride == 1) {
            const double* xs = xr + off;
            for (int ow = lo; ow <= hi; ++ow) acc += gr[ow] * xs[ow];
          } else {
            for (int ow = lo; ow <= hi; ++ow) acc += gr[ow] * xr[ow * d.stride + off];
          }
        }
        kc[int64_t(r) * d.kw + s] += acc;
      }
    }
  }
}

}  // namespace

void conv2d_backward_weight_serial(const double* g, const double* x, const ConvDims& d,
                                   double* dk, double* dbias) {
  for (int co = 0; co < d.cout; ++co) conv_bwd_weight_co(g, x, d, co, dk, dbias);
}

void conv2d_backward_weight_omp(const double* g, const double* x, const ConvDims& d, double* dk,
                                double* dbias) {
#pragma omp parallel for schedule(static)
  for (int co = 0; co < d.cout; ++co) conv_bwd_weight_co(g, x, d, co, dk, dbias);
}

void conv2d_backward_weight(const double* g, const double* x, const ConvDims& d, double* dk,
                            double* dbias) {
  if (parallel_enabled())
    conv2d_backward_weight_omp(g, x, d, dk, dbias);
  else
    conv2d_backward_weight_serial(g, x, d, dk, dbias);
}

PoolDims pool_dims(int c, int h, int w, int k, int stride) {
  if (k < 1) throw_shape("avg_pool2d: window must be >= 1");
  if (stride < 1) throw_shape("avg_pool2d: stride must be >= 1");
  if (h < k || w < k) {
    throw_shape("avg_pool2d: window " + std::to_string(k) + " larger than input " +
                std::to_string(h) + "x" + std::to_string(w));
  }
  PoolDims d;
  d.c = c;
  d.h = h;
  d.w = w;
  d.k = k;
  d.stride = stride;
  d.oh = (h - k) / stride + 1;
  d.ow = (w - k) / stride + 1;
  return d;
}

namespace {

inline void pool_channel(const double* x, const PoolDims& d, int c, double* y) {
  const double* xc = x + (int64_t(c) * d.h) * d.w;
  double* yc = y + (int64_t(c) * d.oh) * d.ow;
  const double inv = 1.0 / (double(d.k) * double(d.k));
  for (int oh = 0; oh < d.oh; ++oh) {
    for (int ow = 0; ow < d.ow; ++ow) {
      double acc = 0.0;
      const int ih0 = oh * d.stride, iw0 = ow * d.stride;
      for (int r = 0; r < d.k; ++r) {
        const double* xr = xc + int64_t(ih0 + r) * d.w + iw0;
        for (int s = 0; s < d.k; ++s) acc += xr[s];
      }
      yc[int64_t(oh) * d.ow + ow] = acc * inv;
    }
  }
}

inline void pool_bwd_channel(const double* g, const PoolDims& d, int c, double* dx) {
  const double* gc = g + (int64_t(c) * d.oh) * d.ow;
  double* dxc = dx + (int64_t(c) * d.h) * d.w;
  const double inv = 1.0 / (double(d.k) * double(d.k));
  for (int ih = 0; ih < d.h; ++ih) {
    const int oh_lo = ih >= d.k ? (ih - d.k + d.stride) / d.stride : 0;
    const int oh_hi = std::min(d.oh - 1, ih / d.stride);
    for (int iw = 0; iw < d.w; ++iw) {
      const int ow_lo = iw >= d.k ? (iw - d.k + d.stride) / d.stride : 0;
      const int ow_hi = std::min(d.ow - 1, iw / d.stride);
      double acc = 0.0;
      for (int oh = oh_lo; oh <= oh_hi; ++oh) {
        if (ih - oh * d.stride >= d.k) continue;
        for (int ow = ow_lo; ow <= ow_hi; ++ow) {
          if (iw - ow * d.stride >= d.k) continue;
          acc += gc[int64_t(oh) * d.ow + ow];
        }
      }
      dxc[int64_t(ih) * d.w + iw] += acc * inv;
    }
  }
}

}  // namespace

void avgpool_forward_serial(const double* x, const PoolDims& d, double* y) {
  for (int c = 0; c < d.c; ++c) pool_channel(x, d, c, y);
}

void avgpool_forward_omp(const double* x, const PoolDims& d, double* y) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < d.c; ++c) pool_channel(x, d, c, y);
}

void avgpool_forward(const double* x, const PoolDims& d, double* y) {
  if (parallel_enabled())
    avgpool_forward_omp(x, d, y);
  else
    avgpool_forward_serial(x, d, y);
}

void avgpool_backward_serial(const double* g, const PoolDims& d, double* dx) {
  for (int c = 0; c < d.c; ++c) pool_bwd_channel(g, d, c, dx);
}

void avgpool_backward_omp(const double* g, const PoolDims& d, double* dx) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < d.c; ++c) pool_bwd_channel(g, d, c, dx);
}

void avgpool_backward(const double* g, const PoolDims& d, double* dx) {
  if (parallel_enabled())
    avgpool_backward_omp(g, d, dx);
  else
    avgpool_backward_serial(g, d, dx);
}

namespace {

inline void instnorm_channel(const double* x, int c, int h, int w, const double* gamma,
                             const double* beta, double eps, double* y, double* mean,
                             double* invstd, int ch) {
  const int64_t n = int64_t(h) * w;
  const double* xc = x + int64_t(ch) * n;
  double* yc = y + int64_t(ch) * n;
  double mu = 0.0;
  for (int64_t i = 0; i < n; ++i) mu += xc[i];
  mu /= double(n);
  double var = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double dlt = xc[i] - mu;
    var += dlt * dlt;
  }
  var /= double(n);
  const double is = 1.0 / std::sqrt(var + eps);
  const double gc = gamma[ch], bc = beta[ch];
  for (int64_t i = 0; i < n; ++i) yc[i] = gc * ((xc[i] - mu) * is) + bc;
  mean[ch] = mu;
  invstd[ch] = is;
  (void)c;
}

}  // namespace

void instnorm_forward_serial(const double* x, int c, int h, int w, const double* gamma,
                             const double* beta, double eps, double* y, double* mean,
                             double* invstd) {
  for (int ch = 0; ch < c; ++ch) instnorm_channel(x, c, h, w, gamma, beta, eps, y, mean, invstd, ch);
}

void instnorm_forward_omp(const double* x, int c, int h, int w, const double* gamma,
                          const double* beta, double eps, double* y, double* mean,
                          double* invstd) {
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) instnorm_channel(x, c, h, w, gamma, beta, eps, y, mean, invstd, ch);
}

void instnorm_forward(const double* x, int c, int h, int w, const double* gamma,
                      const double* beta, double eps, double* y, double* mean, double* invstd) {
  if (parallel_enabled())
    instnorm_forward_omp(x, c, h, w, gamma, beta, eps, y, mean, invstd);
  else
    instnorm_forward_serial(x, c, h, w, gamma, beta, eps, y, mean, invstd);
}

void instnorm_backward(const double* g, const double* x, int c, int h, int w,
                       const double* gamma, const double* mean, const double* invstd,
                       double* dx, double* dgamma, double* dbeta) {
  const int64_t n = int64_t(h) * w;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int ch = 0; ch < c; ++ch) {
    const double* xc = x + int64_t(ch) * n;
    const double* gc = g + int64_t(ch) * n;
    double* dxc = dx + int64_t(ch) * n;
    const double mu = mean[ch], is = invstd[ch];
    double sg = 0.0, sgx = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double xhat = (xc[i] - mu) * is;
      sg += gc[i];
      sgx += gc[i] * xhat;
    }
    dgamma[ch] += sgx;
    dbeta[ch] += sg;
    const double inv_n = 1.0 / double(n);
    const double gs = gamma[ch] * is;
    for (int64_t i = 0; i < n; ++i) {
      const double xhat = (xc[i] - mu) * is;
      dxc[i] += gs * (gc[i] - sg * inv_n - xhat * sgx * inv_n);
    }
  }
}

namespace {

struct Lerp {
  int i0, i1;
  double w0, w1;
};

// Half-pixel source position with edge clamping; identical extents degrade
// to exact passthrough (w0 == 1).
inline Lerp lerp_at(int dst, int in, int out) {
  if (in == out) return {dst, dst, 1.0, 0.0};
  const double scale = double(in) / double(out);
  double src = (double(dst) + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  int i0 = int(src);
  if (i0 > in - 1) i0 = in - 1;
  const int i1 = std::min(i0 + 1, in - 1);
  const double w1 = src - double(i0);
  return {i0, i1, 1.0 - w1, w1};
}

inline void resize_channel(const double* x, int h, int w, int oh, int ow, double* y, int c) {
  const double* xc = x + (int64_t(c) * h) * w;
  double* yc = y + (int64_t(c) * oh) * ow;
  for (int dy = 0; dy < oh; ++dy) {
    const Lerp ly = lerp_at(dy, h, oh);
    const double* r0 = xc + int64_t(ly.i0) * w;
    const double* r1 = xc + int64_t(ly.i1) * w;
    double* yr = yc + int64_t(dy) * ow;
    for (int dxp = 0; dxp < ow; ++dxp) {
      const Lerp lx = lerp_at(dxp, w, ow);
      yr[dxp] = ly.w0 * (lx.w0 * r0[lx.i0] + lx.w1 * r0[lx.i1]) +
                ly.w1 * (lx.w0 * r1[lx.i0] + lx.w1 * r1[lx.i1]);
    }
  }
}

}  // namespace

void resize_bilinear_forward_serial(const double* x, int c, int h, int w, int oh, int ow,
                                    double* y) {
  for (int ch = 0; ch < c; ++ch) resize_channel(x, h, w, oh, ow, y, ch);
}

void resize_bilinear_forward_omp(const double* x, int c, int h, int w, int oh, int ow,
                                 double* y) {
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) resize_channel(x, h, w, oh, ow, y, ch);
}

void resize_bilinear_forward(const double* x, int c, int h, int w, int oh, int ow, double* y) {
  if (parallel_enabled())
    resize_bilinear_forward_omp(x, c, h, w, oh, ow, y);
  else
    resize_bilinear_forward_serial(x, c, h, w, oh, ow, y);
}

void resize_bilinear_backward(const double* g, int c, int h, int w, int oh, int ow, double* dx) {
  for (int ch = 0; ch < c; ++ch) {
    const double* gc = g + (int64_t(ch) * oh) * ow;
    double* dxc = dx + (int64_t(ch) * h) * w;
    for (int dy = 0; dy < oh; ++dy) {
      const Lerp ly = lerp_at(dy, h, oh);
      const double* gr = gc + int64_t(dy) * ow;
      for (int dxp = 0; dxp < ow; ++dxp) {
        const Lerp lx = lerp_at(dxp, w, ow);
        const double gv = gr[dxp];
        dxc[int64_t(ly.i0) * w + lx.i0] += ly.w0 * lx.w0 * gv;
        dxc[int64_t(ly.i0) * w + lx.i1] += ly.w0 * lx.w1 * gv;
        dxc[int64_t(ly.i1) * w + lx.i0] += ly.w1 * lx.w0 * gv;
        dxc[int64_t(ly.i1) * w + lx.i1] += ly.w1 * lx.w1 * gv;
      }
    }
  }
}

}  // namespace sepad::kern
