#pragma once

// Dense compute kernels. Every kernel has a serial reference implementation
// and an OpenMP variant; the OMP variants partition output elements across
// threads while keeping each element's accumulation order identical to the
// serial code, so both produce bit-identical results. The dispatch functions
// pick the variant from a process-global switch (default: parallel).
//
// Backward kernels accumulate (+=) into the destination buffers; forward
// kernels overwrite their output.

#include <cstdint>

namespace sepad::kern {

bool parallel_enabled();
void set_parallel(bool on);

struct ConvDims {
  int cin = 0, h = 0, w = 0;
  int cout = 0, kh = 0, kw = 0;
  int stride = 1, pad = 0;
  int oh = 0, ow = 0;
};

// Validates and computes output extent; throws Error(shape) on bad geometry.
ConvDims conv_dims(int cin, int h, int w, int cout, int kh, int kw, int stride, int pad);

void conv2d_forward_serial(const double* x, const double* k, const double* bias,
                           const ConvDims& d, double* y);
void conv2d_forward_omp(const double* x, const double* k, const double* bias,
                        const ConvDims& d, double* y);
void conv2d_forward(const double* x, const double* k, const double* bias,
                    const ConvDims& d, double* y);

void conv2d_backward_input_serial(const double* g, const double* k, const ConvDims& d, double* dx);
void conv2d_backward_input_omp(const double* g, const double* k, const ConvDims& d, double* dx);
void conv2d_backward_input(const double* g, const double* k, const ConvDims& d, double* dx);

void conv2d_backward_weight_serial(const double* g, const double* x, const ConvDims& d,
                                   double* dk, double* dbias);
void conv2d_backward_weight_omp(const double* g, const double* x, const ConvDims& d,
                                double* dk, double* dbias);
void conv2d_backward_weight(const double* g, const double* x, const ConvDims& d,
                            double* dk, double* dbias);

struct PoolDims {
  int c = 0, h = 0, w = 0;
  int k = 1, stride = 1;
  int oh = 0, ow = 0;
};

PoolDims pool_dims(int c, int h, int w, int k, int stride);

void avgpool_forward_serial(const double* x, const PoolDims& d, double* y);
void avgpool_forward_omp(const double* x, const PoolDims& d, double* y);
void avgpool_forward(const double* x, const PoolDims& d, double* y);

void avgpool_backward_serial(const double* g, const PoolDims& d, double* dx);
void avgpool_backward_omp(const double* g, const PoolDims& d, double* dx);
void avgpool_backward(const double* g, const PoolDims& d, double* dx);

// Per-channel standardization over the HxW plane followed by affine scale and
// shift. mean/invstd (length c) are written for the backward pass.
void instnorm_forward_serial(const double* x, int c, int h, int w, const double* gamma,
                             const double* beta, double eps, double* y, double* mean,
                             double* invstd);
void instnorm_forward_omp(const double* x, int c, int h, int w, const double* gamma,
                          const double* beta, double eps, double* y, double* mean,
                          double* invstd);
void instnorm_forward(const double* x, int c, int h, int w, const double* gamma,
                      const double* beta, double eps, double* y, double* mean, double* invstd);

void instnorm_backward(const double* g, const double* x, int c, int h, int w,
                       const double* gamma, const double* mean, const double* invstd,
                       double* dx, double* dgamma, double* dbeta);

// Bilinear interpolation, half-pixel (align-corners-false) sampling with edge
// clamping; resizing to the same extent is an exact identity.
void resize_bilinear_forward_serial(const double* x, int c, int h, int w, int oh, int ow,
                                    double* y);
void resize_bilinear_forward_omp(const double* x, int c, int h, int w, int oh, int ow,
                                 double* y);
void resize_bilinear_forward(const double* x, int c, int h, int w, int oh, int ow, double* y);

// Scatter transpose of the forward; single-threaded.
void resize_bilinear_backward(const double* g, int c, int h, int w, int oh, int ow, double* dx);

}  // namespace sepad::kern
