#pragma once

#include <array>
#include <vector>

#include "lptn/tensor.hpp"

// Low-level numeric kernels. Forward routines return fresh tensors; backward
// routines accumulate (+=) into caller-owned gradient buffers. All parallel
// loops partition disjoint output slices, so results are independent of the
// thread count. Convolutions use cross-correlation semantics (no kernel flip).
namespace lptn::kernels {

enum class PadMode { Zero, Reflect };

struct ConvSpec {
  i64 stride = 1;
  i64 pad = 0;
  PadMode mode = PadMode::Reflect;
};

inline const char* pad_mode_name(PadMode m) { return m == PadMode::Zero ? "zero" : "reflect"; }

// Mirror index without repeating the edge sample: -1 -> 1, n -> n-2.
inline i64 reflect_index(i64 i, i64 n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

Shape conv2d_out_shape(const Shape& x, const Shape& w, const ConvSpec& spec);

template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, i64 pt, i64 pb, i64 pl, i64 pr, PadMode mode);
template <typename T>
void pad2d_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gp, i64 pt, i64 pb, i64 pl, i64 pr,
                       PadMode mode);

// -------- convolution --------

template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const T* bias, const ConvSpec& spec);
template <typename T>
void conv2d_bwd_input_acc(Tensor<T>& gx, const Tensor<T>& gy, const Tensor<T>& w,
                          const ConvSpec& spec);
template <typename T>
void conv2d_bwd_weight_acc(Tensor<T>& gw, const Tensor<T>& gy, const Tensor<T>& x,
                           const ConvSpec& spec);
template <typename T>
void conv2d_bwd_bias_acc(T* gb, const Tensor<T>& gy);

// Adjoint of conv2d_fwd with the same weight/stride/padding. out_h/out_w pick
// the pre-image size (the minimal consistent size when left at 0).
template <typename T>
Tensor<T> conv2d_transpose_fwd(const Tensor<T>& y, const Tensor<T>& w, const ConvSpec& spec,
                               i64 out_h = 0, i64 out_w = 0);

// -------- resampling --------

template <typename T>
Tensor<T> bilinear_up2(const Tensor<T>& x);
template <typename T>
void bilinear_up2_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gy);
template <typename T>
Tensor<T> bilinear_down2(const Tensor<T>& x);
template <typename T>
void bilinear_down2_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gy);

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x);
template <typename T>
void avg_pool2_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gy);

// -------- pyramid stencils --------

// Taps of the fixed separable low-pass kernel [1 4 6 4 1] / 16. The 2D kernel
// is the outer product (sums to one); the upsampling kernel is scaled by 4 so
// that each interpolation phase again sums to one.
inline constexpr std::array<double, 5> pyr_taps = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16,
                                                   1.0 / 16};

// Blur with the 2D kernel under reflect padding, then keep even-index samples.
// Accumulation runs in double so constant images survive bit-exactly.
template <typename T>
Tensor<T> pyr_down(const Tensor<T>& x);
template <typename T>
void pyr_down_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gy);

// Zero-insertion upsample by 2, then blur with the 4x kernel (reflect pad).
template <typename T>
Tensor<T> pyr_up(const Tensor<T>& x);
template <typename T>
void pyr_up_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gy);

// -------- normalization --------

// Per-sample, per-channel mean/variance normalization with affine scale/shift.
// gamma/beta have length C. Saves per-(n,c) mean and 1/sqrt(var+eps) for the
// backward pass.
template <typename T>
Tensor<T> instance_norm_fwd(const Tensor<T>& x, const T* gamma, const T* beta, T eps,
                            std::vector<double>& mean, std::vector<double>& inv_sd);
template <typename T>
void instance_norm_bwd_acc(Tensor<T>* gx, T* ggamma, T* gbeta, const Tensor<T>& gy,
                           const Tensor<T>& x, const T* gamma, const std::vector<double>& mean,
                           const std::vector<double>& inv_sd);

}  // namespace lptn::kernels
