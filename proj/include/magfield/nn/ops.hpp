#pragma once

#include <vector>

#include "magfield/nn/autograd.hpp"

namespace magfield::nn {

template <class T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}
template <class T>
Var<T> zeros(Shape s) {
  return Var<T>(Tensor<T>(s), false);
}

// Elementwise; shapes must match exactly (use broadcast_to otherwise).
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, double s);
template <class T> Var<T> add_scalar(const Var<T>& a, double s);
template <class T> Var<T> exp(const Var<T>& a);
/// a^p for a > 0 (any real p) or integer p.
template <class T> Var<T> pow(const Var<T>& a, double p);
template <class T> Var<T> abs(const Var<T>& a);
/// ELU with alpha = 1.
template <class T> Var<T> elu(const Var<T>& a);
/// k-th derivative of ELU evaluated at a (k >= 1).
template <class T> Var<T> elu_derivative(const Var<T>& a, int k);

/// Sum of all entries, shape (1,1,1,1).
template <class T> Var<T> sum(const Var<T>& a);
template <class T> Var<T> mean(const Var<T>& a);

/// Expands dimensions of size 1 to `to`.
template <class T> Var<T> broadcast_to(const Var<T>& a, Shape to);
/// Sums over the dimensions where `to` has size 1 (adjoint of broadcast_to).
template <class T> Var<T> reduce_to(const Var<T>& a, Shape to);

/// Mirror padding without edge repetition; padding wider than the plane
/// keeps reflecting.
template <class T> Var<T> reflect_pad(const Var<T>& a, int pad);
/// Adjoint of reflect_pad: folds the border back onto the interior.
template <class T> Var<T> reflect_fold(const Var<T>& a, int pad);

/// Valid cross-correlation, weight shape (out, in, k, k).
template <class T>
Var<T> conv(const Var<T>& x, const Var<T>& weight, int stride = 1, int dilation = 1);
/// Gradient of conv with respect to its input (transposed convolution).
template <class T>
Var<T> conv_input_grad(const Var<T>& gy, const Var<T>& weight, Shape x_shape, int stride,
                       int dilation);
/// Gradient of conv with respect to its weight.
template <class T>
Var<T> conv_weight_grad(const Var<T>& x, const Var<T>& gy, Shape w_shape, int stride,
                        int dilation);

/// Keeps every factor-th pixel starting at 0.
template <class T> Var<T> subsample(const Var<T>& a, int factor);
/// Adjoint of subsample: zeros between the samples, to shape `to`.
template <class T> Var<T> zero_insert(const Var<T>& a, int factor, Shape to);
/// Bilinear upsampling by an integer factor, half-pixel centres
/// (aligned corners off), edge-clamped.
template <class T> Var<T> upsample_bilinear(const Var<T>& a, int factor);
template <class T> Var<T> upsample_bilinear_adjoint(const Var<T>& a, int factor, Shape to);

/// Sub-block [start, start+len) along dim 0 (batch) or 1 (channels).
template <class T> Var<T> slice(const Var<T>& a, int dim, int start, int len);
/// Places `a` at offset `start` along `dim` in a zero tensor of shape `to`.
template <class T> Var<T> embed(const Var<T>& a, int dim, int start, Shape to);
template <class T> Var<T> concat(const std::vector<Var<T>>& parts, int dim);

/// Spatial window [r0, r0+h) x [c0, c0+w).
template <class T> Var<T> crop(const Var<T>& a, int r0, int c0, int h, int w);
template <class T> Var<T> place(const Var<T>& a, int r0, int c0, Shape to);

/// k x k patches of sample 0 of `a` centred at `centers` (row, col, all
/// windows inside the plane), shape (count, c, k, k).
template <class T>
Var<T> gather_patches(const Var<T>& a, const std::vector<std::pair<int, int>>& centers, int k);
template <class T>
Var<T> scatter_patches(const Var<T>& p, const std::vector<std::pair<int, int>>& centers, Shape to);

/// Unit-spacing derivative along x (columns) or y (rows): central inside,
/// second-order one-sided at the edges.
template <class T> Var<T> diff(const Var<T>& a, bool along_x);
template <class T> Var<T> diff_adjoint(const Var<T>& a, bool along_x);

}  // namespace magfield::nn
