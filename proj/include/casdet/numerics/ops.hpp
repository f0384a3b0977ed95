#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "casdet/numerics/autograd.hpp"

namespace casdet::numerics {

// Cross-correlation of x[C_in,H,W] with kernel[C_out,C_in,kH,kW] plus an
// optional per-channel bias[C_out]. Output is [C_out,H',W'] with
// H' = (H + 2*padding - kH) / stride + 1.
Var conv2d(const Var& input, const Var& kernel, const Var& bias, int stride,
           int padding);
inline Var conv2d(const Var& input, const Var& kernel, int stride,
                  int padding) {
  return conv2d(input, kernel, Var(), stride, padding);
}

Var relu(const Var& x);
Var sigmoid(const Var& x);

// Samples input[C,H,W] at points[P,2] (rows are (y, x) in cell units) with
// bilinear interpolation, reading zero outside the grid. Result is [C,P].
// Differentiable with respect to both the input values and the coordinates.
Var bilinear_sample(const Var& input, const Var& points);

// [M,K] x [K,N] -> [M,N].
Var matmul(const Var& a, const Var& b);

// Adds bias[M] along axis 0 of x[M,...].
Var add_bias(const Var& x, const Var& bias);

Var add(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var reshape(const Var& x, Shape shape);

// Output axis i is input axis perm[i].
Var permute(const Var& x, std::span<const std::size_t> perm);
inline Var permute(const Var& x, std::initializer_list<std::size_t> perm) {
  return permute(x, std::span<const std::size_t>(perm.begin(), perm.size()));
}

// Concatenates along axis 0; trailing dims must agree.
Var concat_rows(std::span<const Var> parts);

// Sum of all elements, as a [1] tensor.
Var sum(const Var& x);

// sum_i weights[i] * terms[i] over single-element terms.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

// Identity in the forward pass; multiplies the incoming gradient by `factor`.
// Used to corrupt a backward pass on purpose when testing the gradient checker.
Var scale_grad(const Var& x, double factor);

// Plain forward kernels shared by the differentiable ops and by code that
// needs the arithmetic without a graph.
namespace kernels {

struct BilinearTap {
  std::ptrdiff_t index[4];  // flat y*W+x, or -1 when outside the grid
  double weight[4];
  double fy = 0.0;  // fractional parts; zero taps have fy = fx = 0
  double fx = 0.0;
  bool inside = false;  // at least one neighbour lies on the grid
};

BilinearTap bilinear_tap(double y, double x, std::size_t height,
                         std::size_t width);

}  // namespace kernels

}  // namespace casdet::numerics
