#pragma once

#include <cstddef>
#include <vector>

#include "autodiff/tensor.hpp"

namespace tap::ad {

// Elementwise binary ops broadcast numpy-style (trailing dimensions aligned, size-1 dims stretch).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
// Gradient passes through inside [lo, hi] and is zero where clamped.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor softmax(const Tensor& x, std::size_t axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes);
// Minimum along one axis (removed). Subgradient flows to the first argmin only.
Tensor min(const Tensor& x, std::size_t axis);
// Indices of the (first) minimum along `axis`, in row-major order of the remaining dims.
std::vector<std::size_t> argmin(const Tensor& x, std::size_t axis);

// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [N,Cin,H,W], weight: [Cout,Cin,K,K], bias: [Cout] (may be empty Tensor via conv2d overload).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad);
Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t pad);
Tensor upsample_nearest2x(const Tensor& x);

// Backward warp: out[n,c,y,x] samples image at (x + flow[n,0,y,x], y + flow[n,1,y,x]) with
// bilinear interpolation and border clamping. Accepts [C,H,W]/[2,H,W] or batched [N,...].
Tensor bilinear_sample(const Tensor& image, const Tensor& flow);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
// Copy that is cut off from the tape.
Tensor detach(const Tensor& x);

}  // namespace tap::ad
