#pragma once

// Differentiable tensor operations used by the generators, discriminators and
// losses. All operate on NCHW tensors; instantiated for float and double.

#include <cstdint>
#include <vector>

#include "cyclead/autograd.hpp"

namespace cyclead::ops {

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int padding = 0;
};

// Zero-padded convolution. weight: [Cout, Cin, k, k], bias: [1, Cout, 1, 1] (may be undefined).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry geom);

// Fractionally-strided convolution. weight: [Cin, Cout, k, k].
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        ConvGeometry geom, int output_padding);

template <typename T>
Var<T> reflection_pad2d(const Var<T>& x, int pad);

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x);

// Per-sample, per-channel normalization without affine parameters.
template <typename T>
Var<T> instance_norm(const Var<T>& x, double eps = 1e-5);

// While alive, relu/leaky_relu/abs/clamped_log append the branch taken by each
// element to `codes`. Finite-difference checks use it to spot kink crossings.
// One trace per thread; nesting is not supported.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::vector<std::int8_t> codes;
};

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope);
template <typename T>
Var<T> tanh(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, double factor);
template <typename T>
Var<T> add_scalar(const Var<T>& a, double offset);
template <typename T>
Var<T> abs(const Var<T>& a);
template <typename T>
Var<T> square(const Var<T>& a);
// log(clamp(a, eps, 1 - eps)); zero gradient where clamped.
template <typename T>
Var<T> clamped_log(const Var<T>& a, double eps);

// Mean over all elements, producing a 1x1x1x1 scalar.
template <typename T>
Var<T> mean(const Var<T>& a);

// Output extent of a convolution along one axis.
inline int conv_output_size(int input, ConvGeometry g) {
  return (input + 2 * g.padding - g.kernel) / g.stride + 1;
}

}  // namespace cyclead::ops
