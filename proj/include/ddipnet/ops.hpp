#pragma once

#include <cstddef>

#include "ddipnet/tensor.hpp"

// Differentiable operations. All image-like tensors are NCHW without the
// batch axis (C x H x W) unless noted. Every op is instantiated for float
// and double; the double build backs the gradient-check oracles.

namespace ddipnet {

/// [m x k] . [k x n] -> [m x n]
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Cross-correlation. kernels: [C_out x C_in x k x k], optional bias [C_out].
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      std::size_t stride, std::size_t pad);
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t pad);

/// Fractionally strided convolution, the adjoint of conv2d.
/// kernels: [C_in x C_out x k x k] (the same tensor conv2d would use to map
/// C_out -> C_in), optional bias [C_out].
/// Output side = (H - 1) * stride - 2 * pad + k.
template <class T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                std::size_t stride, std::size_t pad);
template <class T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                const BasicTensor<T>& bias, std::size_t stride, std::size_t pad);

/// Gradient goes to the first maximal element in scan order.
template <class T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, std::size_t size, std::size_t stride);

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <class T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope);
template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& x);

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T k);
template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T k);

/// Sum of all entries, shape [1].
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x);

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

/// 2-D transpose.
template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x);

/// Euclidean norm over all entries, shape [1]. Gradient at the origin is 0.
template <class T>
BasicTensor<T> l2_norm(const BasicTensor<T>& v);

/// Q(v) = |v|^2 / (1 + |v|^2) * v / |v|, with Q(0) = 0 and zero gradient there.
template <class T>
BasicTensor<T> squash(const BasicTensor<T>& v);

/// Per-channel normalization for [C x H x W] or [N x C x H x W].
/// Training mode normalizes with batch statistics (biased variance) and, when
/// running buffers are given, updates them with `momentum`. Eval mode uses
/// the running buffers.
template <class T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                           const BasicTensor<T>& beta, BasicTensor<T> running_mean,
                           BasicTensor<T> running_var, T eps, T momentum, Mode mode);

}  // namespace ddipnet
