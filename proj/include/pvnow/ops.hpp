#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pvnow/tensor.hpp"

namespace pvnow {

// Elementwise. The right operand may also be a single-element tensor (scalar broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// x [N,in], weight [out,in], bias [out] (optional) -> [N,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});
/// Adds bias [C] along axis 1 of x [N,C,...].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x [N,C,H,W], weight [O,C,kh,kw], bias [O] (optional) -> [N,O,Ho,Wo]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias = {},
              Conv2dGeometry geometry = {});
/// Non-overlapping window max pooling; ties go to the lowest flat index.
Tensor max_pool2d(const Tensor& x, std::size_t window = 2);
Tensor upsample_nearest2d(const Tensor& x, std::size_t factor = 2);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);
/// out[i] = x[indices[i]] along axis 0; backward scatter-adds in index order.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

struct BatchNormBuffers {
  Tensor running_mean;
  Tensor running_var;
};

/// Per-channel normalization over every axis except 1. In training mode batch
/// statistics are used and the running buffers are blended with `momentum`
/// weight on the old value; otherwise the running buffers are used.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormBuffers& buffers, bool training, double momentum, double eps);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor l2_norm(const Tensor& x);
/// Euclidean norm over every axis but the first: [N,...] -> [N]. Zero rows get zero gradient.
Tensor row_l2_norm(const Tensor& x);

}  // namespace pvnow
