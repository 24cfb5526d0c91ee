#pragma once

#include <cstddef>
#include <span>

#include "advforge/tensor.hpp"

namespace advforge::ops {

// Elementwise; shapes must match exactly (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor square(const Tensor& a);
Tensor scale(const Tensor& a, float factor);
Tensor add_scalar(const Tensor& a, float value);

Tensor relu(const Tensor& a);
// Local gradient is 1 strictly inside (lo, hi), 0 at or beyond the bounds.
Tensor clamp(const Tensor& a, float lo, float hi);
// sign(0) == 0; gradient is zero everywhere.
Tensor sign(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// [n, k] x [k, m] -> [n, m]
Tensor matmul(const Tensor& a, const Tensor& b);
// x [n, in], weight [out, in], bias [out] -> x * weight^T + bias
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// x [n, cin, h, w], weight [cout, cin, kh, kw], bias [cout] (or undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dParams params = {});
// Non-overlapping windows when stride == kernel; output size floors.
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

Tensor reshape(const Tensor& a, Shape shape);
// [n, ...] -> [n, prod(...)]
Tensor flatten(const Tensor& a);
// Concatenate along the leading axis.
Tensor concat_rows(const Tensor& a, const Tensor& b);
// Rows [begin, end) along the leading axis.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);

/// Mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace advforge::ops
