#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bpnet/tensor.hpp"

// Differentiable operators. Spatial maps are C×H×W (or H×W where noted); the
// batch dimension is always 1 and therefore omitted.
namespace bpnet {

// Multiply-adds performed on this thread by matmul, linear, conv2d and
// conv_transpose2d (full k×k windows, padding included) plus any op that
// reports through it. Reset by assigning 0.
std::uint64_t& madds_counter();

// Elementwise. The second operand may also be a single-element tensor, which
// is broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor exp(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose(const Tensor& x);  // rank 2 only
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// Rows of a rank-2 tensor: out[q] = x[index[q]].
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
// Inverse of gather_rows: out[index[q]] += x[q], out has `rows` rows.
Tensor scatter_add_rows(const Tensor& x, std::span<const std::size_t> index, std::size_t rows);

Tensor matmul(const Tensor& a, const Tensor& b);
// x: M×K, weight: O×K, bias: O (may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// x: C×H×W, weight: O×C×k×k with odd k, bias: O (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
// x: C×H×W, weight: C×O×k×k. Output extent (H−1)·stride − 2·padding + k + output_padding.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t padding, std::size_t output_padding);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Normalizes each slice along `channel_axis` over all remaining axes. In
// training mode uses batch statistics and updates `stats`; otherwise uses the
// running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  bool training, std::size_t channel_axis);

// Softmax along `axis`. Entries whose mask byte is 0 are excluded and get
// probability 0. An empty mask means no masking.
Tensor softmax(const Tensor& x, std::size_t axis, std::span<const std::uint8_t> mask = {});

// Bilinear resize of the last two axes by an integer factor, half-pixel
// sampling with edge clamping.
Tensor bilinear_upsample(const Tensor& x, std::size_t factor);

// Periodic shuffle: (C·r²)×h×w → C×(h·r)×(w·r). Input channel c·r² + dy·r + dx
// lands at offset (dy, dx) inside each r×r output block.
Tensor pixel_shuffle(const Tensor& x, std::size_t r);

}  // namespace bpnet
