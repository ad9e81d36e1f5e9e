#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "bpnet/grid.hpp"
#include "bpnet/tensor.hpp"

namespace bpnet {

// Depth raster where 0 marks an unknown pixel. valid(i) <=> depth(i) > 0.
class SparseDepthMap {
 public:
  SparseDepthMap() = default;
  SparseDepthMap(std::size_t height, std::size_t width);

  // Non-positive entries become invalid; NaN/inf and negative values throw.
  static SparseDepthMap from_grid(const Grid& depth);

  std::size_t height() const { return depth_.height; }
  std::size_t width() const { return depth_.width; }
  std::size_t count() const { return count_; }
  const Grid& depth() const { return depth_; }
  std::span<const std::uint8_t> valid() const { return valid_; }
  bool is_valid(std::size_t y, std::size_t x) const { return valid_[y * width() + x] != 0; }
  double at(std::size_t y, std::size_t x) const { return depth_.at(y, x); }

  // depth > 0 marks valid, 0 clears.
  void set(std::size_t y, std::size_t x, double depth);

 private:
  Grid depth_;
  std::vector<std::uint8_t> valid_;
  std::size_t count_ = 0;
};

// Per-pixel sorted nearest valid pixels. Entry k of pixel i lives at
// i * per_pixel + k.
struct NeighborIndex {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t per_pixel = 0;
  std::vector<std::size_t> source;           // row-major index of the valid pixel
  std::vector<std::array<int, 2>> offsets;   // (dx, dy) from target to source

  std::size_t pixels() const { return height * width; }
  std::size_t pairs() const { return source.size(); }
  // Row-major target index of every pair, i.e. pair / per_pixel.
  std::vector<std::size_t> targets() const;
};

// Uniform draw of exactly n_points positive pixels of dense_gt without
// replacement; deterministic per seed.
SparseDepthMap sample_sparse(const Grid& dense_gt, std::size_t n_points, std::uint64_t seed);

// The min(n, count) nearest valid pixels of every pixel by squared Euclidean
// distance, ties by row-major source index. Exact; expands square rings
// around each query until no unseen pixel can beat the current n-th best.
NeighborIndex knn(const SparseDepthMap& map, std::size_t n);

// Validity of the 2^s-downsampled map: OR over each disjoint window.
std::vector<std::uint8_t> pooled_validity(std::span<const std::uint8_t> valid, std::size_t height,
                                          std::size_t width, std::size_t scale);

inline constexpr double kPoolEpsilon = 1e-8;

// Content-weighted downsampling over disjoint 2^s×2^s windows:
//   out = Σ e^{w_j − max w} S_j / (Σ e^{w_j − max w} 𝕀(S_j) + ε)
// with the max over the window's valid pixels; windows without one give 0.
// Differentiable with respect to depth and logits (both H×W).
Tensor weighted_pool(const Tensor& depth, std::span<const std::uint8_t> valid,
                     const Tensor& logits, std::size_t scale);

SparseDepthMap weighted_pool(const SparseDepthMap& map, const Grid& logits, std::size_t scale);

// Periodic shuffle of a 4^s×(H/2^s)×(W/2^s) feature into an H×W logit map.
Tensor shuffle_weights(const Tensor& feature, std::size_t scale);

}  // namespace bpnet
