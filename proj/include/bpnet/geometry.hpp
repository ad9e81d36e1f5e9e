#pragma once

#include <cstddef>

#include "bpnet/tensor.hpp"

namespace bpnet {

// Pinhole intrinsics in pixels. Pixel (x, y) denotes the center of column x,
// row y with integer coordinates.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const;
  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

// All four parameters divided by 2^s.
CameraIntrinsics at_scale(const CameraIntrinsics& intr, std::size_t scale);

// Intrinsics after mirroring an image of the given width left-right.
CameraIntrinsics flipped_horizontally(const CameraIntrinsics& intr, std::size_t width);

// Depth (H×W or 1×H×W) → 3×H×W camera-space (X, Y, Z) with
// X = (x − c_x)/f_x · D, Y = (y − c_y)/f_y · D, Z = D. Differentiable in depth.
Tensor inverse_project(const Tensor& depth, const CameraIntrinsics& intr);

}  // namespace bpnet
