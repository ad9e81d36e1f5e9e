#pragma once

#include "bpnet/geometry.hpp"
#include "bpnet/nn.hpp"

namespace bpnet {

// Encoder: per level two ResBlocks then a stride-2 Basic2d doubling the width.
// Decoder: Deconv back up, concat the encoder skip, Basic2d. Residual head:
// one 3×3 conv to a single channel, zero-initialized.
class FusionUNet {
 public:
  FusionUNet() = default;
  FusionUNet(ParameterStore& store, const std::string& name, std::size_t in_channels,
             std::size_t width, std::size_t depth, NormSettings norm);

  // x: in_channels×H×W → width×H×W
  Tensor features(const Tensor& x, bool training) const;

  std::size_t in_channels = 0, width = 0, depth = 0;
  Basic2d stem;
  std::vector<std::array<ResBlock, 2>> encoder;   // depth + 1 levels, last is the bottleneck
  std::vector<Basic2d> down;                      // depth
  std::vector<Deconv2d> up;                       // depth
  std::vector<Basic2d> merge;                     // depth
  Conv2d residual_head;
};

struct FusionOutput {
  Tensor fused;          // 𝐅^s
  Tensor depth;          // D'' = D' + residual
};

// Concatenates the image encoding with inverse_project(D') and runs the U-Net.
FusionOutput fuse(const Tensor& image_encoding, const Tensor& d_prime,
                  const CameraIntrinsics& intr, const FusionUNet& net, bool training);

}  // namespace bpnet
