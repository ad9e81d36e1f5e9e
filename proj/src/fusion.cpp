#include "bpnet/fusion.hpp"

#include "bpnet/error.hpp"

namespace bpnet {

FusionUNet::FusionUNet(ParameterStore& store, const std::string& name, std::size_t in_channels_,
                       std::size_t width_, std::size_t depth_, NormSettings norm)
    : in_channels(in_channels_), width(width_), depth(depth_) {
  stem = Basic2d(store, name + ".stem", in_channels, width, 1, norm);
  std::size_t c = width;
  for (std::size_t l = 0; l <= depth; ++l) {
    const std::string tag = name + ".enc" + std::to_string(l);
    encoder.push_back({ResBlock(store, tag + ".res0", c, c, 1, norm),
                       ResBlock(store, tag + ".res1", c, c, 1, norm)});
    if (l < depth) {
      down.emplace_back(store, tag + ".down", c, 2 * c, 2, norm);
      c *= 2;
    }
  }
  up.resize(depth);
  merge.resize(depth);
  for (std::size_t l = depth; l-- > 0;) {
    const std::string tag = name + ".dec" + std::to_string(l);
    up[l] = Deconv2d(store, tag + ".up", c, c / 2);
    merge[l] = Basic2d(store, tag + ".merge", c, c / 2, 1, norm);
    c /= 2;
  }
  residual_head = Conv2d(store, name + ".residual", width, 1, 3, 1, /*zero_init=*/true);
}

Tensor FusionUNet::features(const Tensor& x, bool training) const {
  if (x.rank() != 3 || x.dim(0) != in_channels) {
    throw ShapeError("fuse", x.shape(), {in_channels}, "input channels");
  }
  const std::size_t m = std::size_t{1} << depth;
  if (x.dim(1) % m != 0 || x.dim(2) % m != 0) {
    throw ShapeError("fuse", "extents " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                                 " must be divisible by " + std::to_string(m) + " (2^unet_depth)");
  }
  Tensor h = stem(x, training);
  std::vector<Tensor> skips;
  for (std::size_t l = 0; l <= depth; ++l) {
    h = encoder[l][1](encoder[l][0](h, training), training);
    if (l < depth) {
      skips.push_back(h);
      h = down[l](h, training);
    }
  }
  for (std::size_t l = depth; l-- > 0;) {
    h = merge[l](concat({up[l](h), skips[l]}, 0), training);
  }
  return h;
}

FusionOutput fuse(const Tensor& image_encoding, const Tensor& d_prime,
                  const CameraIntrinsics& intr, const FusionUNet& net, bool training) {
  if (d_prime.rank() != 2 || image_encoding.rank() != 3 ||
      image_encoding.dim(1) != d_prime.dim(0) || image_encoding.dim(2) != d_prime.dim(1)) {
    throw ShapeError("fuse", image_encoding.shape(), d_prime.shape(), "spatial extents");
  }
  FusionOutput out;
  out.fused = net.features(concat({image_encoding, inverse_project(d_prime, intr)}, 0), training);
  out.depth = add(d_prime, reshape(net.residual_head(out.fused), d_prime.shape()));
  return out;
}

}  // namespace bpnet
