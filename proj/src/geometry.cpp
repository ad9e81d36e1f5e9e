#include "bpnet/geometry.hpp"

#include <cmath>
#include <string>

#include "bpnet/ops.hpp"

namespace bpnet {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy) ||
      !std::isfinite(cx) || !std::isfinite(cy)) {
    throw DataError("camera intrinsics need finite values and positive focal lengths (fx=" +
                    std::to_string(fx) + ", fy=" + std::to_string(fy) + ")");
  }
}

CameraIntrinsics at_scale(const CameraIntrinsics& intr, std::size_t scale) {
  const double f = std::ldexp(1.0, static_cast<int>(scale));
  return {intr.fx / f, intr.fy / f, intr.cx / f, intr.cy / f};
}

CameraIntrinsics flipped_horizontally(const CameraIntrinsics& intr, std::size_t width) {
  CameraIntrinsics out = intr;
  out.cx = static_cast<double>(width) - 1.0 - intr.cx;
  return out;
}

Tensor inverse_project(const Tensor& depth, const CameraIntrinsics& intr) {
  Tensor d = depth;
  if (d.rank() == 3 && d.dim(0) == 1) d = reshape(d, {d.dim(1), d.dim(2)});
  if (d.rank() != 2) {
    throw ShapeError("inverse_project", "expected H×W depth, got " + shape_str(depth.shape()));
  }
  const std::size_t h = d.dim(0), w = d.dim(1);
  std::vector<double> ray_x(h * w), ray_y(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      ray_x[y * w + x] = (static_cast<double>(x) - intr.cx) / intr.fx;
      ray_y[y * w + x] = (static_cast<double>(y) - intr.cy) / intr.fy;
    }
  const Tensor px = mul(d, Tensor::from({h, w}, std::move(ray_x)));
  const Tensor py = mul(d, Tensor::from({h, w}, std::move(ray_y)));
  return concat({reshape(px, {1, h, w}), reshape(py, {1, h, w}), reshape(d, {1, h, w})}, 0);
}

}  // namespace bpnet
