#pragma once

#include <cstddef>
#include <vector>

#include "bpnet/tensor.hpp"

namespace bpnet {

// Plain single-channel H×W raster, row-major.
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::size_t size() const { return values.size(); }

  Tensor to_tensor(bool requires_grad = false) const;
  // Accepts H×W or 1×H×W.
  static Grid from_tensor(const Tensor& t);

  friend bool operator==(const Grid&, const Grid&) = default;
};

}  // namespace bpnet
