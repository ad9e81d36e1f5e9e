#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "bpnet/ops.hpp"

namespace bpnet {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Owns every trainable tensor and batch-norm buffer of a model, in
// registration order. Layers hold shared handles into it.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Tensor add(const std::string& name, Tensor value);
  Tensor uniform(const std::string& name, const Shape& shape, double bound);
  Tensor constant(const std::string& name, const Shape& shape, double value);
  BatchNormStats& add_stats(const std::string& name, std::size_t channels, double momentum,
                            double eps);

  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  // Parameters followed by running statistics (as "<bn>.running_mean" /
  // "<bn>.running_var"), the unit of checkpointing.
  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& state);

  void zero_grad();
  std::mt19937_64& rng() { return rng_; }

 private:
  void check_new(const std::string& name) const;

  std::vector<NamedTensor> params_;
  std::deque<std::pair<std::string, BatchNormStats>> stats_;
  std::mt19937_64 rng_;
};

struct NormSettings {
  double momentum = 0.1;
  double eps = 1e-5;
};

class Linear {
 public:
  Linear() = default;
  // Layers feeding a batch norm go without bias: the norm cancels it.
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
         bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  std::size_t in = 0, out = 0;
  Tensor weight, bias;
};

class Conv2d {
 public:
  Conv2d() = default;
  // zero_init gives an all-zero kernel and bias.
  Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, std::size_t stride = 1, bool zero_init = false, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  std::size_t in = 0, out = 0, kernel = 0, stride = 1;
  Tensor weight, bias;
};

// Stride-2 transposed convolution with a 3×3 kernel; exactly doubles extents.
class Deconv2d {
 public:
  Deconv2d() = default;
  Deconv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out);
  Tensor operator()(const Tensor& x) const;
  std::size_t in = 0, out = 0;
  Tensor weight, bias;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParameterStore& store, const std::string& name, std::size_t channels,
            NormSettings settings);
  Tensor operator()(const Tensor& x, bool training, std::size_t channel_axis) const;
  Tensor gamma, beta;
  BatchNormStats* stats = nullptr;
};

// conv3×3 → BN → GeLU
class Basic2d {
 public:
  Basic2d() = default;
  Basic2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
          std::size_t stride, NormSettings norm);
  Tensor operator()(const Tensor& x, bool training) const;
  Conv2d conv;
  BatchNorm bn;
};

// Two 3×3 convs with a projected shortcut when the shape changes.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
           std::size_t stride, NormSettings norm);
  Tensor operator()(const Tensor& x, bool training) const;
  Conv2d conv1, conv2, shortcut;
  BatchNorm bn1, bn2, bn_shortcut;
  bool projected = false;
};

}  // namespace bpnet
