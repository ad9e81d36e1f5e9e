#pragma once

#include <cstdint>
#include <vector>

#include "bpnet/nn.hpp"

namespace bpnet {

struct AdamWSettings {
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay Adam. Moment buffers are kept per parameter in the
// order given at construction.
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, AdamWSettings settings);

  // Applies one update using the parameters' current grads. Throws
  // NumericError naming the first parameter with a non-finite gradient,
  // before anything is modified.
  void step();

  std::int64_t step_count() const { return step_; }
  const AdamWSettings& settings() const { return settings_; }

 private:
  std::vector<NamedTensor> params_;
  AdamWSettings settings_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t step_ = 0;
};

// Scales all grads so their global l2 norm is at most max_norm. Returns the
// norm before clipping. Parameters without a grad count as zero.
double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm);

}  // namespace bpnet
