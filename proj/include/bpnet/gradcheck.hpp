#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bpnet/nn.hpp"

namespace bpnet {

struct GradCheckOptions {
  double step = 1e-5;        // central difference step h
  double rtol = 1e-4;        // pass threshold on the relative error
  double denom_floor = 1e-6; // relative error is |a − n| / max(|a|, |n|, floor)
  std::size_t max_entries = 0;  // per tensor; 0 checks every entry
  std::uint64_t seed = 0;       // entry subsampling when max_entries > 0
  bool kink_retry = true;       // re-measure entries above rtol / 10 once at step / 10
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t entries = 0;
  std::size_t retried = 0;  // entries re-measured with the narrower stencil
  bool ok = true;
};

// Compares reverse-mode gradients of loss_fn() with respect to each input
// against central finite differences. loss_fn must rebuild the graph from the
// inputs' current values on every call and return a scalar.
std::vector<GradCheckResult> check_gradients(const std::function<Tensor()>& loss_fn,
                                             const std::vector<NamedTensor>& inputs,
                                             const GradCheckOptions& options = {});

// Σ out ⊙ R with R a fixed pseudo-random tensor; turns any output into a
// scalar whose gradient exercises every element.
Tensor projected_loss(const Tensor& out, std::uint64_t seed);

// Random tensor with entries uniform in [lo, hi).
Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = true);

}  // namespace bpnet
