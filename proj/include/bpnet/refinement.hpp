#pragma once

#include <array>
#include <span>
#include <vector>

#include "bpnet/nn.hpp"

namespace bpnet {

// T = 2·(S − s): 2 at the coarsest scale up to 2S at the finest.
std::size_t step_schedule(std::size_t scale, std::size_t total_scales);
// Snapshot steps {0, ⌊T/2⌋, T}.
std::array<std::size_t, 3> snapshot_steps(std::size_t steps);

// Neighbor offsets (dx, dy) of a k×k window without its centre, row-major.
// Channel c of an affinity tensor refers to offsets[c].
std::vector<std::array<int, 2>> window_offsets(std::size_t kernel);

struct Affinity {
  Tensor neighbors;  // κ_j, (k²−1)×H×W
  Tensor center;     // κ_i = 1 − Σ κ_j, H×W
  std::size_t kernel = 0;
};

inline constexpr double kAffinityFloor = 1e-12;

// κ_j = κ̂_j / Σ|κ̂|. Neighbors outside the image are dropped before the sum
// (their κ is 0), and a pixel with Σ|κ̂| < 1e-12 gets κ_j = 0, κ_i = 1.
Affinity normalize_affinity(const Tensor& raw, std::size_t kernel);

// One synchronous update D̂_i ← κ_i D̂_i + Σ_j κ_j D̂_j over H×W.
Tensor cspn_step(const Tensor& depth, const Affinity& kappa);

// (1 − γ𝕀(S)) D̂ + γ𝕀(S) S, all H×W.
Tensor embed_sparse(const Tensor& depth, const Tensor& sparse, std::span<const std::uint8_t> valid,
                    const Tensor& gamma);

// base + Σ_t Σ_k τ_t σ_k (D̂_{k,t} − base), i.e. Σ_t Σ_k τ_t σ_k D̂_{k,t} when
// Στ = Σσ = 1. snapshots[k][t]; τ is |𝒯|×H×W, σ is |𝒦|×H×W.
Tensor combine(const Tensor& base, const std::vector<std::vector<Tensor>>& snapshots,
               const Tensor& tau, const Tensor& sigma);

struct RefinementResult {
  Tensor depth;
  std::vector<std::vector<Tensor>> snapshots;  // [kernel][snapshot]
};

// Generators for κ̂, γ, τ, σ (one 3×3 conv each on the fused feature) and the
// propagation itself. The result is D'' + g·(combine(...) − D'') with a
// learnable gate g that starts at 0, so a fresh head returns D'' exactly.
class Refinement {
 public:
  Refinement() = default;
  Refinement(ParameterStore& store, const std::string& name, std::size_t channels,
             std::vector<std::size_t> kernels);

  RefinementResult operator()(const Tensor& fused, const Tensor& depth, const Tensor& sparse,
                              std::span<const std::uint8_t> valid, std::size_t steps) const;

  std::vector<std::size_t> kernels;
  std::vector<Conv2d> affinity;
  Conv2d gamma, tau, sigma;
  Tensor gate;
};

}  // namespace bpnet
