#pragma once

#include <optional>

#include "bpnet/geometry.hpp"
#include "bpnet/nn.hpp"
#include "bpnet/sparse_depth.hpp"

namespace bpnet {

enum class AblationMode { full, content_only, spatial_only };

const char* to_string(AblationMode mode);
AblationMode ablation_from_string(const std::string& name);

// Per-scale inputs to coefficient generation.
struct PriorEncodings {
  Tensor image;              // 𝓘^s, C×H×W
  Tensor depth;              // 𝓢^s = invproj(S^s), 3×H×W
  Tensor sparse;             // S^s, H×W, zero where invalid
  NeighborIndex neighbors;   // from knn over S^s
};

// Deconv + conv that merge the coarser scale into the image encoding.
struct EncodingMerge {
  EncodingMerge() = default;
  EncodingMerge(ParameterStore& store, const std::string& name, std::size_t image_channels,
                std::size_t coarse_channels);
  Deconv2d deconv;  // [F^{s+1}, invproj(D^{s+1})] → C_s, doubling extents
  Conv2d conv;      // [I^s, deconv(...)] → C_s
};

struct CoarserScale {
  Tensor fused;   // F^{s+1}
  Tensor depth;   // D^{s+1}
};

// intr is at scale s; the coarser depth is projected with at_scale(intr, 1).
// coarser/merge are required together except at the coarsest scale, where the
// image encoding is the image feature itself.
PriorEncodings build_prior_encodings(const Tensor& image_feature,
                                     const std::optional<CoarserScale>& coarser,
                                     const EncodingMerge* merge, const CameraIntrinsics& intr,
                                     const SparseDepthMap& map, const Tensor& sparse,
                                     std::size_t n_neighbors);

struct BilateralCoefficients {
  Tensor alpha;   // one entry per (target, neighbor) pair
  Tensor beta;
  Tensor omega;   // softmax over each target's neighbor list
  std::size_t per_pixel = 0;
};

// Linear → BN → GeLU ×4, the second layer's output added to the fourth's, then
// one linear head each for α, β and the ω logit.
class CoefficientMLP {
 public:
  CoefficientMLP() = default;
  CoefficientMLP(ParameterStore& store, const std::string& name, std::size_t image_channels,
                 std::size_t hidden, NormSettings norm);

  static std::size_t input_width(std::size_t image_channels) { return 2 * image_channels + 5; }

  // rows: pairs × input_width → {α, β, ω-logit} each of length pairs
  std::array<Tensor, 3> operator()(const Tensor& rows, bool training) const;

  std::size_t image_channels = 0, hidden = 0;
  std::array<Linear, 4> layers;
  std::array<BatchNorm, 4> norms;
  Linear alpha_head, beta_head, omega_head;
};

struct CoefficientOptions {
  AblationMode mode = AblationMode::full;
  bool normalize_offsets = true;  // divide 𝓞 by max(H_s, W_s)
  bool training = true;
};

// MLP input rows [𝓘_i, 𝓘_j, 𝓢_j, 𝓞_ij] for every pair, with the ablation's
// zeroing applied.
Tensor pair_inputs(const PriorEncodings& enc, const CoefficientOptions& options);

BilateralCoefficients generate_coefficients(const PriorEncodings& enc, const CoefficientMLP& mlp,
                                            const CoefficientOptions& options);

// D'_i = Σ_j ω_ij (α_ij S_j + β_ij); S is H×W.
Tensor propagate(const Tensor& sparse, const BilateralCoefficients& coeffs,
                 const NeighborIndex& neighbors);

// α = 1, β = 0, ω = 1 over a single-neighbor index: propagate then yields
// nearest-valid interpolation.
BilateralCoefficients nearest_coefficients(const NeighborIndex& neighbors);

}  // namespace bpnet
