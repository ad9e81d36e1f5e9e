#pragma once

#include <functional>
#include <memory>

#include "bpnet/bp_module.hpp"
#include "bpnet/config.hpp"
#include "bpnet/fusion.hpp"
#include "bpnet/refinement.hpp"

namespace bpnet {

struct ScaleOutputs {
  Tensor sparse;                    // S^s, H_s×W_s
  std::vector<std::uint8_t> valid;  // 𝕀(S^s)
  Tensor image_feature;             // 𝐈^s
  Tensor image_encoding;            // 𝓘^s
  Tensor d_prime;                   // D'^s
  Tensor d_double_prime;            // D''^s
  Tensor depth;                     // D^s
  Tensor fused;                     // 𝐅^s
};

struct DepthPyramid {
  std::vector<ScaleOutputs> scales;  // index s, 0 = finest
  const Tensor& final_depth() const { return scales.front().depth; }
};

// All learnable state of the pipeline. Stage toggles decide which blocks
// exist, so parameter counts differ between variants.
class Model {
 public:
  explicit Model(const PipelineConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // image: image_channels×H×W with H, W divisible by cfg.required_multiple().
  DepthPyramid forward(const Tensor& image, const SparseDepthMap& sparse,
                       const CameraIntrinsics& intr, bool training) const;

  const PipelineConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

 private:
  Tensor image_features(const Tensor& image, bool training, std::vector<Tensor>& per_scale) const;

  PipelineConfig cfg_;
  ParameterStore store_;
  Basic2d stem_;
  std::vector<std::array<ResBlock, 2>> backbone_;
  std::vector<Conv2d> pool_logits_;    // index s ≥ 1: 𝐈^s → 4^s channels
  std::vector<EncodingMerge> merges_;  // index s < S−1
  std::vector<CoefficientMLP> mlps_;
  std::vector<FusionUNet> unets_;
  std::vector<Refinement> refiners_;
};

// Σ_s λ_s Σ_{valid} (gt − 𝕌_s(D^s))².
Tensor multiscale_loss(const DepthPyramid& pyramid, const Grid& gt,
                       std::span<const std::uint8_t> valid, const std::vector<double>& lambdas);

struct CropRecord {
  std::size_t height = 0, width = 0;            // original extents
  std::size_t padded_height = 0, padded_width = 0;
};

struct PaddedInput {
  Tensor image;
  SparseDepthMap sparse;
  CropRecord crop;
};

// Zero-pads bottom/right up to multiples of m; padded sparse pixels are invalid.
PaddedInput pad_to_multiple(const Tensor& image, const SparseDepthMap& sparse, std::size_t m);
Grid crop_valid(const Grid& padded, const CropRecord& crop);
Tensor crop_valid(const Tensor& padded, const CropRecord& crop);

struct Scene {
  Tensor image;  // 3×H×W in [0, 1]
  Grid depth;    // dense ground truth, meters
  CameraIntrinsics intrinsics;
};

// Piecewise-planar scene: a slanted background plane plus a few slanted
// boxes in front of it; the image is Lambertian-ish shading of the surfaces
// with per-surface albedo and texture noise, so depth edges are image edges.
Scene synthetic_scene(std::size_t height, std::size_t width, const CameraIntrinsics& intr,
                      std::uint64_t seed);
Scene flip_horizontally(const Scene& scene);

struct TrainResult {
  std::vector<double> losses;  // one per step, before the update
  std::size_t steps = 0;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

// Per step: pick scene step % n (flipped at random when cfg.hflip), draw
// cfg.sparse_points sparse points, forward, loss, backward, clip, AdamW.
// Throws NumericError naming the step when the loss is not finite.
TrainResult train(Model& model, const std::vector<Scene>& scenes, const StepCallback& on_step = {});

// Inference: eval-mode forward of one scene with the given sparse input.
Grid predict(const Model& model, const Tensor& image, const SparseDepthMap& sparse,
             const CameraIntrinsics& intr);

// Parameter utilities used by tests and the gradient check.
void perturb_parameters(ParameterStore& store, std::uint64_t seed, double magnitude);
void zero_parameters(ParameterStore& store);

}  // namespace bpnet
