#include "bpnet/bp_module.hpp"

#include <algorithm>

#include "bpnet/error.hpp"

namespace bpnet {

const char* to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::full: return "full";
    case AblationMode::content_only: return "content_only";
    case AblationMode::spatial_only: return "spatial_only";
  }
  return "?";
}

AblationMode ablation_from_string(const std::string& name) {
  if (name == "full") return AblationMode::full;
  if (name == "content_only") return AblationMode::content_only;
  if (name == "spatial_only") return AblationMode::spatial_only;
  throw DataError("unknown ablation mode '" + name + "' (full, content_only, spatial_only)");
}

EncodingMerge::EncodingMerge(ParameterStore& store, const std::string& name,
                             std::size_t image_channels, std::size_t coarse_channels)
    : deconv(store, name + ".deconv", coarse_channels + 3, image_channels),
      conv(store, name + ".conv", 2 * image_channels, image_channels, 3) {}

PriorEncodings build_prior_encodings(const Tensor& image_feature,
                                     const std::optional<CoarserScale>& coarser,
                                     const EncodingMerge* merge, const CameraIntrinsics& intr,
                                     const SparseDepthMap& map, const Tensor& sparse,
                                     std::size_t n_neighbors) {
  if (image_feature.rank() != 3) {
    throw ShapeError("build_prior_encodings", "image feature must be C×H×W, got " +
                                                  shape_str(image_feature.shape()));
  }
  const std::size_t h = image_feature.dim(1), w = image_feature.dim(2);
  if (map.height() != h || map.width() != w || sparse.shape() != Shape{h, w}) {
    throw ShapeError("build_prior_encodings", image_feature.shape(), sparse.shape(),
                     "sparse depth extents");
  }
  PriorEncodings enc;
  if (!coarser) {
    enc.image = image_feature;
  } else {
    if (!merge) throw Error("build_prior_encodings: coarser scale given without merge layers");
    Tensor coarse = concat({coarser->fused, inverse_project(coarser->depth, at_scale(intr, 1))}, 0);
    Tensor up = merge->deconv(coarse);
    if (up.dim(1) != h || up.dim(2) != w) {
      throw ShapeError("build_prior_encodings", image_feature.shape(), up.shape(),
                       "upsampled coarser scale");
    }
    enc.image = merge->conv(concat({image_feature, up}, 0));
  }
  enc.sparse = sparse;
  enc.depth = inverse_project(sparse, intr);
  enc.neighbors = knn(map, n_neighbors);
  return enc;
}

CoefficientMLP::CoefficientMLP(ParameterStore& store, const std::string& name,
                               std::size_t image_channels_, std::size_t hidden_, NormSettings norm)
    : image_channels(image_channels_), hidden(hidden_) {
  std::size_t in = input_width(image_channels);
  for (std::size_t l = 0; l < 4; ++l) {
    const std::string tag = name + ".fc" + std::to_string(l + 1);
    layers[l] = Linear(store, tag, in, hidden, false);
    norms[l] = BatchNorm(store, tag + ".bn", hidden, norm);
    in = hidden;
  }
  alpha_head = Linear(store, name + ".alpha", hidden, 1);
  beta_head = Linear(store, name + ".beta", hidden, 1);
  omega_head = Linear(store, name + ".omega", hidden, 1);
  // α = 1, β = 0 at init: D' starts as the ω-weighted average of neighbor
  // depths, hence positive. ω keeps its random head.
  std::fill(alpha_head.bias.mutable_data().begin(), alpha_head.bias.mutable_data().end(), 1.0);
  for (Linear* head : {&alpha_head, &beta_head}) {
    auto w = head->weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
  }
}

std::array<Tensor, 3> CoefficientMLP::operator()(const Tensor& rows, bool training) const {
  Tensor h = rows, second;
  for (std::size_t l = 0; l < 4; ++l) {
    h = gelu(norms[l](layers[l](h), training, 1));
    if (l == 1) second = h;
  }
  h = add(h, second);
  const std::size_t p = rows.dim(0);
  return {reshape(alpha_head(h), {p}), reshape(beta_head(h), {p}), reshape(omega_head(h), {p})};
}

namespace {

// C×H×W → HW×C
Tensor pixel_rows(const Tensor& t) {
  return transpose(reshape(t, {t.dim(0), t.dim(1) * t.dim(2)}));
}

}  // namespace

Tensor pair_inputs(const PriorEncodings& enc, const CoefficientOptions& options) {
  const NeighborIndex& nb = enc.neighbors;
  const std::size_t h = enc.image.dim(1), w = enc.image.dim(2), c = enc.image.dim(0);
  if (nb.height != h || nb.width != w || enc.depth.shape() != Shape{3, h, w}) {
    throw ShapeError("generate_coefficients", enc.image.shape(), enc.depth.shape(),
                     "encodings and neighbor index disagree");
  }
  if (nb.per_pixel == 0) throw DataError("generate_coefficients: empty neighbor lists");
  const std::size_t p = nb.pairs();
  const std::vector<std::size_t> targets = nb.targets();

  Tensor img_i, img_j, dep_j;
  if (options.mode == AblationMode::spatial_only) {
    img_i = Tensor::zeros({p, c});
    img_j = Tensor::zeros({p, c});
    dep_j = Tensor::zeros({p, 3});
  } else {
    const Tensor rows = pixel_rows(enc.image);
    img_i = gather_rows(rows, targets);
    img_j = gather_rows(rows, nb.source);
    dep_j = gather_rows(pixel_rows(enc.depth), nb.source);
  }
  std::vector<double> off(p * 2, 0.0);
  if (options.mode != AblationMode::content_only) {
    const double norm = options.normalize_offsets ? static_cast<double>(std::max(h, w)) : 1.0;
    for (std::size_t q = 0; q < p; ++q) {
      off[2 * q] = nb.offsets[q][0] / norm;
      off[2 * q + 1] = nb.offsets[q][1] / norm;
    }
  }
  return concat({img_i, img_j, dep_j, Tensor::from({p, 2}, std::move(off))}, 1);
}

BilateralCoefficients generate_coefficients(const PriorEncodings& enc, const CoefficientMLP& mlp,
                                            const CoefficientOptions& options) {
  if (enc.image.dim(0) != mlp.image_channels) {
    throw ShapeError("generate_coefficients", enc.image.shape(), {mlp.image_channels},
                     "image channels vs MLP");
  }
  auto [alpha, beta, logits] = mlp(pair_inputs(enc, options), options.training);
  const std::size_t n = enc.neighbors.per_pixel, pixels = enc.neighbors.pixels();
  BilateralCoefficients out;
  out.alpha = alpha;
  out.beta = beta;
  out.omega = reshape(softmax(reshape(logits, {pixels, n}), 1), {pixels * n});
  out.per_pixel = n;
  return out;
}

Tensor propagate(const Tensor& sparse, const BilateralCoefficients& coeffs,
                 const NeighborIndex& neighbors) {
  const std::size_t h = neighbors.height, w = neighbors.width, n = neighbors.per_pixel;
  if (sparse.shape() != Shape{h, w}) {
    throw ShapeError("propagate", sparse.shape(), {h, w}, "sparse depth vs neighbor index");
  }
  const Shape pairs{neighbors.pairs()};
  if (coeffs.per_pixel != n || coeffs.alpha.shape() != pairs || coeffs.beta.shape() != pairs ||
      coeffs.omega.shape() != pairs) {
    throw ShapeError("propagate", coeffs.alpha.shape(), pairs, "coefficients vs neighbor pairs");
  }
  Tensor s_j = reshape(gather_rows(reshape(sparse, {h * w, 1}), neighbors.source), pairs);
  Tensor candidate = add(mul(coeffs.alpha, s_j), coeffs.beta);
  Tensor weighted = reshape(mul(coeffs.omega, candidate), {h * w, n});
  return reshape(sum(weighted, 1), {h, w});
}

BilateralCoefficients nearest_coefficients(const NeighborIndex& neighbors) {
  if (neighbors.per_pixel != 1) {
    throw ShapeError("nearest_coefficients", "needs a single-neighbor index, got " +
                                                 std::to_string(neighbors.per_pixel));
  }
  const std::size_t p = neighbors.pairs();
  BilateralCoefficients c;
  c.alpha = Tensor::full({p}, 1.0);
  c.beta = Tensor::zeros({p});
  c.omega = Tensor::full({p}, 1.0);
  c.per_pixel = 1;
  return c;
}

}  // namespace bpnet
