#include "bpnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bpnet/error.hpp"

namespace bpnet {

Model::Model(const PipelineConfig& cfg) : cfg_(cfg), store_(cfg.seed) {
  cfg_.validate();
  const auto& w = cfg_.widths;
  const std::size_t S = cfg_.scales;
  const NormSettings norm = cfg_.norm;
  stem_ = Basic2d(store_, "backbone.stem", cfg_.image_channels, w[0], 1, norm);
  for (std::size_t s = 0; s < S; ++s) {
    const std::string tag = "backbone.s" + std::to_string(s);
    const std::size_t in = s == 0 ? w[0] : w[s - 1];
    backbone_.push_back({ResBlock(store_, tag + ".res0", in, w[s], s == 0 ? 1 : 2, norm),
                         ResBlock(store_, tag + ".res1", w[s], w[s], 1, norm)});
  }
  pool_logits_.resize(S);
  for (std::size_t s = 1; s < S; ++s) {
    pool_logits_[s] = Conv2d(store_, "pool.s" + std::to_string(s), w[s], std::size_t{1} << (2 * s), 3);
  }
  merges_.resize(S);
  for (std::size_t s = 0; s + 1 < S; ++s) {
    merges_[s] = EncodingMerge(store_, "encoding.s" + std::to_string(s), w[s], w[s + 1]);
  }
  mlps_.resize(S);
  unets_.resize(S);
  refiners_.resize(S);
  for (std::size_t s = 0; s < S; ++s) {
    const std::string tag = ".s" + std::to_string(s);
    if (cfg_.stages.pre && cfg_.propagation == Propagation::learned) {
      mlps_[s] = CoefficientMLP(store_, "mlp" + tag, w[s], cfg_.mlp_hidden, norm);
    }
    if (cfg_.stages.mf) unets_[s] = FusionUNet(store_, "fusion" + tag, w[s] + 3, w[s], cfg_.unet_depth, norm);
    if (cfg_.stages.post) refiners_[s] = Refinement(store_, "refine" + tag, w[s], cfg_.kernels);
  }
}

Tensor Model::image_features(const Tensor& image, bool training,
                             std::vector<Tensor>& per_scale) const {
  Tensor h = stem_(image, training);
  for (std::size_t s = 0; s < cfg_.scales; ++s) {
    h = backbone_[s][1](backbone_[s][0](h, training), training);
    per_scale.push_back(h);
  }
  return h;
}

DepthPyramid Model::forward(const Tensor& image, const SparseDepthMap& sparse,
                            const CameraIntrinsics& intr, bool training) const {
  const std::size_t S = cfg_.scales;
  if (image.rank() != 3 || image.dim(0) != cfg_.image_channels) {
    throw ShapeError("forward", image.shape(), {cfg_.image_channels}, "image channels");
  }
  const std::size_t H = image.dim(1), W = image.dim(2);
  if (sparse.height() != H || sparse.width() != W) {
    throw ShapeError("forward", image.shape(), {sparse.height(), sparse.width()}, "sparse extents");
  }
  const std::size_t m = cfg_.required_multiple();
  if (H % m != 0 || W % m != 0) {
    throw ShapeError("forward", "extents " + std::to_string(H) + "x" + std::to_string(W) +
                                    " must be divisible by " + std::to_string(m) + "; pad first");
  }
  if (sparse.count() == 0) throw DataError("forward: sparse input has no valid pixels");

  std::vector<Tensor> feats;
  image_features(image, training, feats);

  const Tensor s0 = sparse.depth().to_tensor();
  const std::vector<std::uint8_t> valid0(sparse.valid().begin(), sparse.valid().end());

  DepthPyramid pyr;
  pyr.scales.resize(S);
  std::optional<CoarserScale> coarser;
  for (std::size_t s = S; s-- > 0;) {
    ScaleOutputs& out = pyr.scales[s];
    const CameraIntrinsics intr_s = at_scale(intr, s);
    const std::size_t hs = H >> s, ws = W >> s;
    if (s == 0) {
      out.sparse = s0;
      out.valid = valid0;
    } else {
      const Tensor logits = shuffle_weights(pool_logits_[s](feats[s]), s);
      out.sparse = weighted_pool(s0, valid0, logits, s);
      out.valid = pooled_validity(valid0, H, W, s);
    }
    SparseDepthMap map_s(hs, ws);
    for (std::size_t i = 0; i < hs * ws; ++i) {
      if (!out.valid[i]) continue;
      if (!(out.sparse[i] > 0.0) || !std::isfinite(out.sparse[i])) {
        throw NumericError("forward: pooled sparse depth " + std::to_string(out.sparse[i]) +
                           " at scale " + std::to_string(s));
      }
      map_s.set(i / ws, i % ws, out.sparse[i]);
    }

    out.image_feature = feats[s];
    const std::size_t n = cfg_.propagation == Propagation::nearest ? 1 : cfg_.n_neighbors;
    PriorEncodings enc = build_prior_encodings(feats[s], coarser, coarser ? &merges_[s] : nullptr,
                                               intr_s, map_s, out.sparse, n);
    out.image_encoding = enc.image;

    if (!cfg_.stages.pre) {
      out.d_prime = out.sparse;
    } else if (cfg_.propagation == Propagation::nearest) {
      out.d_prime = propagate(out.sparse, nearest_coefficients(enc.neighbors), enc.neighbors);
    } else {
      CoefficientOptions opts;
      opts.mode = cfg_.ablation;
      opts.normalize_offsets = cfg_.normalize_offsets;
      opts.training = training;
      out.d_prime = propagate(out.sparse, generate_coefficients(enc, mlps_[s], opts), enc.neighbors);
    }

    if (cfg_.stages.mf) {
      FusionOutput f = fuse(enc.image, out.d_prime, intr_s, unets_[s], training);
      out.fused = f.fused;
      out.d_double_prime = f.depth;
    } else {
      out.fused = enc.image;
      out.d_double_prime = out.d_prime;
    }

    out.depth = cfg_.stages.post
                    ? refiners_[s](out.fused, out.d_double_prime, out.sparse, out.valid,
                                   step_schedule(s, S))
                          .depth
                    : out.d_double_prime;
    coarser = CoarserScale{out.fused, out.depth};
  }
  return pyr;
}

Tensor multiscale_loss(const DepthPyramid& pyramid, const Grid& gt,
                       std::span<const std::uint8_t> valid, const std::vector<double>& lambdas) {
  if (lambdas.size() != pyramid.scales.size()) {
    throw ShapeError("multiscale_loss", "need one λ per scale");
  }
  if (valid.size() != gt.size()) throw ShapeError("multiscale_loss", "validity mask size mismatch");
  std::vector<double> mask(gt.size());
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    mask[i] = valid[i] ? 1.0 : 0.0;
    n += valid[i] ? 1 : 0;
  }
  if (n == 0) throw DataError("multiscale_loss: no valid ground-truth pixels");
  const Tensor m = Tensor::from({gt.height, gt.width}, std::move(mask));
  const Tensor target = gt.to_tensor();
  Tensor total;
  for (std::size_t s = 0; s < pyramid.scales.size(); ++s) {
    const Tensor& d = pyramid.scales[s].depth;
    const Tensor up = s == 0 ? d : bilinear_upsample(d, std::size_t{1} << s);
    if (up.shape() != target.shape()) throw ShapeError("multiscale_loss", up.shape(), target.shape());
    const Tensor term = scale(sum(square(mul(sub(target, up), m))), lambdas[s]);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

PaddedInput pad_to_multiple(const Tensor& image, const SparseDepthMap& sparse, std::size_t m) {
  if (image.rank() != 3) throw ShapeError("pad_to_multiple", "image must be C×H×W");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (sparse.height() != h || sparse.width() != w) {
    throw ShapeError("pad_to_multiple", image.shape(), {sparse.height(), sparse.width()});
  }
  if (m == 0) throw ShapeError("pad_to_multiple", "multiple must be positive");
  const std::size_t ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  PaddedInput out;
  out.crop = {h, w, ph, pw};
  std::vector<double> img(c * ph * pw, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) img[(ch * ph + y) * pw + x] = image[(ch * h + y) * w + x];
  out.image = Tensor::from({c, ph, pw}, std::move(img));
  out.sparse = SparseDepthMap(ph, pw);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (sparse.is_valid(y, x)) out.sparse.set(y, x, sparse.at(y, x));
  return out;
}

Grid crop_valid(const Grid& padded, const CropRecord& crop) {
  if (padded.height != crop.padded_height || padded.width != crop.padded_width) {
    throw ShapeError("crop_valid", {padded.height, padded.width},
                     {crop.padded_height, crop.padded_width});
  }
  Grid out(crop.height, crop.width);
  for (std::size_t y = 0; y < crop.height; ++y)
    for (std::size_t x = 0; x < crop.width; ++x) out.at(y, x) = padded.at(y, x);
  return out;
}

Tensor crop_valid(const Tensor& padded, const CropRecord& crop) {
  if (padded.rank() == 2) return crop_valid(Grid::from_tensor(padded), crop).to_tensor();
  if (padded.rank() != 3) throw ShapeError("crop_valid", "expected H×W or C×H×W");
  const Tensor rows = slice(padded, 1, 0, crop.height);
  return slice(rows, 2, 0, crop.width);
}

namespace {

struct Plane {
  double d0, gx, gy;  // depth = d0 + gx·(x − cx) + gy·(y − cy)
  std::array<double, 3> albedo;
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // box extent, [x0, x1)
};

}  // namespace

Scene synthetic_scene(std::size_t height, std::size_t width, const CameraIntrinsics& intr,
                      std::uint64_t seed) {
  intr.validate();
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto ui = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  const double cx = 0.5 * static_cast<double>(width - 1), cy = 0.5 * static_cast<double>(height - 1);
  const double span = static_cast<double>(std::max(height, width));

  std::vector<Plane> planes;
  planes.push_back({u(4.5, 5.5), u(-1.5, 1.5) / span, u(-1.5, 1.5) / span,
                    {u(0.3, 0.9), u(0.3, 0.9), u(0.3, 0.9)}, 0, 0, width, height});
  const std::size_t boxes = ui(2, 3);
  const std::size_t min_side = std::max<std::size_t>(2, span / 6);
  const std::size_t max_side = std::max<std::size_t>(min_side, span / 2);
  for (std::size_t b = 0; b < boxes; ++b) {
    Plane p{u(1.5, 3.5), u(-0.8, 0.8) / span, u(-0.8, 0.8) / span,
            {u(0.1, 1.0), u(0.1, 1.0), u(0.1, 1.0)}};
    const std::size_t bw = std::min(width, ui(min_side, max_side));
    const std::size_t bh = std::min(height, ui(min_side, max_side));
    p.x0 = ui(0, width - bw);
    p.y0 = ui(0, height - bh);
    p.x1 = p.x0 + bw;
    p.y1 = p.y0 + bh;
    planes.push_back(p);
  }

  Scene sc;
  sc.intrinsics = intr;
  sc.depth = Grid(height, width);
  std::vector<double> img(3 * height * width);
  std::normal_distribution<double> noise(0.0, 0.03);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      double best = INFINITY;
      const Plane* hit = nullptr;
      for (const Plane& p : planes) {
        if (x < p.x0 || x >= p.x1 || y < p.y0 || y >= p.y1) continue;
        const double d = p.d0 + p.gx * (static_cast<double>(x) - cx) + p.gy * (static_cast<double>(y) - cy);
        if (d < best) {
          best = d;
          hit = &p;
        }
      }
      sc.depth.at(y, x) = best;
      // Shading falls off with depth; the slope term adds a gradient per face.
      const double shade = 0.35 + 0.65 * std::clamp(1.5 / best, 0.0, 1.0) +
                           4.0 * (hit->gx + hit->gy);
      for (std::size_t c = 0; c < 3; ++c) {
        img[(c * height + y) * width + x] = std::clamp(hit->albedo[c] * shade + noise(rng), 0.0, 1.0);
      }
    }
  sc.image = Tensor::from({3, height, width}, std::move(img));
  return sc;
}

Scene flip_horizontally(const Scene& scene) {
  const std::size_t c = scene.image.dim(0), h = scene.image.dim(1), w = scene.image.dim(2);
  Scene out;
  out.intrinsics = flipped_horizontally(scene.intrinsics, w);
  out.depth = Grid(h, w);
  std::vector<double> img(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      out.depth.at(y, x) = scene.depth.at(y, w - 1 - x);
      for (std::size_t ch = 0; ch < c; ++ch) img[(ch * h + y) * w + x] = scene.image[(ch * h + y) * w + w - 1 - x];
    }
  out.image = Tensor::from({c, h, w}, std::move(img));
  return out;
}

TrainResult train(Model& model, const std::vector<Scene>& scenes, const StepCallback& on_step) {
  if (scenes.empty()) throw DataError("train: no scenes");
  const PipelineConfig& cfg = model.config();
  const std::size_t m = cfg.required_multiple();
  for (const Scene& s : scenes) {
    if (s.depth.height % m != 0 || s.depth.width % m != 0) {
      throw DataError("train: scene extents must be divisible by " + std::to_string(m));
    }
  }
  ParameterStore& store = model.store();
  AdamW opt(store.parameters(), cfg.optimizer());
  const std::vector<double> lambdas = cfg.lambdas();
  std::mt19937_64 flip_rng(derive_seed(cfg.seed, 0x666c6970));

  TrainResult result;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Scene* scene = &scenes[step % scenes.size()];
    Scene flipped;
    if (cfg.hflip && std::bernoulli_distribution(0.5)(flip_rng)) {
      flipped = flip_horizontally(*scene);
      scene = &flipped;
    }
    const SparseDepthMap sparse =
        sample_sparse(scene->depth, cfg.sparse_points, derive_seed(cfg.seed, 1, step));
    std::vector<std::uint8_t> valid(scene->depth.size());
    for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = scene->depth.values[i] > 0.0;

    store.zero_grad();
    Tensor loss;
    try {
      loss = multiscale_loss(model.forward(scene->image, sparse, scene->intrinsics, true), scene->depth,
                             valid, lambdas);
    } catch (const NumericError& e) {
      throw NumericError("train: step " + std::to_string(step) + ": " + e.what());
    }
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("train: non-finite loss at step " + std::to_string(step));
    }
    loss.backward();
    clip_grad_norm(store.parameters(), cfg.clip_norm);
    opt.step();
    result.losses.push_back(value);
    result.steps = step + 1;
    if (on_step) on_step(step, value);
  }
  return result;
}

Grid predict(const Model& model, const Tensor& image, const SparseDepthMap& sparse,
             const CameraIntrinsics& intr) {
  NoGradGuard no_grad;
  const PaddedInput in = pad_to_multiple(image, sparse, model.config().required_multiple());
  const DepthPyramid pyr = model.forward(in.image, in.sparse, intr, false);
  return crop_valid(Grid::from_tensor(pyr.final_depth()), in.crop);
}

void perturb_parameters(ParameterStore& store, std::uint64_t seed, double magnitude) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-magnitude, magnitude);
  for (auto p : store.parameters())
    for (double& v : p.tensor.mutable_data()) v += u(rng);
}

void zero_parameters(ParameterStore& store) {
  for (auto p : store.parameters())
    for (double& v : p.tensor.mutable_data()) v = 0.0;
}

}  // namespace bpnet
