#include "bpnet/sparse_depth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "bpnet/ops.hpp"

namespace bpnet {

Tensor Grid::to_tensor(bool requires_grad) const {
  return Tensor::from({height, width}, values, requires_grad);
}

Grid Grid::from_tensor(const Tensor& t) {
  Grid g;
  if (t.rank() == 2) {
    g.height = t.dim(0);
    g.width = t.dim(1);
  } else if (t.rank() == 3 && t.dim(0) == 1) {
    g.height = t.dim(1);
    g.width = t.dim(2);
  } else {
    throw ShapeError("grid", "expected H×W or 1×H×W, got " + shape_str(t.shape()));
  }
  g.values.assign(t.data().begin(), t.data().end());
  return g;
}

SparseDepthMap::SparseDepthMap(std::size_t height, std::size_t width)
    : depth_(height, width), valid_(height * width, 0) {}

SparseDepthMap SparseDepthMap::from_grid(const Grid& depth) {
  SparseDepthMap m(depth.height, depth.width);
  for (std::size_t y = 0; y < depth.height; ++y)
    for (std::size_t x = 0; x < depth.width; ++x) {
      const double d = depth.at(y, x);
      if (!std::isfinite(d) || d < 0.0) {
        throw DataError("sparse depth at (" + std::to_string(x) + "," + std::to_string(y) +
                        ") is " + std::to_string(d) + "; expected 0 or a positive depth");
      }
      if (d > 0.0) m.set(y, x, d);
    }
  return m;
}

void SparseDepthMap::set(std::size_t y, std::size_t x, double depth) {
  if (!std::isfinite(depth) || depth < 0.0) throw DataError("invalid sparse depth value");
  const std::size_t i = y * width() + x;
  const bool was = valid_[i] != 0;
  const bool now = depth > 0.0;
  depth_.values[i] = depth;
  valid_[i] = now ? 1 : 0;
  if (was && !now) --count_;
  if (!was && now) ++count_;
}

std::vector<std::size_t> NeighborIndex::targets() const {
  std::vector<std::size_t> t(source.size());
  for (std::size_t p = 0; p < t.size(); ++p) t[p] = p / per_pixel;
  return t;
}

SparseDepthMap sample_sparse(const Grid& dense_gt, std::size_t n_points, std::uint64_t seed) {
  std::vector<std::size_t> positives;
  for (std::size_t i = 0; i < dense_gt.size(); ++i) {
    if (dense_gt.values[i] > 0.0) positives.push_back(i);
  }
  if (positives.size() < n_points) {
    throw DataError("cannot sample " + std::to_string(n_points) + " points: only " +
                    std::to_string(positives.size()) + " positive pixels available");
  }
  // Partial Fisher-Yates: the first n_points entries become the sample.
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < n_points; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, positives.size() - 1);
    std::swap(positives[k], positives[pick(rng)]);
  }
  SparseDepthMap m(dense_gt.height, dense_gt.width);
  for (std::size_t k = 0; k < n_points; ++k) {
    const std::size_t i = positives[k];
    m.set(i / dense_gt.width, i % dense_gt.width, dense_gt.values[i]);
  }
  return m;
}

NeighborIndex knn(const SparseDepthMap& map, std::size_t n) {
  if (map.count() == 0) throw DataError("knn: sparse map has no valid pixels");
  if (n == 0) throw DataError("knn: neighbor count must be positive");
  const std::size_t h = map.height(), w = map.width();
  const long long hh = static_cast<long long>(h), ww = static_cast<long long>(w);
  NeighborIndex index;
  index.height = h;
  index.width = w;
  index.per_pixel = std::min(n, map.count());
  const std::size_t k = index.per_pixel;
  index.source.resize(h * w * k);
  index.offsets.resize(h * w * k);

  struct Cand {
    long long d2;
    std::size_t src;
    bool operator<(const Cand& o) const { return d2 != o.d2 ? d2 < o.d2 : src < o.src; }
  };
  std::vector<Cand> best;
  best.reserve(k + 1);
  auto offer = [&](long long y, long long x, long long qy, long long qx) {
    if (y < 0 || x < 0 || y >= hh || x >= ww) return;
    if (!map.is_valid(static_cast<std::size_t>(y), static_cast<std::size_t>(x))) return;
    const Cand c{(y - qy) * (y - qy) + (x - qx) * (x - qx), static_cast<std::size_t>(y * ww + x)};
    if (best.size() == k && !(c < best.back())) return;
    best.insert(std::upper_bound(best.begin(), best.end(), c), c);
    if (best.size() > k) best.pop_back();
  };
  const long long max_r = std::max(hh, ww);

  for (long long qy = 0; qy < hh; ++qy)
    for (long long qx = 0; qx < ww; ++qx) {
      best.clear();
      for (long long r = 0; r <= max_r; ++r) {
        if (r == 0) {
          offer(qy, qx, qy, qx);
        } else {
          for (long long x = qx - r; x <= qx + r; ++x) {
            offer(qy - r, x, qy, qx);
            offer(qy + r, x, qy, qx);
          }
          for (long long y = qy - r + 1; y <= qy + r - 1; ++y) {
            offer(y, qx - r, qy, qx);
            offer(y, qx + r, qy, qx);
          }
        }
        // Unscanned pixels are at Chebyshev distance > r, hence d² >= (r+1)².
        if (best.size() == k && best.back().d2 < (r + 1) * (r + 1)) break;
      }
      const std::size_t base = static_cast<std::size_t>(qy * ww + qx) * k;
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t src = best[j].src;
        index.source[base + j] = src;
        index.offsets[base + j] = {static_cast<int>(static_cast<long long>(src % w) - qx),
                                   static_cast<int>(static_cast<long long>(src / w) - qy)};
      }
    }
  return index;
}

namespace {

void check_pool_extents(std::size_t h, std::size_t w, std::size_t scale) {
  const std::size_t f = std::size_t{1} << scale;
  if (scale == 0) throw ShapeError("weighted_pool", "scale must be >= 1");
  if (h % f != 0 || w % f != 0) {
    throw ShapeError("weighted_pool", "extents " + std::to_string(h) + "x" + std::to_string(w) +
                                          " not divisible by " + std::to_string(f));
  }
}

}  // namespace

std::vector<std::uint8_t> pooled_validity(std::span<const std::uint8_t> valid, std::size_t height,
                                          std::size_t width, std::size_t scale) {
  const std::size_t f = std::size_t{1} << scale;
  if (height % f != 0 || width % f != 0) {
    throw ShapeError("pooled_validity", "extents not divisible by " + std::to_string(f));
  }
  const std::size_t oh = height / f, ow = width / f;
  std::vector<std::uint8_t> out(oh * ow, 0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      if (valid[y * width + x]) out[(y / f) * ow + x / f] = 1;
  return out;
}

Tensor weighted_pool(const Tensor& depth, std::span<const std::uint8_t> valid,
                     const Tensor& logits, std::size_t scale) {
  if (depth.rank() != 2) throw ShapeError("weighted_pool", "depth must be H×W, got " + shape_str(depth.shape()));
  if (logits.shape() != depth.shape()) throw ShapeError("weighted_pool", depth.shape(), logits.shape());
  if (valid.size() != depth.numel()) throw ShapeError("weighted_pool", "validity mask size mismatch");
  const std::size_t h = depth.dim(0), w = depth.dim(1);
  check_pool_extents(h, w, scale);
  const std::size_t f = std::size_t{1} << scale;
  const std::size_t oh = h / f, ow = w / f;

  auto ds = depth.data(), ls = logits.data();
  // Per window: argmax position over valid pixels, numerator A, denominator
  // B + ε, and the shifted weights e^{w − max} for the backward pass. Invalid
  // pixels carry S_j = 𝕀(S_j) = 0 and are skipped outright, so the max is
  // taken where it matters and an unrelated large logit cannot push a lone
  // valid pixel below ε.
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> argmax(oh * ow, kNone);
  std::vector<double> num(oh * ow, 0.0), den(oh * ow, kPoolEpsilon), weight(h * w, 0.0);
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      std::size_t am = kNone;
      for (std::size_t y = oy * f; y < (oy + 1) * f; ++y)
        for (std::size_t x = ox * f; x < (ox + 1) * f; ++x) {
          const std::size_t i = y * w + x;
          if (valid[i] && (am == kNone || ls[i] > ls[am])) am = i;
        }
      if (am == kNone) continue;
      const double mx = ls[am];
      double a = 0.0, b = 0.0;
      for (std::size_t y = oy * f; y < (oy + 1) * f; ++y)
        for (std::size_t x = ox * f; x < (ox + 1) * f; ++x) {
          const std::size_t i = y * w + x;
          if (!valid[i]) continue;
          const double e = std::exp(ls[i] - mx);
          weight[i] = e;
          a += e * ds[i];
          b += e;
        }
      const std::size_t o = oy * ow + ox;
      argmax[o] = am;
      num[o] = a;
      den[o] = b + kPoolEpsilon;
      out[o] = a / den[o];
    }
  std::vector<std::uint8_t> mask(valid.begin(), valid.end());
  return make_result(
      {oh, ow}, std::move(out), {depth, logits},
      [=, argmax = std::move(argmax), num = std::move(num), den = std::move(den),
       weight = std::move(weight), mask = std::move(mask)](const detail::TensorImpl& g) {
        auto ds = depth.data();
        double* gd = grad_sink(depth);
        double* gl = grad_sink(logits);
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::size_t o = oy * ow + ox;
            const double go = g.grad[o];
            if (go == 0.0 || argmax[o] == kNone) continue;
            const double inv = 1.0 / den[o];
            const double ratio = num[o] * inv * inv;  // A / (B+ε)²
            double shift = 0.0;  // d out / d max, routed to the argmax logit
            for (std::size_t y = oy * f; y < (oy + 1) * f; ++y)
              for (std::size_t x = ox * f; x < (ox + 1) * f; ++x) {
                const std::size_t i = y * w + x;
                if (!mask[i]) continue;
                const double e = weight[i];
                if (gd) gd[i] += go * e * inv;
                // ∂out/∂w_i through e^{w_i − max}
                const double d = e * ds[i] * inv - e * ratio;
                if (gl) gl[i] += go * d;
                shift -= d;
              }
            if (gl) gl[argmax[o]] += go * shift;
          }
      });
}

SparseDepthMap weighted_pool(const SparseDepthMap& map, const Grid& logits, std::size_t scale) {
  if (logits.height != map.height() || logits.width != map.width()) {
    throw ShapeError("weighted_pool", {map.height(), map.width()}, {logits.height, logits.width});
  }
  NoGradGuard no_grad;
  const Tensor pooled =
      weighted_pool(map.depth().to_tensor(), map.valid(), logits.to_tensor(), scale);
  const auto validity = pooled_validity(map.valid(), map.height(), map.width(), scale);
  Grid g = Grid::from_tensor(pooled);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!validity[i]) g.values[i] = 0.0;
  }
  return SparseDepthMap::from_grid(g);
}

Tensor shuffle_weights(const Tensor& feature, std::size_t scale) {
  if (feature.rank() != 3) {
    throw ShapeError("shuffle_weights", "expected C×h×w, got " + shape_str(feature.shape()));
  }
  const std::size_t r = std::size_t{1} << scale;
  if (feature.dim(0) != r * r) {
    throw ShapeError("shuffle_weights", "scale " + std::to_string(scale) + " needs " +
                                            std::to_string(r * r) + " channels, got " +
                                            std::to_string(feature.dim(0)));
  }
  Tensor full = pixel_shuffle(feature, r);
  return reshape(full, {full.dim(1), full.dim(2)});
}

}  // namespace bpnet
