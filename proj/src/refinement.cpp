#include "bpnet/refinement.hpp"

#include <cmath>

#include "bpnet/error.hpp"

namespace bpnet {

std::size_t step_schedule(std::size_t scale, std::size_t total_scales) {
  if (scale >= total_scales) {
    throw Error("step_schedule: scale " + std::to_string(scale) + " outside [0, " +
                std::to_string(total_scales) + ")");
  }
  return 2 * (total_scales - scale);
}

std::array<std::size_t, 3> snapshot_steps(std::size_t steps) { return {0, steps / 2, steps}; }

std::vector<std::array<int, 2>> window_offsets(std::size_t kernel) {
  if (kernel % 2 == 0 || kernel < 3) {
    throw ShapeError("cspn", "kernel size must be odd and >= 3, got " + std::to_string(kernel));
  }
  const int r = static_cast<int>(kernel / 2);
  std::vector<std::array<int, 2>> out;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dx != 0 || dy != 0) out.push_back({dx, dy});
  return out;
}

namespace {

void require_affinity_shape(const char* op, const Tensor& t, std::size_t kernel) {
  if (t.rank() != 3 || t.dim(0) != kernel * kernel - 1) {
    throw ShapeError(op, t.shape(), {kernel * kernel - 1},
                     "affinity needs k²−1 channels for k = " + std::to_string(kernel));
  }
}

// Neighbor location of channel c at (y, x), or -1 outside the image.
inline std::ptrdiff_t neighbor_at(const std::array<int, 2>& off, std::size_t y, std::size_t x,
                                  std::size_t h, std::size_t w) {
  const long ny = static_cast<long>(y) + off[1], nx = static_cast<long>(x) + off[0];
  if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) return -1;
  return ny * static_cast<long>(w) + nx;
}

}  // namespace

Affinity normalize_affinity(const Tensor& raw, std::size_t kernel) {
  const auto offsets = window_offsets(kernel);
  require_affinity_shape("normalize_affinity", raw, kernel);
  const std::size_t m = offsets.size(), h = raw.dim(1), w = raw.dim(2), plane = h * w;
  auto rs = raw.data();
  std::vector<double> out(rs.size(), 0.0), inv_z(plane, 0.0);
  std::vector<std::uint8_t> inside(rs.size(), 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      double z = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        if (neighbor_at(offsets[c], y, x, h, w) < 0) continue;
        inside[c * plane + i] = 1;
        z += std::abs(rs[c * plane + i]);
      }
      if (z < kAffinityFloor) continue;
      inv_z[i] = 1.0 / z;
      for (std::size_t c = 0; c < m; ++c)
        if (inside[c * plane + i]) out[c * plane + i] = rs[c * plane + i] * inv_z[i];
    }
  Tensor kappa = make_result(
      raw.shape(), std::move(out), {raw},
      [raw, m, plane, inv_z = std::move(inv_z), inside = std::move(inside)](
          const detail::TensorImpl& g) {
        double* gr = grad_sink(raw);
        auto rs = raw.data();
        for (std::size_t i = 0; i < plane; ++i) {
          if (inv_z[i] == 0.0) continue;
          // ∂κ_c/∂κ̂_l = δ_cl/Z − κ_c·sign(κ̂_l)/Z over inside channels
          double dot = 0.0;
          for (std::size_t c = 0; c < m; ++c) dot += g.grad[c * plane + i] * g.data[c * plane + i];
          for (std::size_t c = 0; c < m; ++c) {
            const std::size_t q = c * plane + i;
            if (!inside[q]) continue;
            const double sign = rs[q] > 0.0 ? 1.0 : (rs[q] < 0.0 ? -1.0 : 0.0);
            gr[q] += (g.grad[q] - sign * dot) * inv_z[i];
          }
        }
      });
  Affinity a;
  a.neighbors = kappa;
  a.center = add_scalar(scale(sum(kappa, 0), -1.0), 1.0);
  a.kernel = kernel;
  return a;
}

Tensor cspn_step(const Tensor& depth, const Affinity& kappa) {
  const auto offsets = window_offsets(kappa.kernel);
  require_affinity_shape("cspn_step", kappa.neighbors, kappa.kernel);
  const std::size_t h = kappa.neighbors.dim(1), w = kappa.neighbors.dim(2), plane = h * w;
  if (depth.shape() != Shape{h, w} || kappa.center.shape() != Shape{h, w}) {
    throw ShapeError("cspn_step", depth.shape(), kappa.neighbors.shape(), "depth vs affinity");
  }
  const std::size_t m = offsets.size();
  // Flat neighbor index per (channel, pixel), -1 outside.
  std::vector<std::ptrdiff_t> src(m * plane);
  for (std::size_t c = 0; c < m; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) src[c * plane + y * w + x] = neighbor_at(offsets[c], y, x, h, w);

  auto ds = depth.data(), ks = kappa.neighbors.data(), cs = kappa.center.data();
  madds_counter() += (m + 1) * plane;
  std::vector<double> out(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    double v = cs[i] * ds[i];
    for (std::size_t c = 0; c < m; ++c) {
      const std::ptrdiff_t j = src[c * plane + i];
      if (j >= 0) v += ks[c * plane + i] * ds[static_cast<std::size_t>(j)];
    }
    out[i] = v;
  }
  const Tensor nb = kappa.neighbors, center = kappa.center;
  return make_result(
      {h, w}, std::move(out), {depth, nb, center},
      [depth, nb, center, m, plane, src = std::move(src)](const detail::TensorImpl& g) {
        auto ds = depth.data(), ks = nb.data(), cs = center.data();
        double* gd = grad_sink(depth);
        double* gk = grad_sink(nb);
        double* gc = grad_sink(center);
        for (std::size_t i = 0; i < plane; ++i) {
          const double gi = g.grad[i];
          if (gd) gd[i] += cs[i] * gi;
          if (gc) gc[i] += ds[i] * gi;
          for (std::size_t c = 0; c < m; ++c) {
            const std::ptrdiff_t j = src[c * plane + i];
            if (j < 0) continue;
            const auto ju = static_cast<std::size_t>(j);
            if (gd) gd[ju] += ks[c * plane + i] * gi;
            if (gk) gk[c * plane + i] += ds[ju] * gi;
          }
        }
      });
}

Tensor embed_sparse(const Tensor& depth, const Tensor& sparse, std::span<const std::uint8_t> valid,
                    const Tensor& gamma) {
  if (depth.shape() != sparse.shape() || depth.shape() != gamma.shape() ||
      valid.size() != depth.numel()) {
    throw ShapeError("embed_sparse", depth.shape(), gamma.shape(), "depth, sparse, γ, mask");
  }
  std::vector<double> ind(valid.size());
  for (std::size_t i = 0; i < valid.size(); ++i) ind[i] = valid[i] ? 1.0 : 0.0;
  const Tensor g = mul(gamma, Tensor::from(depth.shape(), std::move(ind)));
  return add(mul(add_scalar(scale(g, -1.0), 1.0), depth), mul(g, sparse));
}

Tensor combine(const Tensor& base, const std::vector<std::vector<Tensor>>& snapshots,
               const Tensor& tau, const Tensor& sigma) {
  const std::size_t nk = snapshots.size();
  if (nk == 0 || base.rank() != 2) throw ShapeError("combine", "no snapshots or non-H×W base");
  const std::size_t nt = snapshots.front().size();
  const Shape hw = base.shape();
  const Shape tau_shape{nt, hw[0], hw[1]}, sigma_shape{nk, hw[0], hw[1]};
  if (tau.shape() != tau_shape || sigma.shape() != sigma_shape) {
    throw ShapeError("combine", tau.shape(), sigma.shape(), "τ/σ vs snapshot counts");
  }
  Tensor acc;
  for (std::size_t k = 0; k < nk; ++k) {
    if (snapshots[k].size() != nt) {
      throw Error("combine: kernel " + std::to_string(k) + " has " +
                  std::to_string(snapshots[k].size()) + " snapshots, expected " + std::to_string(nt));
    }
    const Tensor s_k = reshape(slice(sigma, 0, k, k + 1), hw);
    for (std::size_t t = 0; t < nt; ++t) {
      const Tensor& snap = snapshots[k][t];
      if (!snap.defined()) throw Error("combine: missing snapshot");
      if (snap.shape() != hw) throw ShapeError("combine", snap.shape(), hw, "snapshot");
      const Tensor w = mul(reshape(slice(tau, 0, t, t + 1), hw), s_k);
      const Tensor term = mul(w, sub(snap, base));
      acc = acc.defined() ? add(acc, term) : term;
    }
  }
  return add(base, acc);
}

Refinement::Refinement(ParameterStore& store, const std::string& name, std::size_t channels,
                       std::vector<std::size_t> kernels_)
    : kernels(std::move(kernels_)) {
  if (kernels.empty()) throw Error("refinement needs at least one kernel size");
  for (std::size_t k : kernels) {
    window_offsets(k);
    affinity.emplace_back(store, name + ".affinity" + std::to_string(k), channels, k * k - 1, 3);
  }
  gamma = Conv2d(store, name + ".gamma", channels, kernels.size(), 3);
  tau = Conv2d(store, name + ".tau", channels, 3, 3);
  sigma = Conv2d(store, name + ".sigma", channels, kernels.size(), 3);
  gate = store.constant(name + ".gate", {1}, 0.0);
}

RefinementResult Refinement::operator()(const Tensor& fused, const Tensor& depth,
                                        const Tensor& sparse, std::span<const std::uint8_t> valid,
                                        std::size_t steps) const {
  const Shape hw = depth.shape();
  const auto keep = snapshot_steps(steps);
  const Tensor gammas = sigmoid(gamma(fused));
  RefinementResult r;
  for (std::size_t k = 0; k < kernels.size(); ++k) {
    const Affinity kappa = normalize_affinity(affinity[k](fused), kernels[k]);
    const Tensor gamma_k = reshape(slice(gammas, 0, k, k + 1), hw);
    std::vector<Tensor> snaps(keep.size());
    Tensor d = depth;
    for (std::size_t t = 0; t <= steps; ++t) {
      if (t > 0) d = embed_sparse(cspn_step(d, kappa), sparse, valid, gamma_k);
      for (std::size_t s = 0; s < keep.size(); ++s)
        if (keep[s] == t) snaps[s] = d;
    }
    r.snapshots.push_back(std::move(snaps));
  }
  const Tensor combined = combine(depth, r.snapshots, softmax(tau(fused), 0),
                                  softmax(sigma(fused), 0));
  r.depth = add(depth, mul(sub(combined, depth), gate));
  return r;
}

}  // namespace bpnet
