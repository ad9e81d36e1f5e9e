// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when a gated criterion fails; the ablation trend (8) is reported but
// expected-flaky and does not affect the status.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "bpnet/bp_module.hpp"
#include "bpnet/error.hpp"
#include "bpnet/gradcheck.hpp"
#include "bpnet/harness.hpp"
#include "bpnet/io.hpp"
#include "bpnet/ops.hpp"
#include "bpnet/pipeline.hpp"
#include "bpnet/refinement.hpp"
#include "bpnet/sparse_depth.hpp"

using namespace bpnet;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  bool flaky;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor uniform(const Shape& s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::size_t n = 1;
  for (auto d : s) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return Tensor::from(s, std::move(v));
}

SparseDepthMap random_map(std::size_t h, std::size_t w, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(h * w);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  std::uniform_real_distribution<double> u(0.5, 9.0);
  SparseDepthMap m(h, w);
  for (std::size_t k = 0; k < count; ++k) m.set(idx[k] / w, idx[k] % w, u(rng));
  return m;
}

// ---- 1 -------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  double worst = 0.0;
  std::string where;
  std::size_t checks = 0;
  auto absorb = [&](const std::vector<GradCheckResult>& rs, const std::string& prefix) {
    for (const auto& r : rs) {
      ++checks;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        where = prefix + r.name;
      }
      o.pass = o.pass && r.ok && r.max_rel_error < 1e-4;
    }
  };
  absorb(op_gradient_suite(1), "");

  PipelineConfig cfg;
  cfg.scales = 1;
  cfg.widths = {4};
  cfg.mlp_hidden = 8;
  cfg.unet_depth = 1;
  cfg.height = cfg.width = 8;
  cfg.intrinsics = {8.0, 8.0, 3.5, 3.5};
  cfg.sparse_points = 12;
  absorb(pipeline_gradient_check(cfg, 1), "pipeline/");
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < 120.0;
  o.detail = std::to_string(checks) + " tensors, max rel error " + fmt("%.2e", worst) + " (" + where +
             "), " + fmt("%.1f s", secs);
  return o;
}

// ---- 2 -------------------------------------------------------------------

std::vector<std::size_t> nearest_sources(const SparseDepthMap& m, std::size_t y, std::size_t x) {
  std::vector<std::tuple<long, std::size_t>> all;
  for (std::size_t sy = 0; sy < m.height(); ++sy)
    for (std::size_t sx = 0; sx < m.width(); ++sx)
      if (m.is_valid(sy, sx)) {
        const long dx = long(sx) - long(x), dy = long(sy) - long(y);
        all.emplace_back(dx * dx + dy * dy, sy * m.width() + sx);
      }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (auto& [d, i] : all) out.push_back(i);
  return out;
}

Outcome propagation() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> ext(1, 16), nn(1, 4);
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = ext(rng), w = ext(rng), n = nn(rng);
    const std::size_t count = std::uniform_int_distribution<std::size_t>(1, h * w)(rng);
    const SparseDepthMap m = random_map(h, w, count, rng);
    const NeighborIndex nb = knn(m, n);
    const std::size_t per = std::min(n, count);
    if (nb.per_pixel != per) return {false, "neighbor count mismatch"};
    std::vector<double> a(h * w * per), b(a.size()), om(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = coef(rng);
      b[i] = coef(rng);
      om[i] = coef(rng);
    }
    const BilateralCoefficients c{Tensor::from({a.size()}, a), Tensor::from({a.size()}, b),
                                  Tensor::from({a.size()}, om), per};
    const Tensor out = propagate(m.depth().to_tensor(), c, nb);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const auto src = nearest_sources(m, y, x);
        double expect = 0.0;
        for (std::size_t k = 0; k < per; ++k) {
          const std::size_t q = (y * w + x) * per + k;
          expect += om[q] * (a[q] * m.depth().values[src[k]] + b[q]);
        }
        worst = std::max(worst, std::abs(out[y * w + x] - expect) / std::max(1.0, std::abs(expect)));
      }
  }
  bool exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    const SparseDepthMap m = random_map(13, 11, 1 + trial * 3, rng);
    const NeighborIndex nb = knn(m, 1);
    const Tensor out = propagate(m.depth().to_tensor(), nearest_coefficients(nb), nb);
    for (std::size_t y = 0; y < 13; ++y)
      for (std::size_t x = 0; x < 11; ++x)
        exact = exact && out[y * 11 + x] == m.depth().values[nearest_sources(m, y, x)[0]];
  }
  return {worst <= 1e-12 && exact, "50 instances, max error " + fmt("%.2e", worst) +
                                       "; nearest stub " + (exact ? "exact" : "NOT exact")};
}

// ---- 3 -------------------------------------------------------------------

std::vector<double> cspn_oracle(const std::vector<double>& d, const std::vector<double>& raw, std::size_t k,
                                std::size_t h, std::size_t w) {
  const int r = static_cast<int>(k / 2);
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto inside = [&](int dy, int dx) {
        const long sy = long(y) + dy, sx = long(x) + dx;
        return sy >= 0 && sx >= 0 && sy < long(h) && sx < long(w);
      };
      double z = 0.0;
      std::size_t c = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dx == 0 && dy == 0) continue;
          if (inside(dy, dx)) z += std::abs(raw[(c * h + y) * w + x]);
          ++c;
        }
      double acc = 0.0, ksum = 0.0;
      c = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dx == 0 && dy == 0) continue;
          if (z >= kAffinityFloor && inside(dy, dx)) {
            const double kj = raw[(c * h + y) * w + x] / z;
            acc += kj * d[(y + dy) * w + (x + dx)];
            ksum += kj;
          }
          ++c;
        }
      out[y * w + x] = (1.0 - ksum) * d[y * w + x] + acc;
    }
  return out;
}

Outcome refinement_suite() {
  std::mt19937_64 rng(11);
  double worst = 0.0, fixed = 0.0;
  bool identity = true;
  for (std::size_t k : {3, 5, 7}) {
    for (int trial = 0; trial < 5; ++trial) {
      const std::size_t h = 2 + rng() % 9, w = 2 + rng() % 9;
      const Tensor d = uniform({h, w}, rng, 0.5, 10.0);
      const Tensor raw = uniform({k * k - 1, h, w}, rng, -1.0, 1.0);
      const Tensor out = cspn_step(d, normalize_affinity(raw, k));
      const auto expect = cspn_oracle(values(d), values(raw), k, h, w);
      for (std::size_t i = 0; i < h * w; ++i)
        worst = std::max(worst, std::abs(out[i] - expect[i]) / std::max(1.0, std::abs(expect[i])));
    }
    const Tensor c = Tensor::full({7, 9}, 4.25);
    for (double v : values(cspn_step(c, normalize_affinity(uniform({k * k - 1, 7, 9}, rng, -1.0, 1.0), k))))
      fixed = std::max(fixed, std::abs(v - 4.25));
    const Tensor d = uniform({6, 6}, rng, 1.0, 5.0);
    identity = identity && values(cspn_step(d, normalize_affinity(Tensor::zeros({k * k - 1, 6, 6}), k))) == values(d);
  }

  const Tensor d = uniform({5, 5}, rng, 1.0, 2.0), s = uniform({5, 5}, rng, 5.0, 6.0);
  std::vector<std::uint8_t> valid(25, 0);
  for (std::size_t i : {2u, 7u, 19u}) valid[i] = 1;
  const Tensor one = Tensor::full({5, 5}, 1.0);
  const Tensor e = embed_sparse(d, s, valid, one);
  const bool idempotent = values(embed_sparse(e, s, valid, one)) == values(e);

  bool bounded = true;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t h = 5, w = 6;
    std::vector<std::vector<Tensor>> snaps(3);
    for (auto& per_kernel : snaps)
      for (int t = 0; t < 3; ++t) per_kernel.push_back(uniform({h, w}, rng, 0.0, 10.0));
    const Tensor base = uniform({h, w}, rng, -50.0, 50.0);
    const Tensor tau = softmax(uniform({3, h, w}, rng, -3.0, 3.0), 0);
    const Tensor sigma = softmax(uniform({3, h, w}, rng, -3.0, 3.0), 0);
    const Tensor out = combine(base, snaps, tau, sigma);
    for (std::size_t i = 0; i < h * w; ++i) {
      double lo = INFINITY, hi = -INFINITY;
      for (auto& kk : snaps)
        for (auto& t : kk) {
          lo = std::min(lo, t[i]);
          hi = std::max(hi, t[i]);
        }
      bounded = bounded && out[i] >= lo - 1e-12 && out[i] <= hi + 1e-12;
    }
  }
  const bool pass = worst <= 1e-12 && fixed <= 1e-12 && identity && idempotent && bounded;
  return {pass, "step error " + fmt("%.2e", worst) + ", constant drift " + fmt("%.2e", fixed) +
                    ", zero-affinity identity " + (identity ? "yes" : "no") + ", embed idempotent " +
                    (idempotent ? "yes" : "no") + ", combine in range " + (bounded ? "yes" : "no")};
}

// ---- 4 -------------------------------------------------------------------

Outcome identity_at_init() {
  const PipelineConfig cfg;
  Model model(cfg);
  bool equal = true;
  std::size_t compared = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Scene sc = synthetic_scene(cfg.height, cfg.width, cfg.intrinsics, seed);
    const SparseDepthMap sp = sample_sparse(sc.depth, cfg.sparse_points, seed + 50);
    for (bool training : {false, true}) {
      NoGradGuard ng;
      const DepthPyramid pyr = model.forward(sc.image, sp, sc.intrinsics, training);
      for (const ScaleOutputs& o : pyr.scales) {
        equal = equal && values(o.d_double_prime) == values(o.d_prime) && values(o.depth) == values(o.d_prime);
        ++compared;
      }
    }
  }
  return {equal, std::to_string(compared) + " scale outputs, D == D'' == D' " +
                     (equal ? "bitwise" : "violated")};
}

// ---- 5 -------------------------------------------------------------------

Outcome pooling() {
  std::mt19937_64 rng(5);
  double shift = 0.0, single = 0.0;
  bool or_rule = true;
  std::size_t singles = 0;
  for (std::size_t s : {1u, 2u, 3u}) {
    const std::size_t b = std::size_t{1} << s;
    const SparseDepthMap m = random_map(16, 24, 20 + 10 * s, rng);
    const Grid w = Grid::from_tensor(uniform({16, 24}, rng, -3.0, 3.0));
    Grid shifted = w;
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 24; ++x) shifted.at(y, x) += 7.0 * double((y / b) * 24 + x / b) - 40.0;
    const SparseDepthMap a = weighted_pool(m, w, s), c = weighted_pool(m, shifted, s);
    for (std::size_t i = 0; i < a.depth().size(); ++i)
      shift = std::max(shift, std::abs(a.depth().values[i] - c.depth().values[i]));
    for (std::size_t y = 0; y < a.height(); ++y)
      for (std::size_t x = 0; x < a.width(); ++x) {
        std::size_t n = 0;
        double only = 0.0;
        for (std::size_t dy = 0; dy < b; ++dy)
          for (std::size_t dx = 0; dx < b; ++dx)
            if (m.is_valid(y * b + dy, x * b + dx)) {
              ++n;
              only = m.at(y * b + dy, x * b + dx);
            }
        or_rule = or_rule && a.is_valid(y, x) == (n > 0);
        if (n == 1) {
          ++singles;
          single = std::max(single, std::abs(a.at(y, x) - only));
        }
      }
  }
  return {shift <= 1e-9 && single < 1e-6 && or_rule && singles > 0,
          "shift deviation " + fmt("%.2e", shift) + ", single-valid deviation " + fmt("%.2e", single) + " over " +
              std::to_string(singles) + " windows, validity OR " + (or_rule ? "exact" : "violated")};
}

// ---- 6 -------------------------------------------------------------------

Outcome metrics() {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.1, 20.0);
  double worst = 0.0;
  const auto thetas = default_thetas();
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng() % 7, w = 1 + rng() % 7;
    Grid pred(h, w), gt(h, w);
    std::vector<std::uint8_t> valid(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
      pred.values[i] = u(rng);
      gt.values[i] = u(rng);
      valid[i] = rng() % 3 != 0;
    }
    valid[rng() % (h * w)] = 1;
    double n = 0, se = 0, ae = 0, ise = 0, iae = 0, rel = 0;
    std::vector<double> within(thetas.size(), 0.0);
    for (std::size_t i = 0; i < h * w; ++i) {
      if (!valid[i]) continue;
      const double g = gt.values[i], p = pred.values[i];
      n += 1;
      se += (g - p) * (g - p);
      ae += std::fabs(g - p);
      ise += (1 / g - 1 / p) * (1 / g - 1 / p);
      iae += std::fabs(1 / g - 1 / p);
      rel += std::fabs(g - p) / g;
      for (std::size_t t = 0; t < thetas.size(); ++t) within[t] += (g / p < thetas[t] && p / g < thetas[t]);
    }
    const MetricReport r = compute_metrics(pred, gt, valid);
    auto err = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
    worst = std::max({worst, err(r.rmse, std::sqrt(se / n)), err(r.mae, ae / n), err(r.irmse, std::sqrt(ise / n)),
                      err(r.imae, iae / n), err(r.rel, rel / n)});
    for (std::size_t t = 0; t < thetas.size(); ++t) worst = std::max(worst, err(r.deltas[t], within[t] / n));
  }

  Grid pred(1, 2), gt(1, 2);
  pred.values = {2.0, 4.0};
  gt.values = {1.0, 5.0};
  const MetricReport r = compute_metrics(pred, gt, std::vector<std::uint8_t>{1, 1});
  auto sig5 = [](double got, double want) {
    return want == 0.0 ? got == 0.0 : std::abs(got - want) <= 0.5e-4 * std::abs(want);
  };
  const bool example = sig5(r.rmse, 1.0) && sig5(r.mae, 1.0) && sig5(r.rel, 0.6) && sig5(r.irmse, 0.35532) &&
                       sig5(r.imae, 0.275) && r.deltas[0] == 0.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "oracle max error %.2e; example rmse %.5g mae %.5g rel %.5g irmse %.5g imae %.5g d1 %g",
                worst, r.rmse, r.mae, r.rel, r.irmse, r.imae, r.deltas[0]);
  return {worst <= 1e-10 && example, buf};
}

// ---- 7 -------------------------------------------------------------------

Outcome overfit() {
  const PipelineConfig cfg;
  const std::vector<Scene> scene{synthetic_scene(32, 32, cfg.intrinsics, 0)};
  const auto t0 = std::chrono::steady_clock::now();
  Model a(cfg);
  const TrainResult ra = train(a, scene);
  const double secs = seconds_since(t0);
  Model b(cfg);
  const TrainResult rb = train(b, scene);
  const std::string csv_a = loss_csv_text(ra.losses), csv_b = loss_csv_text(rb.losses);
  const double ratio = ra.losses.back() / ra.losses.front();
  const bool same = csv_a == csv_b;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu steps, loss %.4g -> %.4g (%.1f%% of initial), loss CSVs %s, %.0f s per run",
                ra.losses.size(), ra.losses.front(), ra.losses.back(), 100.0 * ratio,
                same ? "bitwise equal" : "DIFFER", secs);
  return {ra.losses.size() == 500 && ratio <= 0.1 && same && secs < 600.0, buf};
}

// ---- 8 -------------------------------------------------------------------

Outcome ablation_trend() {
  // Desk benchmark: 32×32 synthetic scenes, 8 for training and 4 held out,
  // every variant trained for the same number of steps from the same seed.
  const std::size_t steps = 300;
  const auto grid = default_ablation_grid();
  const std::vector<AblationCell> cells{grid[0], grid[1], grid[2]};
  std::size_t wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    PipelineConfig cfg;
    cfg.steps = steps;
    cfg.seed = seed;
    std::vector<Scene> train_scenes, val_scenes;
    for (std::size_t i = 0; i < 8; ++i)
      train_scenes.push_back(synthetic_scene(32, 32, cfg.intrinsics, derive_seed(seed, 0x7472, i)));
    for (std::size_t i = 0; i < 4; ++i)
      val_scenes.push_back(synthetic_scene(32, 32, cfg.intrinsics, derive_seed(seed, 0x76616c, i)));
    const auto rows = ablation_run(cfg, cells, train_scenes, val_scenes);
    const double full = rows[0].metrics.rmse, content = rows[1].metrics.rmse, spatial = rows[2].metrics.rmse;
    const bool win = full <= content && full <= spatial;
    wins += win;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%sseed %llu: full %.4f, content_only %.4f, spatial_only %.4f m%s",
                  seed ? "; " : "", static_cast<unsigned long long>(seed), full, content, spatial, win ? "" : " (x)");
    detail += buf;
    for (const AblationRow& r : rows)
      if (!r.note.empty()) detail += " [" + r.cell.name + ": " + r.note + "]";
  }
  return {wins >= 2, std::to_string(wins) + "/3 seeds hold the ordering [" + detail + "]"};
}

// ---- 9 -------------------------------------------------------------------

Outcome sweep() {
  const PipelineConfig cfg;
  Model model(cfg);
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < 3; ++i) scenes.push_back(synthetic_scene(32, 32, cfg.intrinsics, 90 + i));

  SweepOptions opt;
  opt.counts = {25, 50, 75};
  opt.repeats = 3;
  opt.seed = 4;
  const auto base = sparsity_sweep(model, scenes, opt);
  SweepOptions other = opt;
  other.order.resize(opt.counts.size() * opt.repeats * scenes.size());
  for (std::size_t i = 0; i < other.order.size(); ++i) other.order[i] = i;
  std::shuffle(other.order.begin(), other.order.end(), std::mt19937_64(17));
  other.threads = 4;
  const bool invariant = sweep_csv(sparsity_sweep(model, scenes, other), "m") == sweep_csv(base, "m");

  opt.repeats = 1;
  const auto single = sparsity_sweep(model, scenes, opt);
  bool direct = true;
  for (std::size_t c = 0; c < opt.counts.size(); ++c) {
    std::vector<MetricReport> per;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const SparseDepthMap sp = sample_sparse(scenes[i].depth, opt.counts[c], derive_seed(opt.seed, opt.counts[c], 0, i));
      per.push_back(compute_metrics(predict(model, scenes[i].image, sp, scenes[i].intrinsics), scenes[i].depth,
                                    positive_mask(scenes[i].depth)));
    }
    const MetricReport d = average_reports(per);
    const MetricReport& m = single[c].mean;
    direct = direct && m.rmse == d.rmse && m.mae == d.mae && m.irmse == d.irmse && m.imae == d.imae &&
             m.rel == d.rel && m.deltas == d.deltas;
  }
  return {invariant && direct, std::string("3 counts x 3 repeats x 3 scenes; shuffled order + 4 threads ") +
                                   (invariant ? "identical" : "DIFFER") + "; R = 1 vs direct " +
                                   (direct ? "exact" : "DIFFER")};
}

// ---- 10 ------------------------------------------------------------------

Outcome constants() {
  const PipelineConfig cfg;
  std::vector<std::size_t> t;
  for (std::size_t s = 0; s < 6; ++s) t.push_back(step_schedule(s, 6));
  const bool schedule = t == std::vector<std::size_t>{12, 10, 8, 6, 4, 2};
  const bool snaps = snapshot_steps(12) == std::array<std::size_t, 3>{0, 6, 12};
  const auto lambdas = cfg.lambdas();
  bool lam = lambdas.size() == cfg.scales;
  for (std::size_t s = 0; s < lambdas.size(); ++s) lam = lam && lambdas[s] == std::pow(4.0, -double(s));
  const bool kernels = cfg.kernels == std::vector<std::size_t>{3, 5, 7};
  const bool n = cfg.n_neighbors == 4;
  const bool clip = cfg.clip_norm == 0.1;
  const bool wd = cfg.weight_decay == 0.05 && cfg.optimizer().weight_decay == 0.05;
  auto yn = [](bool b) { return b ? "ok" : "WRONG"; };
  char buf[200];
  std::snprintf(buf, sizeof buf, "T over 6 scales %s, snapshots %s, lambda %s, kernels %s, N %s, clip %s, wd %s",
                yn(schedule), yn(snaps), yn(lam), yn(kernels), yn(n), yn(clip), yn(wd));
  return {schedule && snaps && lam && kernels && n && clip && wd, buf};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "gradient integrity", false, gradients},
      {2, "propagation oracle", false, propagation},
      {3, "refinement suite", false, refinement_suite},
      {4, "identity at init", false, identity_at_init},
      {5, "weighted pooling", false, pooling},
      {6, "metrics", false, metrics},
      {7, "overfit sanity", false, overfit},
      {8, "ablation trend", true, ablation_trend},
      {9, "sparsity sweep", false, sweep},
      {10, "schedules and constants", false, constants},
  };
  const std::set<int> wanted(only.begin(), only.end());
  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %d %s: %s%s -- %s\n", c.id, c.title.c_str(), o.pass ? "PASS" : "FAIL",
                (!o.pass && c.flaky) ? " (expected-flaky, not gated)" : "", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass && !c.flaky) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
