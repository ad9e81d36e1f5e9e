#include "bpnet/harness.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "bpnet/error.hpp"

namespace bpnet {

std::vector<double> default_thetas() { return {1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25}; }

MetricReport compute_metrics(const Grid& pred, const Grid& gt, std::span<const std::uint8_t> valid,
                             const std::vector<double>& thetas, bool inverse) {
  if (pred.height != gt.height || pred.width != gt.width || valid.size() != gt.size()) {
    throw ShapeError("compute_metrics", {pred.height, pred.width}, {gt.height, gt.width});
  }
  MetricReport r;
  r.thetas = thetas;
  r.deltas.assign(thetas.size(), 0.0);
  double se = 0.0, ae = 0.0, ise = 0.0, iae = 0.0, rel = 0.0;
  std::vector<std::size_t> hits(thetas.size(), 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!valid[i]) continue;
    const double g = gt.values[i], p = pred.values[i];
    if (!(g > 0.0) || !std::isfinite(g)) {
      throw DataError("compute_metrics: ground truth must be positive on valid pixels");
    }
    if (!std::isfinite(p) || (inverse && !(p > 0.0))) {
      throw NumericError("compute_metrics: prediction " + std::to_string(p) + " at pixel " +
                         std::to_string(i) + " is not positive");
    }
    const double d = g - p;
    se += d * d;
    ae += std::abs(d);
    rel += std::abs(d) / g;
    ++r.pixels;
    if (!(p > 0.0)) {  // only reachable without inverse metrics; outside every δ
      ++r.nonpositive;
      continue;
    }
    const double id = 1.0 / g - 1.0 / p;
    ise += id * id;
    iae += std::abs(id);
    const double ratio = std::max(g / p, p / g);
    for (std::size_t t = 0; t < thetas.size(); ++t)
      if (ratio < thetas[t]) ++hits[t];
  }
  if (r.pixels == 0) throw DataError("compute_metrics: no valid pixels");
  const double n = static_cast<double>(r.pixels);
  r.rmse = std::sqrt(se / n);
  r.mae = ae / n;
  r.irmse = inverse ? std::sqrt(ise / n) : std::nan("");
  r.imae = inverse ? iae / n : std::nan("");
  r.rel = rel / n;
  for (std::size_t t = 0; t < thetas.size(); ++t) r.deltas[t] = static_cast<double>(hits[t]) / n;
  return r;
}

MetricReport average_reports(std::span<const MetricReport> reports) {
  if (reports.empty()) throw DataError("average_reports: nothing to average");
  MetricReport m;
  m.thetas = reports.front().thetas;
  m.deltas.assign(m.thetas.size(), 0.0);
  m.samples = reports.size();
  for (const MetricReport& r : reports) {
    m.rmse += r.rmse;
    m.mae += r.mae;
    m.irmse += r.irmse;
    m.imae += r.imae;
    m.rel += r.rel;
    for (std::size_t t = 0; t < m.deltas.size(); ++t) m.deltas[t] += r.deltas[t];
    m.pixels += r.pixels;
    m.nonpositive += r.nonpositive;
  }
  const double n = static_cast<double>(reports.size());
  m.rmse /= n;
  m.mae /= n;
  m.irmse /= n;
  m.imae /= n;
  m.rel /= n;
  for (double& d : m.deltas) d /= n;
  return m;
}

DisplayMetrics display_metrics(const MetricReport& r, const std::string& units) {
  const double k = units == "mm" ? 1000.0 : 1.0;
  return {r.rmse * k, r.mae * k, r.irmse * 1000.0, r.imae * 1000.0, r.rel, r.deltas};
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string theta_name(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "delta_%.6g", t);
  return buf;
}

std::string metric_fields(const MetricReport& r, const std::string& units) {
  const DisplayMetrics d = display_metrics(r, units);
  std::string s = fmt(d.rmse) + "," + fmt(d.mae) + "," + fmt(d.irmse) + "," + fmt(d.imae) + "," + fmt(d.rel);
  for (double v : d.deltas) s += "," + fmt(v);
  return s;
}

std::string metric_names(const std::vector<double>& thetas, const std::string& prefix = "") {
  std::string s;
  for (const char* n : {"rmse", "mae", "irmse", "imae", "rel"}) s += (s.empty() ? "" : ",") + prefix + n;
  for (double t : thetas) s += "," + prefix + theta_name(t);
  return s;
}

}  // namespace

std::string metrics_csv_header(const std::vector<double>& thetas) {
  return metric_names(thetas) + ",pixels";
}

std::string metrics_csv_row(const MetricReport& r, const std::string& units) {
  return metric_fields(r, units) + "," + std::to_string(r.pixels);
}

std::vector<std::uint8_t> positive_mask(const Grid& g) {
  std::vector<std::uint8_t> m(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) m[i] = g.values[i] > 0.0;
  return m;
}

std::vector<SweepRow> sparsity_sweep(const Model& model, const std::vector<Scene>& scenes,
                                     const SweepOptions& options) {
  if (scenes.empty()) throw DataError("sparsity_sweep: no scenes");
  if (options.repeats == 0) throw DataError("sparsity_sweep: repeats must be >= 1");
  const std::size_t nc = options.counts.size(), nr = options.repeats, ns = scenes.size();

  std::vector<std::size_t> supply(ns);
  for (std::size_t i = 0; i < ns; ++i) {
    const auto m = positive_mask(scenes[i].depth);
    supply[i] = static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
  }
  std::vector<std::uint8_t> runnable(nc, 1);
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t i = 0; i < ns; ++i)
      if (options.counts[c] > supply[i] || options.counts[c] == 0) runnable[c] = 0;

  const std::size_t cells = nc * nr * ns;
  std::vector<std::size_t> order = options.order;
  if (order.empty()) {
    order.resize(cells);
    std::iota(order.begin(), order.end(), std::size_t{0});
  }
  if (order.size() != cells) throw DataError("sparsity_sweep: order must list every cell once");

  std::vector<MetricReport> results(cells);
  auto run_cell = [&](std::size_t cell) {
    const std::size_t c = cell / (nr * ns), r = (cell / ns) % nr, i = cell % ns;
    if (!runnable[c]) return;
    const Scene& sc = scenes[i];
    const SparseDepthMap sparse =
        sample_sparse(sc.depth, options.counts[c], derive_seed(options.seed, options.counts[c], r, i));
    const Grid pred = predict(model, sc.image, sparse, sc.intrinsics);
    results[cell] = compute_metrics(pred, sc.depth, positive_mask(sc.depth));
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, cells));
  if (threads == 1) {
    for (std::size_t k : order) run_cell(k);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t k = t; k < order.size(); k += threads) run_cell(order[k]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  // Fixed-order reduction: scenes within a repeat, then repeats.
  std::vector<SweepRow> rows;
  for (std::size_t c = 0; c < nc; ++c) {
    SweepRow row;
    row.count = options.counts[c];
    if (!runnable[c]) {
      row.skipped = true;
      row.note = "skipped: " + std::to_string(row.count) + " points exceed the positive pixels of a scene";
      rows.push_back(row);
      continue;
    }
    std::vector<MetricReport> per_repeat;
    for (std::size_t r = 0; r < nr; ++r) {
      const auto first = results.begin() + static_cast<std::ptrdiff_t>((c * nr + r) * ns);
      per_repeat.push_back(average_reports(std::span<const MetricReport>(&*first, ns)));
    }
    row.repeats = nr;
    row.mean = average_reports(per_repeat);
    row.stddev = row.mean;
    auto sd = [&](auto field) {
      double acc = 0.0;
      for (const auto& r : per_repeat) {
        const double d = field(r) - field(row.mean);
        acc += d * d;
      }
      return std::sqrt(acc / static_cast<double>(nr));
    };
    row.stddev.rmse = sd([](const MetricReport& m) { return m.rmse; });
    row.stddev.mae = sd([](const MetricReport& m) { return m.mae; });
    row.stddev.irmse = sd([](const MetricReport& m) { return m.irmse; });
    row.stddev.imae = sd([](const MetricReport& m) { return m.imae; });
    row.stddev.rel = sd([](const MetricReport& m) { return m.rel; });
    for (std::size_t t = 0; t < row.mean.deltas.size(); ++t)
      row.stddev.deltas[t] = sd([t](const MetricReport& m) { return m.deltas[t]; });
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& units) {
  const std::vector<double> thetas = default_thetas();
  std::string out = "count,repeats,status," + metric_names(thetas, "mean_") + "," +
                    metric_names(thetas, "std_") + "\n";
  for (const SweepRow& r : rows) {
    if (r.skipped) {
      out += std::to_string(r.count) + ",0," + r.note + "\n";
      continue;
    }
    out += std::to_string(r.count) + "," + std::to_string(r.repeats) + ",ok," +
           metric_fields(r.mean, units) + "," + metric_fields(r.stddev, units) + "\n";
  }
  return out;
}

MetricReport evaluate(const Model& model, const std::vector<Scene>& scenes, std::size_t points,
                      std::uint64_t seed, bool inverse) {
  std::vector<MetricReport> per_scene;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& sc = scenes[i];
    const SparseDepthMap sparse = sample_sparse(sc.depth, points, derive_seed(seed, 0x65, i));
    const Grid pred = predict(model, sc.image, sparse, sc.intrinsics);
    per_scene.push_back(compute_metrics(pred, sc.depth, positive_mask(sc.depth), default_thetas(), inverse));
  }
  return average_reports(per_scene);
}

std::vector<AblationCell> default_ablation_grid() {
  return {
      {"full", AblationMode::full, {true, true, true}},
      {"content_only", AblationMode::content_only, {true, true, true}},
      {"spatial_only", AblationMode::spatial_only, {true, true, true}},
      {"mf", AblationMode::full, {false, true, false}},
      {"pre+mf", AblationMode::full, {true, true, false}},
      {"mf+post", AblationMode::full, {false, true, true}},
  };
}

std::vector<AblationRow> ablation_run(const PipelineConfig& base, const std::vector<AblationCell>& cells,
                                      const std::vector<Scene>& train_scenes,
                                      const std::vector<Scene>& val_scenes) {
  if (val_scenes.empty()) throw DataError("ablation_run: no validation scenes");
  std::vector<AblationRow> rows;
  for (const AblationCell& cell : cells) {
    PipelineConfig cfg = base;
    cfg.ablation = cell.mode;
    cfg.stages = cell.stages;
    Model model(cfg);
    AblationRow row;
    row.cell = cell;
    row.parameters = model.store().parameter_count();
    row.madds = count_madds(cfg, val_scenes.front().depth.height, val_scenes.front().depth.width);
    const TrainResult tr = train(model, train_scenes);
    row.final_loss = tr.losses.empty() ? 0.0 : tr.losses.back();
    try {
      row.metrics = evaluate(model, val_scenes, cfg.sparse_points, cfg.seed);
    } catch (const NumericError&) {
      // A variant that predicts non-positive depth still has an RMSE; report
      // it without the inverse metrics and say why.
      row.metrics = evaluate(model, val_scenes, cfg.sparse_points, cfg.seed, false);
      row.note = std::to_string(row.metrics.nonpositive) + " non-positive predictions; inverse metrics undefined";
    }
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, const std::string& units) {
  std::string out = "variant,mode,pre,mf,post,params,madds,final_loss," +
                    metrics_csv_header(default_thetas()) + ",note\n";
  for (const AblationRow& r : rows) {
    out += r.cell.name + "," + to_string(r.cell.mode) + "," + (r.cell.stages.pre ? "1" : "0") + "," +
           (r.cell.stages.mf ? "1" : "0") + "," + (r.cell.stages.post ? "1" : "0") + "," +
           std::to_string(r.parameters) + "," + std::to_string(r.madds) + "," + fmt(r.final_loss) +
           "," + metrics_csv_row(r.metrics, units) + "," + r.note + "\n";
  }
  return out;
}

std::uint64_t count_madds(const PipelineConfig& cfg, std::size_t height, std::size_t width) {
  cfg.validate();
  const auto& w = cfg.widths;
  const std::size_t S = cfg.scales;
  std::uint64_t total = 0;
  auto conv = [&](std::uint64_t in, std::uint64_t out, std::uint64_t k, std::uint64_t area) {
    total += in * out * k * k * area;
  };
  auto area = [&](std::size_t s) { return std::uint64_t{height >> s} * (width >> s); };
  auto resblock = [&](std::size_t in, std::size_t out, std::uint64_t a, bool projected) {
    conv(in, out, 3, a);
    conv(out, out, 3, a);
    if (projected) conv(in, out, 1, a);
  };

  conv(cfg.image_channels, w[0], 3, area(0));
  for (std::size_t s = 0; s < S; ++s) {
    const std::size_t in = s == 0 ? w[0] : w[s - 1];
    resblock(in, w[s], area(s), in != w[s] || s > 0);
    resblock(w[s], w[s], area(s), false);
  }
  for (std::size_t s = 0; s < S; ++s) {
    const std::uint64_t a = area(s);
    if (s > 0) conv(w[s], std::uint64_t{1} << (2 * s), 3, a);
    if (s + 1 < S) {
      conv(w[s + 1] + 3, w[s], 3, area(s + 1));  // deconv over its input
      conv(2 * w[s], w[s], 3, a);
    }
    if (cfg.stages.pre && cfg.propagation == Propagation::learned) {
      const std::uint64_t p = a * cfg.n_neighbors, h = cfg.mlp_hidden;
      total += p * (2 * w[s] + 5) * h + 3 * p * h * h + 3 * p * h;
    }
    if (cfg.stages.mf) {
      conv(w[s] + 3, w[s], 3, a);
      for (std::size_t l = 0; l <= cfg.unet_depth; ++l) {
        const std::uint64_t c = std::uint64_t{w[s]} << l, al = area(s + l);
        resblock(c, c, al, false);
        resblock(c, c, al, false);
        if (l < cfg.unet_depth) {
          conv(c, 2 * c, 3, area(s + l + 1));       // stride-2 down
          conv(2 * c, c, 3, area(s + l + 1));       // deconv over its input
          conv(2 * c, c, 3, al);                    // merge
        }
      }
      conv(w[s], 1, 3, a);
    }
    if (cfg.stages.post) {
      const std::uint64_t nk = cfg.kernels.size();
      for (std::size_t k : cfg.kernels) {
        conv(w[s], k * k - 1, 3, a);
        total += std::uint64_t{step_schedule(s, S)} * k * k * a;
      }
      conv(w[s], nk, 3, a);
      conv(w[s], 3, 3, a);
      conv(w[s], nk, 3, a);
    }
  }
  return total;
}

namespace {

void append(std::vector<GradCheckResult>& all, const std::string& op,
            std::vector<GradCheckResult> results) {
  for (auto& r : results) {
    r.name = op + "/" + r.name;
    all.push_back(std::move(r));
  }
}

}  // namespace

std::vector<GradCheckResult> op_gradient_suite(std::uint64_t seed) {
  std::vector<GradCheckResult> all;
  std::uint64_t k = seed * 1000;
  auto rt = [&](const Shape& s, double lo = -1.0, double hi = 1.0) { return random_tensor(s, ++k, lo, hi); };
  auto check = [&](const std::string& op, const std::vector<NamedTensor>& in,
                   const std::function<Tensor()>& f) {
    const std::uint64_t proj = ++k;
    append(all, op, check_gradients([&] { return projected_loss(f(), proj); }, in));
  };

  Tensor a = rt({3, 4}), b = rt({3, 4}), c = rt({4, 2}), s1 = rt({1});
  check("add", {{"a", a}, {"b", b}}, [&] { return add(a, b); });
  check("sub", {{"a", a}, {"b", b}}, [&] { return sub(a, b); });
  check("mul", {{"a", a}, {"b", b}}, [&] { return mul(a, b); });
  check("mul_broadcast", {{"a", a}, {"s", s1}}, [&] { return mul(a, s1); });
  check("scale_add_scalar", {{"a", a}}, [&] { return add_scalar(scale(a, 1.7), 0.3); });
  check("matmul", {{"a", a}, {"c", c}}, [&] { return matmul(a, c); });
  check("exp", {{"a", a}}, [&] { return exp(a); });
  Tensor away = rt({3, 4}, 0.2, 1.0);
  check("abs", {{"x", away}}, [&] { return abs(sub(scale(away, -1.0), away)); });
  check("square", {{"a", a}}, [&] { return square(a); });
  check("gelu", {{"a", a}}, [&] { return gelu(scale(a, 3.0)); });
  check("sigmoid", {{"a", a}}, [&] { return sigmoid(scale(a, 4.0)); });
  check("sum", {{"a", a}}, [&] { return sum(a); });
  check("sum_axis", {{"a", a}}, [&] { return sum(a, 0); });
  check("mean", {{"a", a}}, [&] { return mean(square(a)); });
  check("reshape_transpose", {{"a", a}}, [&] { return transpose(reshape(a, {2, 6})); });
  check("slice", {{"a", a}}, [&] { return slice(a, 1, 1, 3); });
  check("concat", {{"a", a}, {"b", b}}, [&] { return concat({a, b}, 0); });
  check("softmax", {{"a", a}}, [&] { return softmax(scale(a, 3.0), 1); });
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 0};
  check("softmax_masked", {{"a", a}}, [&] { return softmax(a, 1, mask); });
  std::vector<std::size_t> idx{2, 0, 0, 1, 2};
  check("gather", {{"a", a}}, [&] { return gather_rows(a, idx); });
  Tensor p = rt({5, 4});
  check("scatter_add", {{"p", p}}, [&] { return scatter_add_rows(p, idx, 3); });
  Tensor lw = rt({5, 4}), lb = rt({5});
  check("linear", {{"x", b}, {"w", lw}, {"b", lb}}, [&] { return linear(b, lw, lb); });

  Tensor img = rt({2, 6, 4}), k3 = rt({3, 2, 3, 3}), kb = rt({3});
  check("conv2d", {{"x", img}, {"w", k3}, {"b", kb}}, [&] { return conv2d(img, k3, kb, 1, 1); });
  check("conv2d_stride2", {{"x", img}, {"w", k3}, {"b", kb}}, [&] { return conv2d(img, k3, kb, 2, 1); });
  Tensor dk = rt({2, 3, 3, 3});
  check("deconv2d", {{"x", img}, {"w", dk}, {"b", kb}},
        [&] { return conv_transpose2d(img, dk, kb, 2, 1, 1); });
  Tensor gamma = rt({2}, 0.5, 1.5), beta = rt({2});
  BatchNormStats st(2);
  check("batch_norm_train", {{"x", img}, {"gamma", gamma}, {"beta", beta}},
        [&] { return batch_norm(img, gamma, beta, st, true, 0); });
  BatchNormStats st_eval(2);
  st_eval.running_mean = {0.1, -0.2};
  st_eval.running_var = {0.8, 1.3};
  check("batch_norm_eval", {{"x", img}, {"gamma", gamma}, {"beta", beta}},
        [&] { return batch_norm(img, gamma, beta, st_eval, false, 0); });
  check("bilinear_upsample", {{"x", img}}, [&] { return bilinear_upsample(img, 2); });
  Tensor ps = rt({4, 2, 3});
  check("pixel_shuffle", {{"x", ps}}, [&] { return pixel_shuffle(ps, 2); });

  // Pipeline-specific operators.
  SparseDepthMap map = sample_sparse(Grid::from_tensor(rt({8, 8}, 1.0, 5.0)), 20, ++k);
  std::vector<std::uint8_t> valid(map.valid().begin(), map.valid().end());
  Tensor depth = map.depth().to_tensor(true), logits = rt({8, 8}, -2.0, 2.0);
  check("weighted_pool", {{"depth", depth}, {"logits", logits}},
        [&] { return weighted_pool(depth, valid, logits, 1); });
  Tensor dense = rt({5, 6}, 0.5, 4.0);
  const CameraIntrinsics intr{7.0, 6.0, 2.5, 2.0};
  check("inverse_project", {{"depth", dense}}, [&] { return inverse_project(dense, intr); });
  Tensor raw = rt({8, 5, 6});
  check("normalize_affinity", {{"raw", raw}}, [&] {
    const Affinity af = normalize_affinity(raw, 3);
    return concat({af.neighbors, reshape(af.center, {1, 5, 6})}, 0);
  });
  Tensor kappa = rt({8, 5, 6}, -0.2, 0.2), center = rt({5, 6});
  check("cspn_step", {{"depth", dense}, {"kappa", kappa}, {"center", center}},
        [&] { return cspn_step(dense, Affinity{kappa, center, 3}); });
  Tensor g = rt({5, 6}, 0.1, 0.9), sp = rt({5, 6}, 1.0, 3.0);
  std::vector<std::uint8_t> vm(30);
  for (std::size_t i = 0; i < vm.size(); ++i) vm[i] = i % 3 == 0;
  check("embed_sparse", {{"depth", dense}, {"sparse", sp}, {"gamma", g}},
        [&] { return embed_sparse(dense, sp, vm, g); });
  Tensor s1a = rt({5, 6}), s1b = rt({5, 6}), s2a = rt({5, 6}), s2b = rt({5, 6});
  Tensor tau = rt({2, 5, 6}), sig = rt({2, 5, 6});
  check("combine", {{"base", dense}, {"snap", s1a}, {"tau", tau}, {"sigma", sig}}, [&] {
    return combine(dense, {{s1a, s1b}, {s2a, s2b}}, softmax(tau, 0), softmax(sig, 0));
  });
  NeighborIndex nb = knn(map, 3);
  Tensor al = rt({nb.pairs()}), be = rt({nb.pairs()}), om = rt({nb.pairs()});
  check("propagate", {{"sparse", depth}, {"alpha", al}, {"beta", be}, {"omega", om}}, [&] {
    BilateralCoefficients co{al, be, reshape(softmax(reshape(om, {64, 3}), 1), {nb.pairs()}), 3};
    return propagate(depth, co, nb);
  });
  return all;
}

std::vector<GradCheckResult> pipeline_gradient_check(const PipelineConfig& cfg, std::uint64_t seed,
                                                     std::size_t max_entries) {
  Model model(cfg);
  perturb_parameters(model.store(), derive_seed(seed, 0x70), 0.25);
  const Scene sc = synthetic_scene(cfg.height, cfg.width, cfg.intrinsics, derive_seed(seed, 0x73));
  const SparseDepthMap sparse = sample_sparse(sc.depth, cfg.sparse_points, derive_seed(seed, 0x74));
  const auto valid = positive_mask(sc.depth);
  const auto lambdas = cfg.lambdas();
  auto raw_loss = [&] {
    return multiscale_loss(model.forward(sc.image, sparse, sc.intrinsics, true), sc.depth, valid, lambdas);
  };
  // Normalized by a constant so the loss is O(1) and finite-difference
  // roundoff stays far below the tolerance.
  double norm;
  {
    NoGradGuard no_grad;
    norm = std::abs(raw_loss().item());
  }
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericError("pipeline gradcheck: degenerate loss");
  GradCheckOptions opts;
  opts.max_entries = max_entries;
  opts.seed = seed;
  return check_gradients([&] { return scale(raw_loss(), 1.0 / norm); }, model.store().parameters(),
                         opts);
}

}  // namespace bpnet
