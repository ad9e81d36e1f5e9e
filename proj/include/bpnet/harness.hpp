#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bpnet/gradcheck.hpp"
#include "bpnet/pipeline.hpp"

namespace bpnet {

// Raw values in SI: rmse/mae in meters, irmse/imae in 1/m. Use
// display_metrics for the units people report.
struct MetricReport {
  double rmse = 0.0, mae = 0.0, irmse = 0.0, imae = 0.0, rel = 0.0;
  std::vector<double> thetas;
  std::vector<double> deltas;  // fraction with max(gt/pred, pred/gt) < θ
  std::size_t pixels = 0;
  std::size_t samples = 1;
  std::size_t nonpositive = 0;  // predictions <= 0 admitted when inverse metrics are off
};

std::vector<double> default_thetas();  // 1.25, 1.25², 1.25³

// Throws DataError for an empty valid set or gt <= 0 on it, NumericError when
// a prediction is not positive and finite there. With inverse = false,
// non-positive predictions are counted instead: irmse/imae are NaN and such
// pixels fall outside every δ.
MetricReport compute_metrics(const Grid& pred, const Grid& gt, std::span<const std::uint8_t> valid,
                             const std::vector<double>& thetas = default_thetas(), bool inverse = true);

// Per-sample values averaged field by field.
MetricReport average_reports(std::span<const MetricReport> reports);

// rmse/mae ×1000 when units == "mm"; irmse/imae always ×1000 (1/km).
struct DisplayMetrics {
  double rmse, mae, irmse, imae, rel;
  std::vector<double> deltas;
};
DisplayMetrics display_metrics(const MetricReport& r, const std::string& units);

std::string metrics_csv_header(const std::vector<double>& thetas);
std::string metrics_csv_row(const MetricReport& r, const std::string& units);

std::vector<std::uint8_t> positive_mask(const Grid& g);

struct SweepOptions {
  std::vector<std::size_t> counts{25, 50, 75};
  std::size_t repeats = 10;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  // Cells are evaluated in this order when given (a permutation of all cell
  // indices); results never depend on it.
  std::vector<std::size_t> order;
};

struct SweepRow {
  std::size_t count = 0;
  bool skipped = false;
  std::string note;
  std::size_t repeats = 0;
  MetricReport mean;    // over repeats of the per-repeat scene average
  MetricReport stddev;  // population standard deviation over repeats
};

// Cell (count c, repeat r, scene i) samples with derive_seed(seed, c, r, i).
std::vector<SweepRow> sparsity_sweep(const Model& model, const std::vector<Scene>& scenes,
                                     const SweepOptions& options);
std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& units);

// Evaluation with deterministic sparse inputs: scene i uses
// sample_sparse(gt, points, derive_seed(seed, 0x65, i)).
MetricReport evaluate(const Model& model, const std::vector<Scene>& scenes, std::size_t points,
                      std::uint64_t seed, bool inverse = true);

struct AblationCell {
  std::string name;
  AblationMode mode = AblationMode::full;
  StageToggles stages;
};

// Propagation variants (all stages on) followed by the stage combinations
// with fusion kept on.
std::vector<AblationCell> default_ablation_grid();

struct AblationRow {
  AblationCell cell;
  MetricReport metrics;
  std::size_t parameters = 0;
  std::uint64_t madds = 0;
  double final_loss = 0.0;
  std::string note;  // set when the variant predicted non-positive depth
};

// Trains one model per cell from the same seed on the same scenes, then
// evaluates each on the validation scenes.
std::vector<AblationRow> ablation_run(const PipelineConfig& base, const std::vector<AblationCell>& cells,
                                      const std::vector<Scene>& train_scenes,
                                      const std::vector<Scene>& val_scenes);
std::string ablation_csv(const std::vector<AblationRow>& rows, const std::string& units);

// Multiply-adds of one forward pass at height×width, counted from the
// config: every conv/deconv over its full window, every linear layer, and
// k² per pixel per CSPN step. Assumes every pixel has n_neighbors neighbors.
std::uint64_t count_madds(const PipelineConfig& cfg, std::size_t height, std::size_t width);

// Finite-difference checks over every differentiable op used by the pipeline.
std::vector<GradCheckResult> op_gradient_suite(std::uint64_t seed);

// Full forward + multiscale loss on a synthetic scene of cfg.height×cfg.width,
// with every parameter perturbed off its initial value so that gates and
// zero-initialized heads are exercised. Checks every parameter entry.
std::vector<GradCheckResult> pipeline_gradient_check(const PipelineConfig& cfg, std::uint64_t seed,
                                                     std::size_t max_entries = 0);

}  // namespace bpnet
