// bpdepth: command-line front end for training, completion and evaluation.
//
// Exit codes: 0 ok, 1 usage, 2 bad data/config, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bpnet/checkpoint.hpp"
#include "bpnet/error.hpp"
#include "bpnet/harness.hpp"
#include "bpnet/io.hpp"
#include "bpnet/scene_io.hpp"

namespace fs = std::filesystem;
using namespace bpnet;

namespace {

constexpr int kUsage = 1, kData = 2, kNumeric = 3;

std::string scene_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03zu", i);
  return buf;
}

std::vector<Scene> synthetic_set(const PipelineConfig& cfg, std::size_t count, std::uint64_t seed) {
  std::vector<Scene> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(synthetic_scene(cfg.height, cfg.width, cfg.intrinsics, derive_seed(seed, 0x5c, i)));
  return out;
}

// Scenes from --data when given, else the config's data_dir, else synthetic.
std::vector<Scene> scenes_or_synthetic(const std::string& data, const PipelineConfig& cfg,
                                       std::size_t count, std::uint64_t seed) {
  if (!data.empty()) return load_scenes(data);
  if (!cfg.data_dir.empty()) return load_scenes(cfg.data_dir);
  return synthetic_set(cfg, count, seed);
}

fs::path output_dir(const std::string& flag, const PipelineConfig& cfg) {
  fs::path dir = !flag.empty() ? fs::path(flag) : cfg.output_dir;
  if (dir.empty()) throw DataError("no output directory: pass --out or set paths.output_dir");
  fs::create_directories(dir);
  return dir;
}

void load_model(Model& model, const std::string& checkpoint) {
  if (checkpoint.empty()) throw DataError("--checkpoint is required");
  load_checkpoint(checkpoint, model.store());
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text(path, text);
    std::cerr << "wrote " << path << "\n";
  }
}

void print_results(const std::string& title, const std::vector<GradCheckResult>& results, bool& ok) {
  for (const auto& r : results) {
    ok = ok && r.ok;
    std::printf("%-4s %-9s %-48s entries %-6zu max rel err %.3g\n", r.ok ? "ok" : "FAIL", title.c_str(),
                r.name.c_str(), r.entries, r.max_rel_error);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bpdepth: bilateral-propagation depth completion"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON run config (default: $BPDEPTH_CONFIG, else built-ins)");

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "write seeded synthetic scenes");
  std::uint64_t gen_seed = 0;
  std::size_t gen_count = 1, gen_points = 0, gen_h = 0, gen_w = 0;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--count", gen_count, "number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--points", gen_points, "sparse points per scene (default: config sparse_points)");
  gen->add_option("--height", gen_h, "scene height (default: config)");
  gen->add_option("--width", gen_w, "scene width (default: config)");
  gen->add_option("-o,--out", gen_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model; writes model.ckpt, loss.csv, config.json");
  std::string tr_data, tr_out;
  std::size_t tr_scenes = 1, tr_steps = 0;
  tr->add_option("--data", tr_data, "scene directory (default: config data_dir, else synthetic)");
  tr->add_option("--scenes", tr_scenes, "synthetic scene count when no data is given");
  tr->add_option("--steps", tr_steps, "override config steps");
  tr->add_option("-o,--out", tr_out, "output directory (default: config output_dir)");

  // complete
  auto* cm = app.add_subcommand("complete", "densify one sparse map");
  std::string cm_ckpt, cm_image, cm_sparse, cm_intr, cm_out, cm_preview;
  cm->add_option("--checkpoint", cm_ckpt, "trained model")->required();
  cm->add_option("--image", cm_image, "3-channel image PFM")->required();
  cm->add_option("--sparse", cm_sparse, "sparse points CSV (x,y,depth_m)")->required();
  cm->add_option("--intrinsics", cm_intr, "intrinsics JSON (default: config)");
  cm->add_option("-o,--out", cm_out, "dense depth PFM")->required();
  cm->add_option("--preview", cm_preview, "8-bit PGM preview");

  // eval
  auto* ev = app.add_subcommand("eval", "metrics of predictions (--pred/--gt pairs) or of a model on scenes");
  std::vector<std::string> ev_pred, ev_gt;
  std::string ev_ckpt, ev_data, ev_out;
  std::size_t ev_points = 0;
  std::uint64_t ev_seed = 0;
  ev->add_option("--pred", ev_pred, "predicted depth PFM (repeatable)");
  ev->add_option("--gt", ev_gt, "ground-truth depth PFM, same order as --pred");
  ev->add_option("--checkpoint", ev_ckpt, "evaluate this model instead");
  ev->add_option("--data", ev_data, "scene directory for --checkpoint");
  ev->add_option("--points", ev_points, "sparse points (default: config sparse_points)");
  ev->add_option("--seed", ev_seed, "sparse sampling seed");
  ev->add_option("-o,--out", ev_out, "metrics CSV (default: stdout)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "sparsity sweep over point counts and repeats");
  std::string sw_ckpt, sw_data, sw_out;
  SweepOptions sw_opt;
  sw->add_option("--checkpoint", sw_ckpt, "trained model")->required();
  sw->add_option("--data", sw_data, "scene directory")->required();
  sw->add_option("--counts", sw_opt.counts, "point counts")->delimiter(',');
  sw->add_option("--repeats", sw_opt.repeats, "repeats per count")->check(CLI::PositiveNumber);
  sw->add_option("--threads", sw_opt.threads, "worker threads")->check(CLI::PositiveNumber);
  sw->add_option("--seed", sw_opt.seed, "master seed");
  sw->add_option("-o,--out", sw_out, "sweep CSV (default: stdout)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and evaluate the ablation grid");
  std::string ab_train, ab_val, ab_out;
  std::size_t ab_train_n = 4, ab_val_n = 4;
  ab->add_option("--train-data", ab_train, "training scenes (default: synthetic)");
  ab->add_option("--val-data", ab_val, "validation scenes (default: synthetic)");
  ab->add_option("--train-scenes", ab_train_n, "synthetic training scene count");
  ab->add_option("--val-scenes", ab_val_n, "synthetic validation scene count");
  ab->add_option("-o,--out", ab_out, "ablation CSV (default: stdout)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op and the full pipeline");
  std::uint64_t gc_seed = 0;
  gc->add_option("--seed", gc_seed, "seed for inputs and parameter perturbation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    PipelineConfig cfg = resolve_config(config_path);

    if (gen->parsed()) {
      if (gen_h) cfg.height = gen_h;
      if (gen_w) cfg.width = gen_w;
      const std::size_t points = gen_points ? gen_points : cfg.sparse_points;
      const fs::path root(gen_out);
      for (std::size_t i = 0; i < gen_count; ++i) {
        const std::uint64_t s = derive_seed(gen_seed, 0x5c, i);
        const Scene sc = synthetic_scene(cfg.height, cfg.width, cfg.intrinsics, s);
        const SparseDepthMap sp = sample_sparse(sc.depth, points, derive_seed(s, 1));
        write_scene(root / scene_name(i), sc, &sp);
      }
      std::cerr << "wrote " << gen_count << " scene(s) under " << root << "\n";
    } else if (tr->parsed()) {
      if (tr_steps) cfg.steps = tr_steps;
      const fs::path out = output_dir(tr_out, cfg);
      const std::vector<Scene> scenes = scenes_or_synthetic(tr_data, cfg, tr_scenes, cfg.seed);
      Model model(cfg);
      const std::size_t every = std::max<std::size_t>(1, cfg.steps / 10);
      const TrainResult r = train(model, scenes, [&](std::size_t step, double loss) {
        if (step % every == 0 || step + 1 == cfg.steps) std::fprintf(stderr, "step %zu loss %.6g\n", step, loss);
      });
      save_checkpoint(out / "model.ckpt", model.store());
      write_loss_csv(out / "loss.csv", r.losses);
      write_text(out / "config.json", config_to_json_text(cfg));
      std::cerr << "wrote " << (out / "model.ckpt") << "\n";
    } else if (cm->parsed()) {
      Model model(cfg);
      load_model(model, cm_ckpt);
      const Tensor image = read_pfm(cm_image);
      if (image.dim(0) != cfg.image_channels) throw DataError("image channels do not match the config");
      const SparseDepthMap sparse = read_sparse_csv(cm_sparse, image.dim(1), image.dim(2));
      const CameraIntrinsics intr = cm_intr.empty() ? cfg.intrinsics : read_intrinsics(cm_intr);
      const Grid dense = predict(model, image, sparse, intr);
      write_pfm(cm_out, dense);
      if (!cm_preview.empty()) write_pgm(cm_preview, dense);
      std::cerr << "wrote " << cm_out << "\n";
    } else if (ev->parsed()) {
      std::vector<MetricReport> reports;
      std::vector<std::string> names;
      if (!ev_ckpt.empty()) {
        if (!ev_pred.empty()) throw DataError("use either --checkpoint or --pred/--gt");
        Model model(cfg);
        load_model(model, ev_ckpt);
        const auto dirs = scene_dirs(ev_data.empty() ? cfg.data_dir : fs::path(ev_data));
        const std::size_t points = ev_points ? ev_points : cfg.sparse_points;
        for (std::size_t i = 0; i < dirs.size(); ++i) {
          const Scene sc = read_scene(dirs[i]);
          const SparseDepthMap sp = sample_sparse(sc.depth, points, derive_seed(ev_seed, 0x65, i));
          reports.push_back(compute_metrics(predict(model, sc.image, sp, sc.intrinsics), sc.depth,
                                            positive_mask(sc.depth)));
          names.push_back(dirs[i].filename().string());
        }
      } else {
        if (ev_pred.empty() || ev_pred.size() != ev_gt.size()) {
          throw DataError("eval needs matching --pred and --gt lists, or --checkpoint");
        }
        for (std::size_t i = 0; i < ev_pred.size(); ++i) {
          const Grid gt = read_pfm_grid(ev_gt[i]);
          reports.push_back(compute_metrics(read_pfm_grid(ev_pred[i]), gt, positive_mask(gt)));
          names.push_back(fs::path(ev_pred[i]).filename().string());
        }
      }
      std::string csv = "sample," + metrics_csv_header(default_thetas()) + "\n";
      for (std::size_t i = 0; i < reports.size(); ++i)
        csv += names[i] + "," + metrics_csv_row(reports[i], cfg.units) + "\n";
      csv += "mean," + metrics_csv_row(average_reports(reports), cfg.units) + "\n";
      emit(ev_out, csv);
    } else if (sw->parsed()) {
      Model model(cfg);
      load_model(model, sw_ckpt);
      const auto rows = sparsity_sweep(model, load_scenes(sw_data), sw_opt);
      for (const auto& r : rows)
        if (r.skipped) std::cerr << "warning: count " << r.count << " " << r.note << "\n";
      emit(sw_out, sweep_csv(rows, cfg.units));
    } else if (ab->parsed()) {
      const auto train_scenes = ab_train.empty() ? synthetic_set(cfg, ab_train_n, derive_seed(cfg.seed, 0x7472))
                                                 : load_scenes(ab_train);
      const auto val_scenes = ab_val.empty() ? synthetic_set(cfg, ab_val_n, derive_seed(cfg.seed, 0x76616c))
                                             : load_scenes(ab_val);
      emit(ab_out, ablation_csv(ablation_run(cfg, default_ablation_grid(), train_scenes, val_scenes), cfg.units));
    } else if (gc->parsed()) {
      bool ok = true;
      print_results("op", op_gradient_suite(gc_seed), ok);
      print_results("pipeline", pipeline_gradient_check(cfg, gc_seed), ok);
      std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
      if (!ok) return kNumeric;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return 0;
}
