#include <cmath>
#include <tuple>

#include "bpnet/error.hpp"
#include "bpnet/gradcheck.hpp"
#include "bpnet/ops.hpp"
#include "bpnet/pipeline.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bpnet;

namespace {

PipelineConfig small_config() {
  PipelineConfig cfg;
  cfg.widths = {4, 6, 8};
  cfg.mlp_hidden = 8;
  cfg.unet_depth = 1;
  cfg.height = cfg.width = 16;
  cfg.intrinsics = {16.0, 16.0, 7.5, 7.5};
  cfg.sparse_points = 30;
  return cfg;
}

struct Sample {
  Scene scene;
  SparseDepthMap sparse;
};

Sample sample(const PipelineConfig& cfg, std::uint64_t seed) {
  Sample s{synthetic_scene(cfg.height, cfg.width, cfg.intrinsics, seed), {}};
  s.sparse = sample_sparse(s.scene.depth, cfg.sparse_points, seed + 100);
  return s;
}

std::size_t nearest_valid(const SparseDepthMap& m, std::size_t y, std::size_t x) {
  std::tuple<long, std::size_t> best{-1, 0};
  for (std::size_t i = 0; i < m.height() * m.width(); ++i) {
    if (!m.valid()[i]) continue;
    const long dx = long(i % m.width()) - long(x), dy = long(i / m.width()) - long(y);
    const std::tuple<long, std::size_t> cand{dx * dx + dy * dy, i};
    if (std::get<0>(best) < 0 || cand < best) best = cand;
  }
  return std::get<1>(best);
}

}  // namespace

TEST_CASE("the freshly built pipeline returns D' at every scale") {
  const PipelineConfig cfg = small_config();
  Model model(cfg);
  const Sample s = sample(cfg, 1);
  for (bool training : {false, true}) {
    const DepthPyramid pyr = model.forward(s.scene.image, s.sparse, s.scene.intrinsics, training);
    REQUIRE(pyr.scales.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      const ScaleOutputs& o = pyr.scales[k];
      CHECK(o.depth.shape() == Shape{16u >> k, 16u >> k});
      CHECK(vals(o.d_double_prime) == vals(o.d_prime));
      CHECK(vals(o.depth) == vals(o.d_prime));
    }
  }
}

TEST_CASE("nearest propagation with fusion and refinement off is nearest interpolation") {
  PipelineConfig cfg = small_config();
  cfg.propagation = Propagation::nearest;
  cfg.stages = {true, false, false};
  Model model(cfg);
  const Sample s = sample(cfg, 2);
  const DepthPyramid pyr = model.forward(s.scene.image, s.sparse, s.scene.intrinsics, false);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      CHECK(pyr.final_depth()[y * 16 + x] == s.sparse.depth().values[nearest_valid(s.sparse, y, x)]);
}

TEST_CASE("every stage combination runs and keeps its documented fallbacks") {
  const Sample s = sample(small_config(), 3);
  for (int bits = 0; bits < 8; ++bits) {
    PipelineConfig cfg = small_config();
    cfg.stages = {bool(bits & 1), bool(bits & 2), bool(bits & 4)};
    INFO("pre=", cfg.stages.pre, " mf=", cfg.stages.mf, " post=", cfg.stages.post);
    Model model(cfg);
    const DepthPyramid pyr = model.forward(s.scene.image, s.sparse, s.scene.intrinsics, true);
    for (const ScaleOutputs& o : pyr.scales) {
      for (double v : o.depth.data()) CHECK(std::isfinite(v));
      if (!cfg.stages.pre) CHECK(vals(o.d_prime) == vals(o.sparse));
      if (!cfg.stages.mf) {
        CHECK(vals(o.d_double_prime) == vals(o.d_prime));
        CHECK(vals(o.fused) == vals(o.image_encoding));
      }
      if (!cfg.stages.post) CHECK(vals(o.depth) == vals(o.d_double_prime));
    }
  }
}

TEST_CASE("parameter counts follow the enabled stages") {
  PipelineConfig a = small_config(), b = small_config();
  a.stages = {false, true, false};
  b.stages = {true, true, false};
  Model ma(a), mb(b);
  CHECK(mb.store().parameter_count() > ma.store().parameter_count());
  PipelineConfig c = b;
  c.propagation = Propagation::nearest;
  CHECK(Model(c).store().parameter_count() == ma.store().parameter_count());
}

TEST_CASE("multiscale loss on hand examples") {
  DepthPyramid pyr;
  pyr.scales.resize(2);
  pyr.scales[0].depth = Tensor::full({2, 2}, 2.0);
  pyr.scales[1].depth = Tensor::full({1, 1}, 1.0);
  Grid gt(2, 2, 3.0);
  std::vector<std::uint8_t> valid{1, 1, 0, 1};
  // 3·1² + ¼·3·2² = 6
  CHECK(multiscale_loss(pyr, gt, valid, {1.0, 0.25}).item() == 6.0);
  CHECK_THROWS_AS(multiscale_loss(pyr, gt, valid, {1.0}), ShapeError);
  CHECK_THROWS_AS(multiscale_loss(pyr, gt, std::vector<std::uint8_t>(4, 0), {1.0, 0.25}), DataError);

  PipelineConfig cfg;
  const auto l = cfg.lambdas();
  REQUIRE(l.size() == 3);
  CHECK(l[0] == 1.0);
  CHECK(l[1] == 0.25);
  CHECK(l[2] == 1.0 / 16.0);
}

TEST_CASE("padding to a multiple and cropping back") {
  const Tensor img = random_tensor({3, 228, 304}, 1, 0.0, 1.0, false);
  SparseDepthMap sp(228, 304);
  sp.set(227, 303, 2.0);
  sp.set(0, 0, 1.0);
  const PaddedInput p = pad_to_multiple(img, sp, 32);
  CHECK(p.image.shape() == Shape{3, 256, 320});
  CHECK(p.sparse.count() == 2);
  CHECK(p.sparse.at(227, 303) == 2.0);
  CHECK(p.image[(0 * 256 + 240) * 320 + 310] == 0.0);
  CHECK(p.crop.height == 228);
  CHECK(p.crop.padded_width == 320);
  const Tensor back = crop_valid(p.image, p.crop);
  CHECK(vals(back) == vals(img));
  Grid g(256, 320, 1.5);
  CHECK(crop_valid(g, p.crop).height == 228);
}

TEST_CASE("forward requires the padded multiple; predict pads by itself") {
  const PipelineConfig cfg = small_config();
  Model model(cfg);
  const Scene sc = synthetic_scene(13, 19, {13.0, 13.0, 9.0, 6.0}, 4);
  const SparseDepthMap sp = sample_sparse(sc.depth, 20, 5);
  CHECK_THROWS_AS(model.forward(sc.image, sp, sc.intrinsics, false), ShapeError);
  const Grid out = predict(model, sc.image, sp, sc.intrinsics);
  CHECK(out.height == 13);
  CHECK(out.width == 19);
  CHECK(cfg.required_multiple() == 8);
  CHECK(cfg.pad_multiple() == 4);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  PipelineConfig cfg = small_config();
  cfg.lr = 0.0;
  cfg.steps = 2;
  Model model(cfg);
  std::vector<std::vector<double>> before;
  for (const auto& p : model.store().parameters())
    before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  train(model, {sample(cfg, 6).scene});
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(std::vector<double>(model.store().parameters()[i].tensor.data().begin(),
                              model.store().parameters()[i].tensor.data().end()) == before[i]);
}

TEST_CASE("training is deterministic per seed and decreases the loss") {
  PipelineConfig cfg = small_config();
  cfg.steps = 6;
  cfg.hflip = true;
  const std::vector<Scene> scenes{sample(cfg, 7).scene, sample(cfg, 8).scene};
  Model a(cfg), b(cfg);
  const TrainResult ra = train(a, scenes), rb = train(b, scenes);
  CHECK(ra.losses == rb.losses);
  CHECK(ra.losses.size() == 6);
  cfg.seed = 1;
  Model c(cfg);
  CHECK(train(c, scenes).losses != ra.losses);
}

TEST_CASE("a non-finite loss names the step") {
  PipelineConfig cfg = small_config();
  cfg.steps = 3;
  Scene sc = sample(cfg, 9).scene;
  sc.image.mutable_data()[5] = NAN;
  Model model(cfg);
  try {
    train(model, {sc});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("synthetic scenes are positive, flipped consistently, and deterministic") {
  const CameraIntrinsics k{32.0, 32.0, 15.5, 15.5};
  const Scene a = synthetic_scene(32, 32, k, 3), b = synthetic_scene(32, 32, k, 3);
  CHECK(a.depth == b.depth);
  CHECK(vals(a.image) == vals(b.image));
  for (double v : a.depth.values) CHECK(v > 0.0);
  const Scene f = flip_horizontally(a);
  CHECK(f.depth.at(4, 0) == a.depth.at(4, 31));
  CHECK(f.image[(1 * 32 + 7) * 32 + 3] == a.image[(1 * 32 + 7) * 32 + 28]);
  CHECK(f.intrinsics.cx == 15.5);
}

TEST_CASE("config JSON round trip and validation") {
  PipelineConfig cfg = small_config();
  cfg.stages.post = false;
  cfg.ablation = AblationMode::spatial_only;
  cfg.seed = 77;
  cfg.units = "mm";
  const PipelineConfig back = config_from_json_text(config_to_json_text(cfg));
  CHECK(config_to_json_text(back) == config_to_json_text(cfg));
  CHECK(back.widths == cfg.widths);
  CHECK(back.stages == cfg.stages);
  CHECK(back.ablation == AblationMode::spatial_only);
  CHECK_THROWS_AS(config_from_json_text(R"({"scale": 3})"), DataError);
  CHECK_THROWS_AS(config_from_json_text(R"({"scales": 2, "widths": [4]})"), DataError);
  CHECK_THROWS_AS(config_from_json_text("{not json"), DataError);
}

TEST_CASE("defaults carry the published constants") {
  const PipelineConfig cfg;
  CHECK(cfg.n_neighbors == 4);
  CHECK(cfg.kernels == std::vector<std::size_t>{3, 5, 7});
  CHECK(cfg.clip_norm == 0.1);
  CHECK(cfg.weight_decay == 0.05);
  CHECK(cfg.optimizer().weight_decay == 0.05);
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
}
