#include <algorithm>
#include <cmath>
#include <random>
#include <tuple>

#include "bpnet/error.hpp"
#include "bpnet/gradcheck.hpp"
#include "bpnet/ops.hpp"
#include "bpnet/sparse_depth.hpp"
#include "doctest.h"

using namespace bpnet;

namespace {

Grid ramp(std::size_t h, std::size_t w) {
  Grid g(h, w);
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = 1.0 + 0.01 * static_cast<double>(i);
  return g;
}

SparseDepthMap random_map(std::size_t h, std::size_t w, std::size_t count, std::uint64_t seed) {
  return sample_sparse(ramp(h, w), count, seed);
}

// Every valid pixel sorted by (d², row-major index).
std::vector<std::size_t> brute_force(const SparseDepthMap& m, std::size_t y, std::size_t x,
                                     std::size_t n) {
  std::vector<std::tuple<long, std::size_t>> all;
  for (std::size_t sy = 0; sy < m.height(); ++sy)
    for (std::size_t sx = 0; sx < m.width(); ++sx) {
      if (!m.is_valid(sy, sx)) continue;
      const long dx = static_cast<long>(sx) - static_cast<long>(x);
      const long dy = static_cast<long>(sy) - static_cast<long>(y);
      all.emplace_back(dx * dx + dy * dy, sy * m.width() + sx);
    }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < std::min(n, all.size()); ++k) out.push_back(std::get<1>(all[k]));
  return out;
}

}  // namespace

TEST_CASE("sample_sparse takes every pixel when n equals the supply") {
  Grid gt = ramp(10, 10);
  SparseDepthMap m = sample_sparse(gt, 100, 3);
  CHECK(m.count() == 100);
  for (std::size_t i = 0; i < gt.size(); ++i) CHECK(m.depth().values[i] == gt.values[i]);
}

TEST_CASE("sample_sparse is deterministic per seed") {
  Grid gt = ramp(12, 9);
  SparseDepthMap a = sample_sparse(gt, 1, 42), b = sample_sparse(gt, 1, 42);
  CHECK(a.count() == 1);
  CHECK(a.depth() == b.depth());
  SparseDepthMap c = sample_sparse(gt, 20, 1), d = sample_sparse(gt, 20, 2);
  CHECK_FALSE(c.depth() == d.depth());
}

TEST_CASE("sample_sparse on a 304x228 grid copies exactly 500 ground-truth depths") {
  Grid gt(228, 304);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.5, 10.0);
  for (auto& v : gt.values) v = u(rng);
  SparseDepthMap m = sample_sparse(gt, 500, 17);
  CHECK(m.count() == 500);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (m.valid()[i]) {
      ++valid;
      CHECK(m.depth().values[i] == gt.values[i]);
    } else {
      CHECK(m.depth().values[i] == 0.0);
    }
  }
  CHECK(valid == 500);
}

TEST_CASE("sample_sparse skips non-positive pixels and reports the supply") {
  Grid gt(4, 4, 0.0);
  gt.at(1, 1) = 2.0;
  gt.at(2, 3) = 3.0;
  SparseDepthMap m = sample_sparse(gt, 2, 0);
  CHECK(m.is_valid(1, 1));
  CHECK(m.is_valid(2, 3));
  try {
    sample_sparse(gt, 3, 0);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find('2') != std::string::npos);
  }
}

TEST_CASE("from_grid rejects negative and NaN depth") {
  Grid g(2, 2, 1.0);
  g.at(0, 1) = -1.0;
  CHECK_THROWS_AS(SparseDepthMap::from_grid(g), DataError);
  g.at(0, 1) = std::nan("");
  CHECK_THROWS_AS(SparseDepthMap::from_grid(g), DataError);
  g.at(0, 1) = 0.0;
  CHECK(SparseDepthMap::from_grid(g).count() == 3);
}

TEST_CASE("knn picks the closer of two valid pixels") {
  SparseDepthMap m(4, 4);
  m.set(0, 0, 1.0);
  m.set(3, 3, 2.0);
  NeighborIndex nb = knn(m, 1);
  const std::size_t q = 1 * 4 + 1;
  CHECK(nb.source[q] == 0);
  CHECK(nb.offsets[q] == std::array<int, 2>{-1, -1});
  // A valid pixel is its own first neighbor.
  CHECK(nb.source[15] == 15);
  CHECK(nb.offsets[15] == std::array<int, 2>{0, 0});
}

TEST_CASE("knn truncates to the number of valid pixels") {
  SparseDepthMap m(5, 5);
  m.set(2, 2, 1.0);
  m.set(0, 4, 1.0);
  NeighborIndex nb = knn(m, 4);
  CHECK(nb.per_pixel == 2);
  CHECK(nb.pairs() == 50);
  CHECK_THROWS_AS(knn(SparseDepthMap(3, 3), 1), DataError);
}

TEST_CASE("knn matches a brute-force sort") {
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> cases{
      {16, 16, 12, 4}, {8, 8, 64, 4}, {9, 13, 1, 3}, {7, 20, 30, 1}, {16, 16, 5, 8}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) cases.emplace_back(16, 16, 2 + 3 * seed, 1 + seed % 4);
  std::uint64_t seed = 1000;
  for (auto [h, w, count, n] : cases) {
    SparseDepthMap m = random_map(h, w, count, ++seed);
    NeighborIndex nb = knn(m, n);
    REQUIRE(nb.per_pixel == std::min(n, count));
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const auto expect = brute_force(m, y, x, n);
        const std::size_t base = (y * w + x) * nb.per_pixel;
        for (std::size_t k = 0; k < expect.size(); ++k) {
          const std::size_t s = nb.source[base + k];
          CHECK(s == expect[k]);
          CHECK(nb.offsets[base + k][0] == static_cast<int>(s % w) - static_cast<int>(x));
          CHECK(nb.offsets[base + k][1] == static_cast<int>(s / w) - static_cast<int>(y));
        }
      }
  }
}

TEST_CASE("weighted_pool of a lone valid pixel stays within 1e-6 of its depth") {
  SparseDepthMap m(4, 4);
  m.set(1, 0, 5.0);
  for (double logit : {-30.0, 0.0, 2.5}) {
    Grid w(4, 4, 1.0);
    w.at(1, 0) = logit;
    SparseDepthMap out = weighted_pool(m, w, 1);
    CHECK(out.height() == 2);
    CHECK(std::abs(out.at(0, 0) - 5.0) < 1e-6);
    CHECK(out.is_valid(0, 0));
    CHECK_FALSE(out.is_valid(1, 1));
    CHECK(out.at(1, 1) == 0.0);
  }
}

TEST_CASE("weighted_pool with uniform logits averages valid depths") {
  SparseDepthMap m(2, 2);
  m.set(0, 0, 2.0);
  m.set(1, 1, 4.0);
  SparseDepthMap out = weighted_pool(m, Grid(2, 2, 0.7), 1);
  CHECK(std::abs(out.at(0, 0) - 3.0) < 1e-6);
}

TEST_CASE("weighted_pool is invariant to a per-window logit shift") {
  for (std::size_t s : {1u, 2u}) {
    SparseDepthMap m = random_map(16, 16, 60, 5 + s);
    Grid w = Grid::from_tensor(random_tensor({16, 16}, 6, -3.0, 3.0, false));
    Grid shifted = w;
    const std::size_t b = std::size_t{1} << s;
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        shifted.at(y, x) += 7.0 * static_cast<double>((y / b) * 16 + x / b) - 40.0;
    SparseDepthMap a = weighted_pool(m, w, s), c = weighted_pool(m, shifted, s);
    for (std::size_t i = 0; i < a.depth().size(); ++i)
      CHECK(std::abs(a.depth().values[i] - c.depth().values[i]) < 1e-9);
  }
}

TEST_CASE("pooled validity is the OR over each window") {
  for (std::size_t s : {1u, 2u, 3u}) {
    SparseDepthMap m = random_map(16, 24, 20, 30 + s);
    SparseDepthMap out = weighted_pool(m, Grid(16, 24, 0.0), s);
    const std::size_t b = std::size_t{1} << s;
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t x = 0; x < out.width(); ++x) {
        bool any = false;
        for (std::size_t dy = 0; dy < b; ++dy)
          for (std::size_t dx = 0; dx < b; ++dx) any |= m.is_valid(y * b + dy, x * b + dx);
        CHECK(out.is_valid(y, x) == any);
      }
  }
}

TEST_CASE("weighted_pool rejects indivisible extents") {
  CHECK_THROWS_AS(weighted_pool(SparseDepthMap(6, 8), Grid(6, 8), 2), ShapeError);
  CHECK_THROWS_AS(weighted_pool(SparseDepthMap(8, 8), Grid(8, 4), 1), ShapeError);
}

TEST_CASE("weighted_pool gradients match finite differences") {
  SparseDepthMap m = random_map(8, 8, 20, 77);
  Tensor depth = m.depth().to_tensor(true);
  Tensor logits = random_tensor({8, 8}, 78, -2.0, 2.0);
  std::vector<std::uint8_t> valid(m.valid().begin(), m.valid().end());
  for (std::size_t s : {1u, 2u}) {
    auto results = check_gradients(
        [&] { return projected_loss(weighted_pool(depth, valid, logits, s), 79); },
        {{"depth", depth}, {"logits", logits}});
    for (const auto& r : results) {
      INFO(r.name << " " << r.worst_entry);
      CHECK(r.ok);
    }
  }
}

TEST_CASE("shuffle_weights lays out channels row-major per block") {
  Tensor f = Tensor::from({4, 1, 1}, {1.0, 2.0, 3.0, 4.0});
  Tensor w = shuffle_weights(f, 1);
  CHECK(w.shape() == Shape{2, 2});
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 2.0);
  CHECK(w[2] == 3.0);
  CHECK(w[3] == 4.0);
  Tensor id = random_tensor({1, 3, 5}, 2, -1.0, 1.0, false);
  Tensor same = shuffle_weights(id, 0);
  for (std::size_t i = 0; i < id.numel(); ++i) CHECK(same[i] == id[i]);
  CHECK_THROWS_AS(shuffle_weights(Tensor::zeros({3, 2, 2}), 1), ShapeError);
}

TEST_CASE("shuffle_weights is inverted by an independent unshuffle") {
  for (std::size_t s : {1u, 2u}) {
    const std::size_t b = std::size_t{1} << s, h = 3, w = 2;
    Tensor f = random_tensor({b * b, h, w}, 10 + s, -1.0, 1.0, false);
    Tensor full = shuffle_weights(f, s);
    REQUIRE(full.shape() == Shape{h * b, w * b});
    const std::size_t W = w * b;
    for (std::size_t c = 0; c < b * b; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t fy = y * b + c / b, fx = x * b + c % b;
          CHECK(full[fy * W + fx] == f[(c * h + y) * w + x]);
        }
  }
}
