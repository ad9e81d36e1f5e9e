#include <cmath>

#include "bpnet/error.hpp"
#include "bpnet/geometry.hpp"
#include "bpnet/gradcheck.hpp"
#include "bpnet/ops.hpp"
#include "doctest.h"

using namespace bpnet;

TEST_CASE("at_scale divides every intrinsic by 2^s") {
  CameraIntrinsics k{100.0, 80.0, 8.0, 6.0};
  CHECK(at_scale(k, 2).cx == 2.0);
  CHECK(at_scale(k, 1).fx == 50.0);
  CHECK(at_scale(k, 0) == k);
  CHECK(at_scale(k, 3).fy == 10.0);
}

TEST_CASE("validate rejects non-positive focal lengths") {
  CHECK_THROWS_AS((CameraIntrinsics{0.0, 1.0, 0.0, 0.0}.validate()), DataError);
  CHECK_THROWS_AS((CameraIntrinsics{1.0, -1.0, 0.0, 0.0}.validate()), DataError);
  CHECK_NOTHROW((CameraIntrinsics{1.0, 1.0, 0.0, 0.0}.validate()));
}

TEST_CASE("flipping mirrors the principal point") {
  CameraIntrinsics k{30.0, 30.0, 10.0, 4.0};
  CameraIntrinsics f = flipped_horizontally(k, 32);
  CHECK(f.cx == 21.0);
  CHECK(f.cy == 4.0);
  CHECK(flipped_horizontally(f, 32) == k);
}

TEST_CASE("inverse projection at known pixels") {
  CameraIntrinsics k{100.0, 100.0, 5.0, 5.0};
  Tensor d = Tensor::full({8, 16}, 2.0);
  Tensor p = inverse_project(d, k);
  REQUIRE(p.shape() == Shape{3, 8, 16});
  const std::size_t plane = 8 * 16;
  const std::size_t at = 5 * 16 + 15;  // (x=15, y=5)
  CHECK(p[at] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(p[plane + at] == 0.0);
  CHECK(p[2 * plane + at] == 2.0);
  const std::size_t pp = 5 * 16 + 5;
  CHECK(p[pp] == 0.0);
  CHECK(p[plane + pp] == 0.0);
}

TEST_CASE("zero depth projects to the origin and Z is the input") {
  CameraIntrinsics k{20.0, 25.0, 3.5, 2.5};
  Tensor d = random_tensor({1, 6, 7}, 4, 0.5, 5.0, false);
  d.mutable_data()[10] = 0.0;
  Tensor p = inverse_project(d, k);
  const std::size_t plane = 42;
  CHECK(p[10] == 0.0);
  CHECK(p[plane + 10] == 0.0);
  for (std::size_t i = 0; i < plane; ++i) CHECK(p[2 * plane + i] == d[i]);
}

TEST_CASE("camera coordinates agree across scales") {
  // A fronto-parallel plane sampled at two resolutions: pixel (x, y) at scale
  // 1 covers the 2×2 block starting at (2x, 2y) at scale 0, whose centre sits
  // at (2x + 0.5, 2y + 0.5). With integer pixel centres at_scale halves c, so
  // the two agree up to the half-pixel offset, i.e. within D·0.5/f.
  CameraIntrinsics k0{64.0, 64.0, 15.5, 15.5};
  CameraIntrinsics k1 = at_scale(k0, 1);
  Tensor fine = inverse_project(Tensor::full({32, 32}, 3.0), k0);
  Tensor coarse = inverse_project(Tensor::full({16, 16}, 3.0), k1);
  double worst = 0.0;
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      double avg = 0.0;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) avg += fine[(2 * y + dy) * 32 + 2 * x + dx] / 4.0;
      worst = std::max(worst, std::abs(avg - coarse[y * 16 + x]));
    }
  CHECK(worst <= 3.0 * 0.5 / 64.0 + 1e-12);
}

TEST_CASE("inverse projection gradient matches finite differences") {
  CameraIntrinsics k{12.0, 9.0, 2.0, 3.5};
  Tensor d = random_tensor({5, 6}, 12, 0.5, 4.0);
  auto results =
      check_gradients([&] { return projected_loss(inverse_project(d, k), 13); }, {{"depth", d}});
  CHECK(results[0].ok);
}
