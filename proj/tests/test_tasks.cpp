#include <doctest.h>

#include <vector>

#include "magfield/error.hpp"
#include "magfield/tasks.hpp"
#include "util.hpp"

using namespace magfield;

namespace {

TaskSpec inpaint(int side, double jitter) {
  TaskSpec t;
  t.side_px = side;
  t.jitter_frac = jitter;
  return t;
}

TaskSpec outpaint(int regions, int side) {
  TaskSpec t;
  t.kind = TaskKind::outpaint;
  t.n_regions = regions;
  t.region_side_px = side;
  return t;
}

}  // namespace

TEST_CASE("inpaint mask without jitter has exactly side^2 missing pixels") {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) CHECK(inpaint_mask(rng, inpaint(48, 0.0), 256, 256).missing_count() == 2304);
}

TEST_CASE("largest jittered inpaint square always fits") {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const Mask m = inpaint_mask(rng, inpaint(192, 0.25), 256, 256);
    const auto n = m.missing_count();
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
    CHECK(side * side == n);
    CHECK(side <= 240);
    CHECK(side >= 144);
  }
}

TEST_CASE("inpaint square position is uniform (chi-square, 1% level)") {
  // 64x64 grid, side 32 without jitter: 33 x 33 admissible corners, binned
  // into 3 x 3 groups of 11 x 11.
  Rng rng(3);
  std::vector<int> bins(9, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const Mask m = inpaint_mask(rng, inpaint(32, 0.0), 64, 64);
    int r0 = -1, c0 = -1;
    for (int r = 0; r < 64 && r0 < 0; ++r)
      for (int c = 0; c < 64; ++c)
        if (m.missing(r, c)) {
          r0 = r;
          c0 = c;
          break;
        }
    bins[(r0 / 11) * 3 + c0 / 11]++;
  }
  double chi2 = 0.0;
  const double expected = draws / 9.0;
  for (int b : bins) chi2 += (b - expected) * (b - expected) / expected;
  CHECK(chi2 < 20.09);  // chi-square 99th percentile, 8 degrees of freedom
}

TEST_CASE("outpaint masks") {
  Rng rng(4);
  SUBCASE("20 single pixels") {
    CHECK(outpaint_mask(rng, outpaint(20, 1), 256, 256).given_count() == 20);
  }
  SUBCASE("20 disjoint 16x16 regions") {
    const Mask m = outpaint_mask(rng, outpaint(20, 16), 256, 256);
    CHECK(m.given_count() == 5120);
    // Disjoint squares: every given pixel belongs to exactly one local patch
    // core, so patch count equals region count.
    TaskSpec t = outpaint(20, 16);
    t.s_pad = 0;
    const auto patches = local_patches(m, t);
    CHECK(patches.size() == 20);
    for (const auto& p : patches) {
      CHECK(p.height == 16);
      CHECK(p.width == 16);
    }
  }
  SUBCASE("no regions is rejected") {
    CHECK_THROWS_AS(outpaint_mask(rng, outpaint(0, 16), 256, 256), SpecError);
  }
}

TEST_CASE("make_input") {
  const FieldPlane f = testutil::random_plane(16, 16, 5);
  CHECK(make_input(f, Mask(16, 16, 0)) == f);
  Rng rng(6);
  const Mask m = inpaint_mask(rng, inpaint(6, 0.0), 16, 16);
  const FieldPlane in = make_input(f, m);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 16; ++r)
      for (int col = 0; col < 16; ++col)
        CHECK(in.at(c, r, col) == (m.missing(r, col) ? 0.0 : f.at(c, r, col)));
  CHECK(make_input(in, m) == in);
}

TEST_CASE("compose_result") {
  const FieldPlane in = testutil::random_plane(8, 8, 7);
  const FieldPlane gen = testutil::random_plane(8, 8, 8);
  CHECK(compose_result(in, gen, Mask(8, 8, 0)) == in);
  CHECK(compose_result(in, gen, Mask(8, 8, 1)) == gen);
  const Mask m = testutil::random_mask(8, 8, 9);
  const FieldPlane out = compose_result(in, gen, m);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 8; ++r)
      for (int col = 0; col < 8; ++col)
        CHECK(out.at(c, r, col) == (m.missing(r, col) ? gen.at(c, r, col) : in.at(c, r, col)));
  CHECK_THROWS_AS(compose_result(in, FieldPlane(8, 9), m), DimensionError);
}

TEST_CASE("local patches") {
  SUBCASE("centred 144 square on 256 grows to 152") {
    Mask m(256, 256);
    m.fill_rect(56, 56, 144, 144, true);
    const auto p = local_patches(m, inpaint(144, 0.0));
    REQUIRE(p.size() == 1);
    CHECK(p[0] == PixelRect{52, 52, 152, 152});
  }
  SUBCASE("border square is clipped") {
    Mask m(64, 64);
    m.fill_rect(0, 50, 10, 14, true);
    const auto p = local_patches(m, inpaint(12, 0.0));
    REQUIRE(p.size() == 1);
    CHECK(p[0] == PixelRect{0, 46, 14, 18});
  }
  SUBCASE("outpaint patches contain their regions and stay small") {
    Rng rng(10);
    const TaskSpec t = outpaint(20, 16);
    const Mask m = outpaint_mask(rng, t, 256, 256);
    const auto patches = local_patches(m, t);
    CHECK(patches.size() == 20);
    for (const auto& p : patches) {
      CHECK(p.height <= 32);
      CHECK(p.width <= 32);
      CHECK(p.row0 >= 0);
      CHECK(p.col0 >= 0);
      CHECK(p.row0 + p.height <= 256);
      CHECK(p.col0 + p.width <= 256);
    }
    for (int r = 0; r < 256; ++r)
      for (int c = 0; c < 256; ++c) {
        if (m.missing(r, c)) continue;
        bool inside = false;
        for (const auto& p : patches)
          inside = inside || (r >= p.row0 && r < p.row0 + p.height && c >= p.col0 && c < p.col0 + p.width);
        CHECK(inside);
      }
  }
  SUBCASE("mask without missing pixels") {
    CHECK_THROWS_AS(local_patches(Mask(16, 16, 0), inpaint(4, 0.0)), ContractError);
  }
}

TEST_CASE("masks depend only on the seed and spec") {
  Rng a(11), b(11);
  CHECK(make_mask(a, outpaint(20, 4), 64, 64) == make_mask(b, outpaint(20, 4), 64, 64));
}
