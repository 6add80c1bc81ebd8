#include <doctest.h>

#include <cmath>
#include <functional>

#include "magfield/error.hpp"
#include "magfield/physics.hpp"
#include "magfield/tasks.hpp"
#include "util.hpp"

using namespace magfield;

namespace {

using FieldFn = std::function<Vec3(double, double, double)>;

FieldGrid analytic(int n, double h, const FieldFn& f) {
  FieldGrid g(n, n, h, h, h);
  for (int layer = 0; layer < 3; ++layer)
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        const Vec3 b = f(c * h, r * h, (layer - 1) * h);
        g.at(layer, 0, r, c) = b.x;
        g.at(layer, 1, r, c) = b.y;
        g.at(layer, 2, r, c) = b.z;
      }
  return g;
}

double max_abs(const ScalarPlane& p) {
  double m = 0.0;
  for (double v : p.values) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

TEST_CASE("divergence of analytic fields") {
  const double c = 3.0;  // T/m
  const double h = 1e-4;
  SUBCASE("(x, y, -2z) c is divergence free") {
    const auto g = analytic(64, h, [&](double x, double y, double z) { return Vec3{x * c, y * c, -2 * z * c}; });
    CHECK(max_abs(divergence(g)) <= 1e-12);
  }
  SUBCASE("(cy, cx, 0) is divergence free") {
    const auto g = analytic(64, h, [&](double x, double y, double) { return Vec3{c * y, c * x, 0}; });
    CHECK(max_abs(divergence(g)) <= 1e-12);
  }
  SUBCASE("(x, y, z) c has divergence 3c") {
    const auto g = analytic(64, h, [&](double x, double y, double z) { return Vec3{x * c, y * c, z * c}; });
    for (double v : divergence(g).values) CHECK(std::abs(v - 3 * c) <= 1e-12);
  }
}

TEST_CASE("curl of analytic fields") {
  const double c = 2.0;
  const double h = 1e-4;
  SUBCASE("gradient field is curl free") {
    const auto g = analytic(64, h, [&](double x, double y, double) { return Vec3{c * y, c * x, 0}; });
    const FieldPlane k = curl(g);
    for (double v : k.values()) CHECK(std::abs(v) <= 1e-12);
  }
  SUBCASE("(x, y, -2z) c is curl free") {
    const auto g = analytic(64, h, [&](double x, double y, double z) { return Vec3{x * c, y * c, -2 * z * c}; });
    for (double v : curl(g).values()) CHECK(std::abs(v) <= 1e-12);
  }
  SUBCASE("rotation has curl (0, 0, 2c)") {
    const auto g = analytic(16, h, [&](double x, double y, double) { return Vec3{-y * c, x * c, 0}; });
    const FieldPlane k = curl(g);
    for (int r = 0; r < 16; ++r)
      for (int col = 0; col < 16; ++col) {
        CHECK(std::abs(k.at(0, r, col)) <= 1e-12);
        CHECK(std::abs(k.at(1, r, col)) <= 1e-12);
        CHECK(std::abs(k.at(2, r, col) - 2 * c) <= 1e-12);
      }
  }
}

TEST_CASE("one-sided edge stencils are exact for quadratics") {
  const double h = 0.5;
  const auto g = analytic(5, h, [](double x, double y, double) { return Vec3{x * x, y * y, 0}; });
  const ScalarPlane dx = d_dx(g, 0);
  const ScalarPlane dy = d_dy(g, 1);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      CHECK(dx.at(r, c) == doctest::Approx(2 * c * h).epsilon(1e-12));
      CHECK(dy.at(r, c) == doctest::Approx(2 * r * h).epsilon(1e-12));
    }
}

TEST_CASE("operators are linear") {
  const FieldGrid f = testutil::random_grid(8, 9, 1);
  const FieldGrid g = testutil::random_grid(8, 9, 2);
  FieldGrid s = f;
  for (std::size_t i = 0; i < s.values().size(); ++i) s.values()[i] = 2.0 * f.values()[i] - 0.5 * g.values()[i];
  const auto df = divergence(f), dg = divergence(g), ds = divergence(s);
  for (std::size_t i = 0; i < ds.values.size(); ++i)
    CHECK(ds.values[i] == doctest::Approx(2.0 * df.values[i] - 0.5 * dg.values[i]).epsilon(1e-9));
  const auto cf = curl(f), cg = curl(g), cs = curl(s);
  for (std::size_t i = 0; i < cs.values().size(); ++i)
    CHECK(cs.values()[i] == doctest::Approx(2.0 * cf.values()[i] - 0.5 * cg.values()[i]).epsilon(1e-9));
}

TEST_CASE("aggregate units") {
  // Uniform divergence of 3c T/m on a grid of pitch h gives 3 c h T/px.
  const double c = 2.0, h = 1e-4;
  const auto g = analytic(8, h, [&](double x, double y, double z) { return Vec3{x * c, y * c, z * c}; });
  CHECK(l_div(g) == doctest::Approx(3 * c * h * 1e3).epsilon(1e-9));
  const auto r = analytic(8, h, [&](double x, double y, double) { return Vec3{-y * c, x * c, 0}; });
  CHECK(l_curl(r) == doctest::Approx(2 * c * h * 1e6).epsilon(1e-9));
  CHECK(l_div(r, false) <= 1e-9);
}

TEST_CASE("mae") {
  const FieldPlane t = testutil::random_plane(10, 10, 3);
  const Mask m = testutil::random_mask(10, 10, 4);
  CHECK(mae(t, t, m) == 0.0);

  FieldPlane p = t;
  for (double& v : p.component(1)) v += 1e-3;
  CHECK(mae(p, t, m) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

  const FieldPlane q = testutil::random_plane(10, 10, 5);
  double s = 0.0;
  int n = 0;
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) {
      if (!m.missing(r, c)) continue;
      ++n;
      for (int k = 0; k < 3; ++k) s += std::abs(q.at(k, r, c) - t.at(k, r, c));
    }
  CHECK(mae(q, t, m) == doctest::Approx(s / (3.0 * n) * 1e3).epsilon(1e-12));
  CHECK(mae(q, t, m) == mae(t, q, m));
  CHECK_THROWS_AS(mae(q, t, Mask(10, 10, 0)), ContractError);
}

TEST_CASE("reconstruction losses") {
  const FieldPlane truth = testutil::random_plane(12, 12, 6);
  const Mask m = testutil::random_mask(12, 12, 7);
  const FieldPlane input = make_input(truth, m);
  const FieldPlane any = testutil::random_plane(12, 12, 8);
  CHECK(reconstruction_losses(compose_result(input, any, m), input, truth, m).match == 0.0);
  CHECK(reconstruction_losses(truth, input, truth, m).mimic == 0.0);

  double match = 0.0, mimic = 0.0;
  for (int k = 0; k < 3; ++k)
    for (int r = 0; r < 12; ++r)
      for (int c = 0; c < 12; ++c) {
        const double g = m.missing(r, c) ? 0.0 : 1.0;
        match += std::abs(input.at(k, r, c) * g - any.at(k, r, c) * g);
        mimic += std::abs(truth.at(k, r, c) * (1 - g) - any.at(k, r, c) * (1 - g));
      }
  const auto l = reconstruction_losses(any, input, truth, m);
  CHECK(l.match == doctest::Approx(match).epsilon(1e-12));
  CHECK(l.mimic == doctest::Approx(mimic).epsilon(1e-12));
}

TEST_CASE("distance transform equals brute force on 32x32") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Mask m = testutil::random_mask(32, 32, seed, 0.97);
    const auto d = distance_to_given(m);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        double best = 1e300;
        for (int rr = 0; rr < 32; ++rr)
          for (int cc = 0; cc < 32; ++cc)
            if (!m.missing(rr, cc)) best = std::min(best, std::hypot(rr - r, cc - c));
        CHECK(d[r * 32 + c] == doctest::Approx(best).epsilon(1e-12));
      }
  }
}

TEST_CASE("distance profile") {
  Mask m(64, 64);
  m.fill_rect(16, 16, 30, 30, true);
  const FieldPlane t = testutil::random_plane(64, 64, 9);
  const auto bins = distance_profile(t, t, m);
  CHECK(bins.size() == 15);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    CHECK(bins[i].distance == static_cast<int>(i) + 1);
    CHECK(bins[i].mae == 0.0);
  }
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  CHECK(total == 900);
}

TEST_CASE("evaluate drops z terms for measured samples") {
  Sample s;
  s.field = testutil::random_grid(8, 8, 10);
  s.has_flanking_layers = false;
  const Mask m = testutil::random_mask(8, 8, 11);
  const auto r = evaluate(s.field.plane(1), s, m);
  CHECK_FALSE(r.z_terms);
  CHECK(r.mae == 0.0);
  CHECK(r.l_div == doctest::Approx(l_div(s.field, false)));
}
