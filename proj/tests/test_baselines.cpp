#include <doctest.h>

#include <Eigen/Dense>

#include <chrono>
#include <cmath>

#include "magfield/baselines.hpp"
#include "magfield/error.hpp"
#include "magfield/physics.hpp"
#include "magfield/tasks.hpp"
#include "util.hpp"

using namespace magfield;

namespace {

template <class F>
FieldPlane plane_of(int h, int w, F f) {
  FieldPlane p(h, w);
  for (int k = 0; k < 3; ++k)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) p.at(k, r, c) = f(k, r, c);
  return p;
}

double max_err(const FieldPlane& a, const FieldPlane& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) e = std::max(e, std::abs(a.values()[i] - b.values()[i]));
  return e;
}

Mask square(int n, int r0, int c0, int side) {
  Mask m(n, n);
  m.fill_rect(r0, c0, side, side, true);
  return m;
}

const auto kLinear = [](int k, int r, int c) { return 0.01 * (k + 1) + 1e-3 * r - 2e-3 * c; };

}  // namespace

TEST_CASE("linear interpolation") {
  const Mask m = square(20, 5, 6, 8);
  SUBCASE("reproduces linear fields") {
    const FieldPlane f = plane_of(20, 20, kLinear);
    CHECK(max_err(linear_interp(make_input(f, m), m), f) <= 1e-12);
  }
  SUBCASE("reproduces constants") {
    const FieldPlane f = plane_of(20, 20, [](int, int, int) { return 0.7; });
    CHECK(max_err(linear_interp(make_input(f, m), m), f) <= 1e-12);
  }
  SUBCASE("refuses extrapolation") {
    Rng rng(1);
    TaskSpec t;
    t.kind = TaskKind::outpaint;
    t.n_regions = 4;
    t.region_side_px = 3;
    const Mask o = outpaint_mask(rng, t, 20, 20);
    const FieldPlane f = plane_of(20, 20, kLinear);
    CHECK_THROWS_AS(linear_interp(make_input(f, o), o), UnsupportedTaskError);
  }
}

TEST_CASE("spline interpolation") {
  SUBCASE("reproduces bicubic polynomials") {
    const FieldPlane f = plane_of(24, 24, [](int k, int r, int c) {
      const double x = c / 24.0, y = r / 24.0;
      return (k + 1) * (0.2 + x - 0.5 * y + x * y - 0.3 * x * x * x + 0.7 * x * x * y * y * y);
    });
    const Mask m = square(24, 6, 8, 9);
    const FieldPlane p = spline_interp(make_input(f, m), m);
    CHECK(max_err(p, f) <= 1e-8);
  }
  SUBCASE("keeps given pixels") {
    const FieldPlane f = testutil::random_plane(16, 16, 2);
    const Mask m = square(16, 4, 4, 5);
    const FieldPlane in = make_input(f, m);
    const FieldPlane p = spline_interp(in, m);
    for (int k = 0; k < 3; ++k)
      for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
          if (!m.missing(r, c)) CHECK(p.at(k, r, c) == in.at(k, r, c));
  }
  SUBCASE("no missing pixels returns the input") {
    const FieldPlane f = testutil::random_plane(8, 8, 3);
    CHECK(spline_interp(f, Mask(8, 8)) == f);
  }
  SUBCASE("collinear given pixels cannot condition a bicubic") {
    Mask m(12, 12, 1);
    for (int c = 0; c < 12; ++c) m.set(5, c, false);
    const FieldPlane f = testutil::random_plane(12, 12, 4);
    CHECK_THROWS_AS(spline_interp(make_input(f, m), m), ConditioningError);
  }
}

TEST_CASE("biharmonic inpainting") {
  SUBCASE("reproduces linear fields") {
    const FieldPlane f = plane_of(20, 20, kLinear);
    const Mask m = square(20, 4, 7, 9);
    CHECK(max_err(biharmonic_inpaint(make_input(f, m), m), f) <= 1e-10);
  }
  SUBCASE("a single hole in a constant field") {
    const FieldPlane f = plane_of(9, 9, [](int k, int, int) { return 0.3 * (k + 1); });
    const Mask m = square(9, 4, 4, 1);
    CHECK(max_err(biharmonic_inpaint(make_input(f, m), m), f) <= 1e-12);
  }
  SUBCASE("4x4 block in 8x8 equals a dense solve of the same system") {
    // Interior 13-point stencil: every missing pixel lies at least two pixels
    // from the edge, so each equation is the full biharmonic stencil.
    const int n = 8;
    const Mask m = square(n, 2, 2, 4);
    const FieldPlane f = testutil::random_plane(n, n, 5);
    const FieldPlane in = make_input(f, m);
    const FieldPlane p = biharmonic_inpaint(in, m);

    std::vector<std::pair<int, int>> unknown;
    std::vector<int> id(n * n, -1);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        if (m.missing(r, c)) {
          id[r * n + c] = static_cast<int>(unknown.size());
          unknown.push_back({r, c});
        }
    const int u = static_cast<int>(unknown.size());
    const int offs[13][3] = {{0, 0, 20},  {-1, 0, -8}, {1, 0, -8}, {0, -1, -8}, {0, 1, -8},
                             {-1, -1, 2}, {-1, 1, 2},  {1, -1, 2}, {1, 1, 2},   {-2, 0, 1},
                             {2, 0, 1},   {0, -2, 1},  {0, 2, 1}};
    for (int k = 0; k < 3; ++k) {
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(u, u);
      Eigen::VectorXd b = Eigen::VectorXd::Zero(u);
      for (int i = 0; i < u; ++i) {
        const auto [r, c] = unknown[i];
        for (const auto& o : offs) {
          const int rr = r + o[0], cc = c + o[1];
          const int j = id[rr * n + cc];
          if (j >= 0) {
            A(i, j) += o[2];
          } else {
            b(i) -= o[2] * in.at(k, rr, cc);
          }
        }
      }
      const Eigen::VectorXd x = A.fullPivLu().solve(b);
      for (int i = 0; i < u; ++i) {
        const auto [r, c] = unknown[i];
        CHECK(p.at(k, r, c) == doctest::Approx(x(i)).epsilon(1e-9));
      }
    }
  }
  SUBCASE("missing region reaching the edges and corners") {
    // Outpainting layout: everything missing but three small given squares.
    Mask m(24, 24, 1);
    m.fill_rect(3, 4, 2, 2, false);
    m.fill_rect(15, 18, 2, 2, false);
    m.fill_rect(19, 2, 2, 2, false);
    const FieldPlane f = plane_of(24, 24, kLinear);
    CHECK(max_err(biharmonic_inpaint(make_input(f, m), m), f) <= 1e-9);

    const FieldPlane g = testutil::random_plane(24, 24, 6);
    const FieldPlane p = biharmonic_inpaint(make_input(g, m), m);
    for (double v : p.values()) CHECK(std::isfinite(v));
  }
  SUBCASE("given pixels that cannot pin a plane") {
    Mask m(12, 12, 1);
    for (int c = 0; c < 12; ++c) m.set(5, c, false);
    const FieldPlane f = plane_of(12, 12, kLinear);
    CHECK_THROWS_AS(biharmonic_inpaint(make_input(f, m), m), ConditioningError);
  }
}

TEST_CASE("gaussian process") {
  GPConfig cfg;
  SUBCASE("single given point") {
    Mask m(64, 64, 1);
    m.set(5, 5, false);
    FieldPlane in(64, 64);
    in.at(0, 5, 5) = 0.4;
    in.at(1, 5, 5) = -0.2;
    in.at(2, 5, 5) = 0.1;
    const FieldPlane p = gp_predict(in, m, cfg);
    CHECK(p.at(0, 5, 5) == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(std::abs(p.at(0, 63, 63)) < 1e-6);
    CHECK(std::abs(p.at(1, 60, 2)) < 1e-6);
  }
  SUBCASE("20 single points match a dense kernel solve") {
    Rng rng(6);
    TaskSpec t;
    t.kind = TaskKind::outpaint;
    t.n_regions = 20;
    t.region_side_px = 1;
    const Mask m = outpaint_mask(rng, t, 48, 48);
    const FieldPlane f = testutil::random_plane(48, 48, 7, 0.05);
    const FieldPlane in = make_input(f, m);
    const FieldPlane p = gp_predict(in, m, cfg);

    std::vector<std::pair<int, int>> pts;
    for (int r = 0; r < 48; ++r)
      for (int c = 0; c < 48; ++c)
        if (!m.missing(r, c)) pts.push_back({r, c});
    const int n = static_cast<int>(pts.size());
    auto k = [&](int r0, int c0, int r1, int c1) {
      const double d2 = double(r0 - r1) * (r0 - r1) + double(c0 - c1) * (c0 - c1);
      return std::exp(-d2 / (2 * cfg.lengthscale * cfg.lengthscale));
    };
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) K(i, j) = k(pts[i].first, pts[i].second, pts[j].first, pts[j].second);
    // The prediction is scale-invariant in the per-channel normalization,
    // and the jitter on the normalized kernel is signal_variance-relative.
    K.diagonal().array() += cfg.noise_jitter;
    for (int ch = 0; ch < 3; ++ch) {
      Eigen::VectorXd y(n);
      for (int i = 0; i < n; ++i) y(i) = in.at(ch, pts[i].first, pts[i].second);
      const Eigen::VectorXd alpha = K.ldlt().solve(y);
      for (int r = 0; r < 48; r += 7)
        for (int c = 0; c < 48; c += 5) {
          if (!m.missing(r, c)) continue;
          double mu = 0.0;
          for (int i = 0; i < n; ++i) mu += k(r, c, pts[i].first, pts[i].second) * alpha(i);
          CHECK(p.at(ch, r, c) == doctest::Approx(mu).epsilon(1e-6).scale(1e-6));
        }
    }
  }
  SUBCASE("bad config") {
    cfg.lengthscale = 0.0;
    CHECK_THROWS_AS(cfg.validate(), SpecError);
  }
}

TEST_CASE("methods linear in the data commute with scaling") {
  const FieldPlane f = testutil::random_plane(16, 16, 8);
  const Mask m = square(16, 5, 5, 6);
  FieldPlane g = f;
  for (double& v : g.values()) v *= -2.5;
  auto check = [&](const FieldPlane& a, const FieldPlane& b) {
    for (std::size_t i = 0; i < a.values().size(); ++i)
      CHECK(b.values()[i] == doctest::Approx(-2.5 * a.values()[i]).epsilon(1e-8).scale(1e-9));
  };
  SUBCASE("linear") { check(linear_interp(make_input(f, m), m), linear_interp(make_input(g, m), m)); }
  SUBCASE("biharmonic") {
    check(biharmonic_inpaint(make_input(f, m), m), biharmonic_inpaint(make_input(g, m), m));
  }
  SUBCASE("gp") {
    // Dense given sets make the RBF kernel matrix near singular; use sparse points.
    Mask sparse(16, 16, 1);
    for (int r = 1; r < 16; r += 5)
      for (int c = 2; c < 16; c += 4) sparse.set(r, c, false);
    check(gp_predict(make_input(f, sparse), sparse), gp_predict(make_input(g, sparse), sparse));
  }
}
