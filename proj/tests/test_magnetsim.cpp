#include <doctest.h>

#include <cmath>
#include <fstream>

#include "magfield/error.hpp"
#include "magfield/magnetsim.hpp"
#include "magfield/magnetsim_kernels.hpp"
#include "magfield/physics.hpp"
#include "util.hpp"

using namespace magfield;
using namespace magfield::sim;

namespace {

const PrismMagnet kCube{{0, 0, 0}, {5e-4, 5e-4, 5e-4}, {0.3, -0.7, 0.9}};

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

AssemblyConfig small(int res) {
  AssemblyConfig c;
  c.height = c.width = res;
  return c;
}

}  // namespace

TEST_CASE("unmagnetized prism has no field") {
  PrismMagnet m = kCube;
  m.magnetization = {0, 0, 0};
  for (Vec3 p : {Vec3{1e-3, 0, 0}, Vec3{2e-3, -3e-3, 1e-3}}) {
    const Vec3 b = prism_field(m, p);
    CHECK(b.x == 0.0);
    CHECK(b.y == 0.0);
    CHECK(b.z == 0.0);
  }
}

TEST_CASE("prism field far away matches the dipole formula within 1%") {
  const double r = 10 * 1e-3;
  for (Vec3 p : {Vec3{r, 0, 0}, Vec3{0, r, 0}, Vec3{0, 0, -r}, Vec3{0.6 * r, 0.6 * r, 0.5 * r},
                 Vec3{-0.7 * r, 0.2 * r, 0.7 * r}}) {
    const Vec3 b = prism_field(kCube, p);
    const Vec3 d = dipole_field(kCube.magnetization, 1e-9, p);
    CHECK(rel(b.x, d.x) < 0.01);
    CHECK(rel(b.y, d.y) < 0.01);
    CHECK(rel(b.z, d.z) < 0.01);
  }
}

TEST_CASE("mirror symmetry through the plane perpendicular to the magnetization") {
  PrismMagnet m = kCube;
  m.magnetization = {0, 0, 1.2};
  const Vec3 p{1.3e-3, -0.4e-3, 0.9e-3};
  const Vec3 q{p.x, p.y, -p.z};
  const Vec3 bp = prism_field(m, p);
  const Vec3 bq = prism_field(m, q);
  // The field of a z-magnetized prism is even in z for Bz, odd for Bx, By.
  CHECK(bq.x == doctest::Approx(-bp.x).epsilon(1e-12));
  CHECK(bq.y == doctest::Approx(-bp.y).epsilon(1e-12));
  CHECK(bq.z == doctest::Approx(bp.z).epsilon(1e-12));
}

TEST_CASE("points inside or on the prism are rejected") {
  CHECK_THROWS_AS(prism_field(kCube, {0, 0, 0}), DomainError);
  CHECK_THROWS_AS(prism_field(kCube, {5e-4, 0, 0}), DomainError);
}

TEST_CASE("assembly occupancy") {
  Rng rng(1);
  AssemblyConfig c;
  SUBCASE("empty") {
    c.occupancy_prob = 0.0;
    CHECK(sample_assembly(rng, c).magnets.empty());
  }
  SUBCASE("full lattice without a hole") {
    c.occupancy_prob = 1.0;
    c.hole_side_min = c.hole_side_max = 0.0;
    c.clearance = 0.0;
    CHECK(sample_assembly(rng, c).magnets.size() == 500);
  }
  SUBCASE("binomial bound on the occupied fraction") {
    // The 4 x 4 central columns are always cleared for the largest hole; use
    // a fixed-size hole so the number of eligible cells is known.
    c.hole_side_min = c.hole_side_max = 2e-3;
    c.clearance = 0.0;
    std::size_t occupied = 0;
    const int draws = 1000;
    for (int i = 0; i < draws; ++i) occupied += sample_assembly(rng, c).magnets.size();
    const double eligible = (100.0 - 4.0) * 5.0;
    const double frac = occupied / (eligible * draws);
    CHECK(frac >= 0.46);
    CHECK(frac <= 0.54);
  }
}

TEST_CASE("no magnet intersects the measurement area or its clearance") {
  const AssemblyConfig c;
  for (int i = 0; i < 50; ++i) {
    Rng rng = stream_rng(3, i);
    const MagnetAssembly a = sample_assembly(rng, c);
    const double keep = 0.5 * a.hole_side + c.clearance;
    for (const auto& m : a.magnets) {
      const bool overlaps = std::abs(m.center.x) < keep + m.half_sides.x &&
                            std::abs(m.center.y) < keep + m.half_sides.y;
      CHECK_FALSE(overlaps);
    }
  }
}

TEST_CASE("in-plane easy axes have no z component") {
  AssemblyConfig c;
  c.easy_axis = EasyAxis::in_plane;
  Rng rng(4);
  for (const auto& m : sample_assembly(rng, c).magnets) {
    CHECK(m.magnetization.z == 0.0);
    CHECK(m.magnetization.norm() == doctest::Approx(1.2).epsilon(1e-12));
  }
}

TEST_CASE("rendering an empty assembly gives zero field") {
  MagnetAssembly a;
  a.hole_side = 2e-3;
  const Sample s = render_sample(a, small(8));
  for (double v : s.field.values()) CHECK(v == 0.0);
}

TEST_CASE("rendered plane matches pointwise prism_field") {
  MagnetAssembly a;
  a.hole_side = 2e-3;
  a.magnets.push_back({{0.3e-3, -0.2e-3, -2e-3}, {5e-4, 5e-4, 5e-4}, {0.1, 0.5, -1.0}});
  const AssemblyConfig c = small(12);
  const auto pts = sample_points(a.hole_side, 12, 12);
  for (RenderKernel k : {RenderKernel::reference, RenderKernel::serial, RenderKernel::parallel}) {
    const Sample s = render_sample(a, c, k);
    std::size_t i = 0;
    double worst = 0.0;
    for (int layer = 0; layer < 3; ++layer)
      for (int r = 0; r < 12; ++r)
        for (int col = 0; col < 12; ++col, ++i) {
          const Vec3 b = prism_field(a.magnets[0], pts[i]);
          worst = std::max({worst, std::abs(s.field.at(layer, 0, r, col) - b.x),
                            std::abs(s.field.at(layer, 1, r, col) - b.y),
                            std::abs(s.field.at(layer, 2, r, col) - b.z)});
        }
    CHECK(worst <= 1e-15);
  }
}

TEST_CASE("superposition of two magnets") {
  const PrismMagnet a{{2e-3, 0, 0}, {5e-4, 5e-4, 5e-4}, {1.2, 0, 0}};
  const PrismMagnet b{{-2e-3, 1e-3, 1e-3}, {5e-4, 5e-4, 5e-4}, {0, 0.4, -0.9}};
  const std::vector<PrismMagnet> both{a, b};
  for (Vec3 p : {Vec3{0, 0, 0}, Vec3{0.4e-3, -0.3e-3, 0.1e-3}}) {
    const Vec3 s = superposition_field(both, p);
    const Vec3 t = prism_field(a, p) + prism_field(b, p);
    CHECK(s.x == doctest::Approx(t.x).epsilon(1e-14));
    CHECK(s.y == doctest::Approx(t.y).epsilon(1e-14));
    CHECK(s.z == doctest::Approx(t.z).epsilon(1e-14));
  }
}

TEST_CASE("serial and parallel kernels agree with the reference") {
  Rng rng = stream_rng(5, 0);
  const AssemblyConfig c = small(32);
  const MagnetAssembly a = sample_assembly(rng, c);
  const Sample ref = render_sample(a, c, RenderKernel::reference);
  const Sample ser = render_sample(a, c, RenderKernel::serial);
  const Sample par = render_sample(a, c, RenderKernel::parallel);
  double scale = 0.0, e1 = 0.0, e2 = 0.0;
  for (std::size_t i = 0; i < ref.field.values().size(); ++i) {
    scale = std::max(scale, std::abs(ref.field.values()[i]));
    e1 = std::max(e1, std::abs(ser.field.values()[i] - ref.field.values()[i]));
    e2 = std::max(e2, std::abs(par.field.values()[i] - ref.field.values()[i]));
  }
  CHECK(e1 <= 1e-9 * scale);
  CHECK(e2 <= 1e-9 * scale);
}

TEST_CASE("rendered divergence and curl converge at second order") {
  double div_ratio = 0.0, curl_ratio = 0.0;
  const int n = 4;
  for (int i = 0; i < n; ++i) {
    double d[2], cu[2];
    for (int k = 0; k < 2; ++k) {
      const AssemblyConfig c = small(32 << k);
      Rng rng = stream_rng(7, i);
      const Sample s = render_sample(sample_assembly(rng, c), c);
      d[k] = l_div(s.field) / s.field.dx();
      cu[k] = l_curl(s.field) / s.field.dx();
    }
    div_ratio += d[0] / d[1] / n;
    curl_ratio += cu[0] / cu[1] / n;
  }
  CHECK(div_ratio > 3.0);
  CHECK(curl_ratio > 3.0);
}

TEST_CASE("dataset generation is deterministic") {
  testutil::TempDir dir("sim");
  const AssemblyConfig c = small(8);
  const auto h1 = generate_dataset(2, c, 42, dir / "a.mfd");
  const auto h2 = generate_dataset(2, c, 42, dir / "b.mfd");
  generate_dataset(2, c, 43, dir / "c.mfd");
  auto bytes = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(bytes(dir / "a.mfd") == bytes(dir / "b.mfd"));
  CHECK(bytes(dir / "a.mfd") != bytes(dir / "c.mfd"));
  CHECK(h1.config_digest == h2.config_digest);
  CHECK(h1.sample_count == 2);
  CHECK_THROWS_AS(generate_dataset(0, c, 1, dir / "d.mfd"), ContractError);
}

TEST_CASE("assembly config file") {
  testutil::TempDir dir("sim");
  {
    std::ofstream out(dir / "c.ini");
    out << "[dataset]\nheight=32\nwidth=48\neasy_axis=in_plane\noccupancy_prob=0.25\n";
  }
  const AssemblyConfig c = load_assembly_config(dir / "c.ini");
  CHECK(c.height == 32);
  CHECK(c.width == 48);
  CHECK(c.easy_axis == EasyAxis::in_plane);
  CHECK(c.occupancy_prob == 0.25);
  CHECK(c.lattice_x == 10);
  CHECK(c.digest() == load_assembly_config(dir / "c.ini").digest());
  {
    std::ofstream out(dir / "bad.ini");
    out << "[dataset]\noccupancy_prob=1.5\n";
  }
  CHECK_THROWS_AS(load_assembly_config(dir / "bad.ini"), SpecError);
}
