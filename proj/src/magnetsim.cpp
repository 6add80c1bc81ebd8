#include "magfield/magnetsim.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "magfield/error.hpp"
#include "magfield/magnetsim_kernels.hpp"

namespace magfield::sim {

namespace {

constexpr double kInvFourPi = 1.0 / (4.0 * std::numbers::pi);

double atan_term(double num, double den) { return den != 0.0 ? std::atan(num / den) : 0.0; }

/// ln(t0 + R0) - ln(t1 + R1) for t0 > t1 at equal transverse distance^2 `a`,
/// evaluated without cancellation on either side of t = 0.
double log_pair(double t0, double t1, double a) {
  const double r0 = std::sqrt(t0 * t0 + a);
  const double r1 = std::sqrt(t1 * t1 + a);
  if (t1 >= 0.0) return std::log((t0 + r0) / (t1 + r1));
  if (t0 < 0.0) return std::log((r1 - t1) / (r0 - t0));
  // t1 < 0 <= t0: the point is level with the prism along this axis.
  return std::log((t0 + r0) * (r1 - t1) / a);
}

std::string easy_axis_name(EasyAxis a) {
  return a == EasyAxis::in_plane ? "in_plane" : "uniform_sphere";
}

}  // namespace

Vec3 prism_field(const PrismMagnet& prism, Vec3 p) {
  const Vec3 h = prism.half_sides;
  if (!(h.x > 0.0 && h.y > 0.0 && h.z > 0.0)) {
    throw DomainError("prism half sides must be positive");
  }
  const Vec3 d = p - prism.center;
  if (std::abs(d.x) <= h.x && std::abs(d.y) <= h.y && std::abs(d.z) <= h.z) {
    throw DomainError("field point lies inside or on the prism");
  }
  // u_i = x - x_i with i = 0 the lower face, 1 the upper face.
  const double u[2] = {d.x + h.x, d.x - h.x};
  const double v[2] = {d.y + h.y, d.y - h.y};
  const double w[2] = {d.z + h.z, d.z - h.z};

  double txx = 0.0, tyy = 0.0, tzz = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      for (int k = 0; k < 2; ++k) {
        const double s = ((i + j + k) % 2 == 0) ? -1.0 : 1.0;
        const double r = std::sqrt(u[i] * u[i] + v[j] * v[j] + w[k] * w[k]);
        txx += s * atan_term(v[j] * w[k], u[i] * r);
        tyy += s * atan_term(u[i] * w[k], v[j] * r);
        tzz += s * atan_term(u[i] * v[j], w[k] * r);
      }
    }
  }
  // Off-diagonal terms pair the two faces along one axis.
  double txy = 0.0, txz = 0.0, tyz = 0.0;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const double s = ((a + b) % 2 == 0) ? 1.0 : -1.0;
      txy += s * log_pair(w[0], w[1], u[a] * u[a] + v[b] * v[b]);
      txz += s * log_pair(v[0], v[1], u[a] * u[a] + w[b] * w[b]);
      tyz += s * log_pair(u[0], u[1], v[a] * v[a] + w[b] * w[b]);
    }
  }
  const Vec3 m = prism.magnetization;
  return {kInvFourPi * (txx * m.x + txy * m.y + txz * m.z),
          kInvFourPi * (txy * m.x + tyy * m.y + tyz * m.z),
          kInvFourPi * (txz * m.x + tyz * m.y + tzz * m.z)};
}

Vec3 dipole_field(Vec3 remanence, double volume, Vec3 offset) {
  const double r = offset.norm();
  const Vec3 n = (1.0 / r) * offset;
  const double c = volume * kInvFourPi / (r * r * r);
  return c * (3.0 * remanence.dot(n) * n - remanence);
}

void AssemblyConfig::validate() const {
  if (lattice_x < 1 || lattice_y < 1 || lattice_z < 1) throw SpecError("lattice must be non-empty");
  if (!(occupancy_prob >= 0.0 && occupancy_prob <= 1.0)) {
    throw SpecError("occupancy_prob must lie in [0, 1]");
  }
  if (!(cube_side > 0.0)) throw SpecError("cube_side must be positive");
  if (!(remanence >= 0.0 && remanence <= 2.0)) throw SpecError("remanence must lie in [0, 2] T");
  if (!(hole_side_min >= 0.0 && hole_side_min <= hole_side_max)) {
    throw SpecError("hole side range must satisfy 0 <= min <= max");
  }
  const double extent = cube_side * std::min(lattice_x, lattice_y);
  if (hole_side_max + 2.0 * clearance > extent) {
    throw SpecError("hole side range (plus clearance) exceeds the lattice extent");
  }
  if (clearance < 0.0) throw SpecError("clearance must be non-negative");
  if (height < 3 || width < 3) throw SpecError("resolution must be at least 3x3");
}

std::string AssemblyConfig::canonical() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "cube_side=" << cube_side << '\n'
     << "clearance=" << clearance << '\n'
     << "easy_axis=" << easy_axis_name(easy_axis) << '\n'
     << "height=" << height << '\n'
     << "hole_side_max=" << hole_side_max << '\n'
     << "hole_side_min=" << hole_side_min << '\n'
     << "lattice=" << lattice_x << 'x' << lattice_y << 'x' << lattice_z << '\n'
     << "occupancy_prob=" << occupancy_prob << '\n'
     << "remanence=" << remanence << '\n'
     << "width=" << width << '\n';
  return os.str();
}

AssemblyConfig load_assembly_config(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  AssemblyConfig c;
  const auto section = tree.get_child_optional("dataset");
  if (!section) return c;
  const auto& s = *section;
  c.lattice_x = s.get("lattice_x", c.lattice_x);
  c.lattice_y = s.get("lattice_y", c.lattice_y);
  c.lattice_z = s.get("lattice_z", c.lattice_z);
  c.occupancy_prob = s.get("occupancy_prob", c.occupancy_prob);
  c.cube_side = s.get("cube_side", c.cube_side);
  c.remanence = s.get("remanence", c.remanence);
  c.hole_side_min = s.get("hole_side_min", c.hole_side_min);
  c.hole_side_max = s.get("hole_side_max", c.hole_side_max);
  c.clearance = s.get("clearance", c.clearance);
  c.height = s.get("height", c.height);
  c.width = s.get("width", c.width);
  const auto axis = s.get<std::string>("easy_axis", easy_axis_name(c.easy_axis));
  if (axis == "uniform_sphere") {
    c.easy_axis = EasyAxis::uniform_sphere;
  } else if (axis == "in_plane") {
    c.easy_axis = EasyAxis::in_plane;
  } else {
    throw FormatError("unknown easy_axis '" + axis + "'");
  }
  c.validate();
  return c;
}

MagnetAssembly sample_assembly(Rng& rng, const AssemblyConfig& config) {
  config.validate();
  MagnetAssembly a;
  a.hole_side = uniform(rng, config.hole_side_min, config.hole_side_max);
  const double pitch = config.cube_side;
  const double half = 0.5 * config.cube_side;
  const double keep_out = 0.5 * a.hole_side + config.clearance;
  for (int k = 0; k < config.lattice_z; ++k) {
    for (int j = 0; j < config.lattice_y; ++j) {
      for (int i = 0; i < config.lattice_x; ++i) {
        const Vec3 c{(i - 0.5 * (config.lattice_x - 1)) * pitch,
                     (j - 0.5 * (config.lattice_y - 1)) * pitch,
                     (k - 0.5 * (config.lattice_z - 1)) * pitch};
        // Open-interval overlap of the cell footprint with the keep-out square.
        const bool in_hole = std::abs(c.x) < keep_out + half && std::abs(c.y) < keep_out + half &&
                             keep_out > 0.0;
        if (in_hole) continue;
        if (!bernoulli(rng, config.occupancy_prob)) continue;
        const Vec3 axis = config.easy_axis == EasyAxis::in_plane ? uniform_circle(rng)
                                                                 : uniform_sphere(rng);
        a.magnets.push_back({c, {half, half, half}, config.remanence * axis});
      }
    }
  }
  return a;
}

std::vector<Vec3> sample_points(double hole_side, int height, int width) {
  const double dx = hole_side / width;
  const double dy = hole_side / height;
  const double dz = dx;
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(kLayers) * height * width);
  for (int layer = 0; layer < kLayers; ++layer) {
    const double z = (layer - 1) * dz;
    for (int row = 0; row < height; ++row) {
      const double y = -0.5 * hole_side + (row + 0.5) * dy;
      for (int col = 0; col < width; ++col) {
        pts.push_back({-0.5 * hole_side + (col + 0.5) * dx, y, z});
      }
    }
  }
  return pts;
}

Sample render_sample(const MagnetAssembly& assembly, const AssemblyConfig& config,
                     RenderKernel kernel) {
  const int h = config.height;
  const int w = config.width;
  if (!(assembly.hole_side > 0.0)) throw GenerationError("assembly has no measurement area");
  const double dx = assembly.hole_side / w;
  const double dy = assembly.hole_side / h;
  const auto pts = sample_points(assembly.hole_side, h, w);

  // No evaluation point may touch a magnet.
  const double half = 0.5 * assembly.hole_side;
  for (const auto& m : assembly.magnets) {
    const Vec3 lo = m.center - m.half_sides;
    const Vec3 hi = m.center + m.half_sides;
    const bool overlaps_xy = lo.x <= half && hi.x >= -half && lo.y <= half && hi.y >= -half;
    const bool overlaps_z = lo.z <= dx && hi.z >= -dx;
    if (overlaps_xy && overlaps_z) {
      for (const auto& p : pts) {
        if (p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z &&
            p.z <= hi.z) {
          throw GenerationError("evaluation point inside a magnet");
        }
      }
    }
  }

  std::vector<Vec3> field(pts.size());
  if (kernel == RenderKernel::reference) {
    render_points_reference(assembly.magnets, pts, field);
  } else {
    const auto corners = aggregate_corners(assembly.magnets);
    if (kernel == RenderKernel::serial) {
      render_points_serial(assembly.magnets, corners, pts, field);
    } else {
      render_points_parallel(assembly.magnets, corners, pts, field);
    }
  }

  Sample s;
  s.field = FieldGrid(h, w, dx, dy, dx);
  s.area_side = assembly.hole_side;
  s.source = Source::synthetic;
  s.has_flanking_layers = true;
  std::size_t i = 0;
  for (int layer = 0; layer < kLayers; ++layer) {
    for (int row = 0; row < h; ++row) {
      for (int col = 0; col < w; ++col, ++i) {
        s.field.at(layer, 0, row, col) = field[i].x;
        s.field.at(layer, 1, row, col) = field[i].y;
        s.field.at(layer, 2, row, col) = field[i].z;
      }
    }
  }
  if (!s.field.all_finite()) throw GenerationError("non-finite field value rendered");
  return s;
}

DatasetHeader generate_dataset(std::size_t n, const AssemblyConfig& config, std::uint64_t seed,
                               const std::filesystem::path& path) {
  if (n < 1) throw ContractError("dataset needs at least one sample");
  config.validate();
  DatasetWriter writer(path, n, config.height, config.width, config.digest());
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = stream_rng(seed, i);
    const auto assembly = sample_assembly(rng, config);
    Sample s = render_sample(assembly, config);
    s.seed = seed;
    writer.append(s);
  }
  return writer.finish();
}

}  // namespace magfield::sim
