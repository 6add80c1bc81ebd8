#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "magfield/dataset.hpp"
#include "magfield/field.hpp"
#include "magfield/rng.hpp"
#include "magfield/vec3.hpp"

namespace magfield::sim {

/// Uniformly magnetized rectangular prism. `magnetization` is the remanence
/// vector mu0*M in tesla.
struct PrismMagnet {
  Vec3 center;
  Vec3 half_sides;
  Vec3 magnetization;
};

enum class EasyAxis { uniform_sphere, in_plane };

struct AssemblyConfig {
  int lattice_x = 10;
  int lattice_y = 10;
  int lattice_z = 5;
  double occupancy_prob = 0.5;
  double cube_side = 1e-3;  ///< also the lattice pitch: neighbouring cubes touch
  double remanence = 1.2;
  double hole_side_min = 1e-3;
  double hole_side_max = 4e-3;
  /// Extra magnet-free margin around the measurement area. Cells whose
  /// footprint reaches into the area grown by this margin stay empty.
  double clearance = 2.5e-4;
  EasyAxis easy_axis = EasyAxis::uniform_sphere;
  int height = 64;
  int width = 64;

  void validate() const;
  /// Stable key=value rendering used for the dataset digest.
  std::string canonical() const;
  Digest digest() const { return sha256(canonical()); }
};

/// Reads the [dataset] section of an INI-style config file; absent keys keep
/// their defaults.
AssemblyConfig load_assembly_config(const std::filesystem::path& path);

struct MagnetAssembly {
  std::vector<PrismMagnet> magnets;
  double hole_side = 0.0;  ///< side of the magnet-free measurement area, meters
};

/// Closed-form B field (tesla) of one prism at a point outside it.
/// Throws DomainError for points inside or on the prism surface.
Vec3 prism_field(const PrismMagnet& prism, Vec3 point);

/// Field of a point dipole with moment m = M V / mu0 at offset r from it,
/// written in terms of the remanence vector: B = V/(4 pi) (3 (Br.r^) r^ - Br) / r^3.
Vec3 dipole_field(Vec3 remanence, double volume, Vec3 offset);

MagnetAssembly sample_assembly(Rng& rng, const AssemblyConfig& config);

/// Evaluation points of a rendered sample, ordered [layer][row][col].
std::vector<Vec3> sample_points(double hole_side, int height, int width);

enum class RenderKernel {
  reference,  ///< per-prism superposition of prism_field, serial
  serial,     ///< corner-aggregated closed form, scalar loop
  parallel,   ///< corner-aggregated closed form, OpenMP + SIMD
};

/// Renders the three layers over the measurement area; dx = dy = hole_side/W
/// (dy = hole_side/H), dz = dx. Values stay in double precision; dataset
/// files store float32.
Sample render_sample(const MagnetAssembly& assembly, const AssemblyConfig& config,
                     RenderKernel kernel = RenderKernel::parallel);

/// Writes n samples; sample i uses stream_rng(seed, i).
DatasetHeader generate_dataset(std::size_t n, const AssemblyConfig& config, std::uint64_t seed,
                               const std::filesystem::path& path);

}  // namespace magfield::sim
