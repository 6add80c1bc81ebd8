#pragma once

#include <span>
#include <vector>

#include "magfield/magnetsim.hpp"

namespace magfield::sim {

/// Prism corners merged across magnets: every distinct corner position with
/// the signed sum of the magnetizations of the prisms that share it. The
/// field of the whole assembly is a sum of one closed-form tensor term per
/// entry.
struct CornerSet {
  std::vector<double> x, y, z;
  std::vector<double> mx, my, mz;
  std::size_t size() const noexcept { return x.size(); }
};

CornerSet aggregate_corners(std::span<const PrismMagnet> magnets);

/// Sum of prism_field over all magnets.
Vec3 superposition_field(std::span<const PrismMagnet> magnets, Vec3 point);

void render_points_reference(std::span<const PrismMagnet> magnets, std::span<const Vec3> points,
                             std::span<Vec3> out);
void render_points_serial(std::span<const PrismMagnet> magnets, const CornerSet& corners,
                          std::span<const Vec3> points, std::span<Vec3> out);
void render_points_parallel(std::span<const PrismMagnet> magnets, const CornerSet& corners,
                            std::span<const Vec3> points, std::span<Vec3> out);

}  // namespace magfield::sim
