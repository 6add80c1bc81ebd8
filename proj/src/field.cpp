#include "magfield/field.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "magfield/error.hpp"

namespace magfield {

namespace {

void check_shape(int height, int width) {
  if (height < 1 || width < 1) {
    throw DimensionError("field shape must be positive, got " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
}

void check_scale(double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw DomainError("normalization scale must be positive and finite");
  }
}

}  // namespace

FieldPlane::FieldPlane(int height, int width)
    : height_(height), width_(width) {
  check_shape(height, width);
  values_.assign(static_cast<std::size_t>(kComponents) * height * width, 0.0);
}

FieldGrid::FieldGrid(int height, int width, double dx, double dy, double dz)
    : height_(height), width_(width), dx_(dx), dy_(dy), dz_(dz) {
  if (height < 3 || width < 3) {
    throw DimensionError("field grid needs at least 3x3 pixels");
  }
  if (!(dx > 0.0) || !(dy > 0.0) || !(dz > 0.0)) {
    throw DomainError("grid spacings must be positive");
  }
  values_.assign(static_cast<std::size_t>(kLayers) * kComponents * height * width, 0.0);
}

FieldPlane FieldGrid::plane(int layer) const {
  FieldPlane p(height_, width_);
  const auto n = static_cast<std::size_t>(kComponents) * pixels();
  std::copy_n(values_.begin() + layer * n, n, p.values().begin());
  return p;
}

void FieldGrid::set_plane(int layer, const FieldPlane& plane) {
  if (plane.height() != height_ || plane.width() != width_) {
    throw DimensionError("plane shape does not match grid");
  }
  const auto n = static_cast<std::size_t>(kComponents) * pixels();
  std::copy_n(plane.values().begin(), n, values_.begin() + layer * n);
}

FieldGrid FieldGrid::with_measurement_plane(const FieldPlane& plane) const {
  FieldGrid g = *this;
  g.set_plane(static_cast<int>(Layer::measurement), plane);
  return g;
}

bool FieldGrid::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Mask::Mask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
  check_shape(height, width);
  bits_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

void Mask::fill_rect(int row0, int col0, int h, int w, bool missing) {
  const int r1 = std::min(height_, row0 + h);
  const int c1 = std::min(width_, col0 + w);
  for (int r = std::max(0, row0); r < r1; ++r) {
    for (int c = std::max(0, col0); c < c1; ++c) set(r, c, missing);
  }
}

std::size_t Mask::missing_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

FieldPlane hadamard(const FieldPlane& plane, const Mask& mask, Keep keep) {
  if (!mask.matches(plane)) {
    throw DimensionError("mask " + std::to_string(mask.height()) + "x" +
                         std::to_string(mask.width()) + " does not match plane " +
                         std::to_string(plane.height()) + "x" + std::to_string(plane.width()));
  }
  FieldPlane out(plane.height(), plane.width());
  const auto bits = mask.bits();
  const std::uint8_t selected = keep == Keep::given ? 0 : 1;
  for (int c = 0; c < kComponents; ++c) {
    auto src = plane.component(c);
    auto dst = out.component(c);
    for (std::size_t i = 0; i < bits.size(); ++i) {
      dst[i] = bits[i] == selected ? src[i] : 0.0;
    }
  }
  return out;
}

FieldGrid normalize(const FieldGrid& grid, double scale) {
  check_scale(scale);
  FieldGrid g = grid;
  for (double& v : g.values()) v /= scale;
  return g;
}

FieldGrid denormalize(const FieldGrid& grid, double scale) {
  check_scale(scale);
  FieldGrid g = grid;
  for (double& v : g.values()) v *= scale;
  return g;
}

FieldPlane normalize(const FieldPlane& plane, double scale) {
  check_scale(scale);
  FieldPlane p = plane;
  for (double& v : p.values()) v /= scale;
  return p;
}

FieldPlane denormalize(const FieldPlane& plane, double scale) {
  check_scale(scale);
  FieldPlane p = plane;
  for (double& v : p.values()) v *= scale;
  return p;
}

FieldGrid quantize_float32(const FieldGrid& grid) {
  FieldGrid g = grid;
  for (double& v : g.values()) v = static_cast<double>(static_cast<float>(v));
  return g;
}

}  // namespace magfield
