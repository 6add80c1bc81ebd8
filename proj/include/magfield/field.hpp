#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace magfield {

/// Field components, always stored in this order.
enum class Component : int { Bx = 0, By = 1, Bz = 2 };

inline constexpr int kComponents = 3;
inline constexpr int kLayers = 3;

/// z-layer indices of a FieldGrid.
enum class Layer : int { below = 0, measurement = 1, above = 2 };

/// Three field components on an H x W pixel plane, tesla (or normalized units).
/// Storage is [component][row][col]; row runs along y, col along x.
class FieldPlane {
 public:
  FieldPlane() = default;
  FieldPlane(int height, int width);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixels() const noexcept { return static_cast<std::size_t>(height_) * width_; }

  double& at(int comp, int row, int col) { return values_[index(comp, row, col)]; }
  double at(int comp, int row, int col) const { return values_[index(comp, row, col)]; }

  std::span<double> component(int comp) {
    return {values_.data() + comp * pixels(), pixels()};
  }
  std::span<const double> component(int comp) const {
    return {values_.data() + comp * pixels(), pixels()};
  }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  bool same_shape(const FieldPlane& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_;
  }
  friend bool operator==(const FieldPlane&, const FieldPlane&) = default;

 private:
  std::size_t index(int comp, int row, int col) const noexcept {
    return (static_cast<std::size_t>(comp) * height_ + row) * width_ + col;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

/// Three z-layers (below, measurement plane, above) of a FieldPlane with the
/// grid spacings in meters. Values are tesla.
class FieldGrid {
 public:
  FieldGrid() = default;
  FieldGrid(int height, int width, double dx, double dy, double dz);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  double dx() const noexcept { return dx_; }
  double dy() const noexcept { return dy_; }
  double dz() const noexcept { return dz_; }
  std::size_t pixels() const noexcept { return static_cast<std::size_t>(height_) * width_; }

  double& at(int layer, int comp, int row, int col) {
    return values_[index(layer, comp, row, col)];
  }
  double at(int layer, int comp, int row, int col) const {
    return values_[index(layer, comp, row, col)];
  }

  FieldPlane plane(int layer) const;
  void set_plane(int layer, const FieldPlane& plane);

  /// Copy of this grid with the measurement plane replaced.
  FieldGrid with_measurement_plane(const FieldPlane& plane) const;

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  bool all_finite() const;
  friend bool operator==(const FieldGrid&, const FieldGrid&) = default;

 private:
  std::size_t index(int layer, int comp, int row, int col) const noexcept {
    return ((static_cast<std::size_t>(layer) * kComponents + comp) * height_ + row) * width_ +
           col;
  }

  int height_ = 0;
  int width_ = 0;
  double dx_ = 0.0;
  double dy_ = 0.0;
  double dz_ = 0.0;
  std::vector<double> values_;
};

/// H x W binary map; 1 marks a missing field value, 0 a given one.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, std::uint8_t fill = 0);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixels() const noexcept { return bits_.size(); }

  bool missing(int row, int col) const { return bits_[index(row, col)] != 0; }
  void set(int row, int col, bool missing) { bits_[index(row, col)] = missing ? 1 : 0; }
  /// Sets every pixel of the rectangle [row0, row0+h) x [col0, col0+w).
  void fill_rect(int row0, int col0, int h, int w, bool missing);

  std::size_t missing_count() const;
  std::size_t given_count() const { return pixels() - missing_count(); }

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  bool matches(const FieldPlane& p) const noexcept {
    return height_ == p.height() && width_ == p.width();
  }
  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

enum class Keep { given, missing };

/// x * (1 - m) for Keep::given, x * m for Keep::missing, on all components.
FieldPlane hadamard(const FieldPlane& plane, const Mask& mask, Keep keep);

FieldGrid normalize(const FieldGrid& grid, double scale);
FieldGrid denormalize(const FieldGrid& grid, double scale);
FieldPlane normalize(const FieldPlane& plane, double scale);
FieldPlane denormalize(const FieldPlane& plane, double scale);

enum class Source : std::uint32_t { synthetic = 0, measured = 1 };

struct Sample {
  FieldGrid field;
  double area_side = 0.0;  ///< side of the measurement area, meters
  std::uint64_t seed = 0;
  Source source = Source::synthetic;
  /// False for ingested measurements: layers 0 and 2 carry no data and the
  /// z-derivative physics terms are not applicable.
  bool has_flanking_layers = true;
};

/// Rounds every value to the nearest float32, the storage precision of
/// dataset files.
FieldGrid quantize_float32(const FieldGrid& grid);

}  // namespace magfield
