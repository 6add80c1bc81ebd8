#pragma once

#include <cstddef>
#include <vector>

#include "magfield/field.hpp"

namespace magfield {

/// Single-valued H x W plane, row-major.
struct ScalarPlane {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  ScalarPlane() = default;
  ScalarPlane(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0.0) {}
  double& at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

/// Derivatives of one component of the measurement plane along x (columns)
/// or y (rows). Central differences inside, second-order one-sided at the
/// edges. Units: field units per meter.
ScalarPlane d_dx(const FieldGrid& grid, int comp);
ScalarPlane d_dy(const FieldGrid& grid, int comp);
/// (above - below) / (2 dz) for one component.
ScalarPlane d_dz(const FieldGrid& grid, int comp);

/// Per-pixel divergence of the measurement plane in T/m. With
/// include_z = false the dBz/dz term is left out (no flanking layers).
ScalarPlane divergence(const FieldGrid& grid, bool include_z = true);

/// Per-pixel curl (three components) of the measurement plane in T/m.
FieldPlane curl(const FieldGrid& grid, bool include_z = true);

/// mean |div B| * dx, in mT per pixel.
double l_div(const FieldGrid& grid, bool include_z = true);
/// mean ||curl B||_1 * dx, in uT per pixel.
double l_curl(const FieldGrid& grid, bool include_z = true);

/// Mean absolute error over the three components on missing pixels, mT.
double mae(const FieldPlane& pred, const FieldPlane& truth, const Mask& mask);

struct ReconstructionLosses {
  double match = 0.0;  ///< sum |x0 (1-m) - pred (1-m)|
  double mimic = 0.0;  ///< sum |x m - pred m|
  double match_mean = 0.0;  ///< match per given entry, mT
  double mimic_mean = 0.0;  ///< mimic per missing entry, mT
};

ReconstructionLosses reconstruction_losses(const FieldPlane& pred, const FieldPlane& input,
                                           const FieldPlane& truth, const Mask& mask);

/// Euclidean distance (pixels) from every pixel to the nearest given pixel;
/// 0 on given pixels. Exact separable transform.
std::vector<double> distance_to_given(const Mask& mask);

struct ProfileBin {
  int distance = 0;       ///< rounded distance in pixels
  std::size_t count = 0;  ///< missing pixels in the bin
  double mae = 0.0;       ///< mT, 0 for empty bins
};

/// Bins 1..max rounded distance, contiguous; empty bins have count 0.
std::vector<ProfileBin> distance_profile(const FieldPlane& pred, const FieldPlane& truth,
                                         const Mask& mask);

struct MetricReport {
  double mae = 0.0;     ///< mT
  double l_div = 0.0;   ///< mT/px
  double l_curl = 0.0;  ///< uT/px
  bool z_terms = true;  ///< false when the physics terms left out d/dz
  std::vector<ProfileBin> profile;
};

/// Metrics of a predicted measurement plane; the physics terms use the
/// truth grid's flanking layers around the prediction.
MetricReport evaluate(const FieldPlane& pred, const Sample& truth, const Mask& mask,
                      bool with_profile = false);

}  // namespace magfield
