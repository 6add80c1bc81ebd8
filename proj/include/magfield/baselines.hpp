#pragma once

#include <vector>

#include "magfield/field.hpp"

namespace magfield {

/// Piecewise-linear interpolation over the Delaunay triangulation of the
/// given pixel centres, per component. Throws UnsupportedTaskError when a
/// missing pixel lies outside the convex hull of the given pixels.
FieldPlane linear_interp(const FieldPlane& input, const Mask& mask);

struct SplineConfig {
  int knot_spacing = 4;      ///< pixels between B-spline knots
  double smoothing = 1e-6;   ///< weight of the 4th-difference coefficient penalty
};

/// Tensor-product cubic B-spline fitted to the given pixels by penalized
/// least squares. The penalty vanishes exactly on bicubic polynomials, so
/// those are reproduced; away from data the surface continues smoothly.
/// Given pixels are returned unchanged. Throws ConditioningError when the
/// given pixels cannot determine a bicubic (e.g. all collinear).
FieldPlane spline_interp(const FieldPlane& input, const Mask& mask,
                         const SplineConfig& config = {});

/// Discrete biharmonic fill of the missing pixels with the given pixels as
/// Dirichlet data: the minimizer of the discrete thin-plate energy, which
/// satisfies the 13-point stencil away from the grid edge and natural
/// boundary conditions at it. Throws ConditioningError when the given
/// pixels cannot pin a linear field, NumericalError if the relative
/// residual exceeds 1e-10.
FieldPlane biharmonic_inpaint(const FieldPlane& input, const Mask& mask);

struct GPConfig {
  double lengthscale = 10.0;     ///< pixels
  double signal_variance = 1.0;  ///< in units of the per-component data scale
  double noise_jitter = 1e-8;

  void validate() const;
};

/// Posterior of a zero-mean GP with RBF kernel on pixel coordinates, fitted
/// to one set of given pixels with up to three value channels.
class GaussianProcess {
 public:
  struct Point {
    int row;
    int col;
  };

  /// values[k][i] is channel k at point i. Each channel is divided by its
  /// RMS before fitting (prior mean stays 0). Escalates the jitter by 10x up
  /// to three times before throwing ConditioningError.
  GaussianProcess(std::vector<Point> points, const std::vector<std::vector<double>>& values,
                  const GPConfig& config);

  /// Posterior mean of every channel at the query points, data units.
  std::vector<std::vector<double>> mean(const std::vector<Point>& queries) const;
  double jitter_used() const noexcept { return jitter_; }

 private:
  std::vector<Point> points_;
  std::vector<std::vector<double>> alpha_;
  std::vector<double> scale_;
  GPConfig config_;
  double jitter_ = 0.0;
};

/// GP posterior mean on the missing pixels, per component; given pixels
/// are returned unchanged.
FieldPlane gp_predict(const FieldPlane& input, const Mask& mask, const GPConfig& config = {});

/// Above this many given pixels gp_predict logs an O(n^3) warning.
inline constexpr std::size_t kGpWarnPoints = 10000;

}  // namespace magfield
