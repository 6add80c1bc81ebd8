#include "magfield/baselines.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <boost/polygon/voronoi.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>

#include "magfield/error.hpp"

namespace magfield {

namespace {

void require_shapes(const FieldPlane& input, const Mask& mask, const char* who) {
  if (!mask.matches(input)) throw DimensionError(std::string(who) + ": mask/field shape mismatch");
}

std::int64_t orient(std::int64_t ax, std::int64_t ay, std::int64_t bx, std::int64_t by,
                    std::int64_t px, std::int64_t py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

// ---------------------------------------------------------------- linear

FieldPlane linear_interp(const FieldPlane& input, const Mask& mask) {
  require_shapes(input, mask, "linear_interp");
  const int h = input.height();
  const int w = input.width();
  FieldPlane out = input;
  if (mask.missing_count() == 0) return out;
  if (mask.given_count() < 3) {
    throw UnsupportedTaskError("linear_interp: fewer than three given pixels");
  }

  using boost::polygon::point_data;
  std::vector<point_data<int>> sites;
  sites.reserve(mask.given_count());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask.missing(r, c)) sites.emplace_back(c, r);
    }
  }
  boost::polygon::voronoi_diagram<double> vd;
  boost::polygon::construct_voronoi(sites.begin(), sites.end(), &vd);

  std::vector<std::uint8_t> filled(mask.pixels(), 0);
  std::size_t remaining = mask.missing_count();
  std::vector<std::size_t> ring;

  // Each Voronoi vertex is a Delaunay face; co-circular sites give
  // polygons, which are fanned into triangles.
  for (const auto& vertex : vd.vertices()) {
    if (remaining == 0) break;
    ring.clear();
    const auto* edge = vertex.incident_edge();
    do {
      ring.push_back(edge->cell()->source_index());
      edge = edge->rot_next();
    } while (edge != vertex.incident_edge());

    for (std::size_t t = 1; t + 1 < ring.size(); ++t) {
      const auto& a = sites[ring[0]];
      const auto& b = sites[ring[t]];
      const auto& c = sites[ring[t + 1]];
      const std::int64_t area = orient(a.x(), a.y(), b.x(), b.y(), c.x(), c.y());
      if (area == 0) continue;
      const int c0 = std::min({a.x(), b.x(), c.x()});
      const int c1 = std::max({a.x(), b.x(), c.x()});
      const int r0 = std::min({a.y(), b.y(), c.y()});
      const int r1 = std::max({a.y(), b.y(), c.y()});
      for (int r = r0; r <= r1; ++r) {
        for (int col = c0; col <= c1; ++col) {
          const std::size_t idx = static_cast<std::size_t>(r) * w + col;
          if (!mask.missing(r, col) || filled[idx]) continue;
          const std::int64_t wa = orient(b.x(), b.y(), c.x(), c.y(), col, r);
          const std::int64_t wb = orient(c.x(), c.y(), a.x(), a.y(), col, r);
          const std::int64_t wc = orient(a.x(), a.y(), b.x(), b.y(), col, r);
          const bool inside = area > 0 ? (wa >= 0 && wb >= 0 && wc >= 0)
                                       : (wa <= 0 && wb <= 0 && wc <= 0);
          if (!inside) continue;
          const double la = static_cast<double>(wa) / area;
          const double lb = static_cast<double>(wb) / area;
          const double lc = static_cast<double>(wc) / area;
          for (int k = 0; k < kComponents; ++k) {
            out.at(k, r, col) = la * input.at(k, a.y(), a.x()) + lb * input.at(k, b.y(), b.x()) +
                                lc * input.at(k, c.y(), c.x());
          }
          filled[idx] = 1;
          --remaining;
        }
      }
    }
  }
  if (remaining > 0) {
    throw UnsupportedTaskError("linear_interp: " + std::to_string(remaining) +
                               " missing pixels lie outside the convex hull of the given pixels");
  }
  return out;
}

// ---------------------------------------------------------------- spline

namespace {

struct SplineAxis {
  int count = 0;  // basis functions
  int intervals = 0;
  double inv_spacing = 0.0;

  SplineAxis(int pixels, int spacing) {
    const double extent = static_cast<double>(pixels - 1) / spacing;
    intervals = std::max(1, static_cast<int>(std::ceil(extent - 1e-12)));
    count = intervals + 3;
    inv_spacing = 1.0 / spacing;
  }

  // First basis index and the four weights at pixel coordinate p.
  int eval(int p, double wts[4]) const {
    const double t = p * inv_spacing;
    int i = std::min(static_cast<int>(std::floor(t)), intervals - 1);
    const double u = t - i;
    const double u2 = u * u;
    const double u3 = u2 * u;
    wts[0] = (1.0 - u) * (1.0 - u) * (1.0 - u) / 6.0;
    wts[1] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0;
    wts[2] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0;
    wts[3] = u3 / 6.0;
    return i;
  }
};

// Rank of the 16-column bicubic design on the given pixels.
int bicubic_rank(const std::vector<std::pair<int, int>>& pts, int h, int w) {
  Eigen::MatrixXd design(pts.size(), 16);
  const double sx = 2.0 / std::max(1, w - 1);
  const double sy = 2.0 / std::max(1, h - 1);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double x = pts[i].second * sx - 1.0;
    const double y = pts[i].first * sy - 1.0;
    double px = 1.0;
    for (int a = 0; a < 4; ++a, px *= x) {
      double py = 1.0;
      for (int b = 0; b < 4; ++b, py *= y) design(i, a * 4 + b) = px * py;
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  return static_cast<int>(qr.rank());
}

// Coefficient-space 4th-difference penalty along one axis of an
// (ny x nx) coefficient grid, accumulated as D^T D.
void add_difference_penalty(std::vector<Eigen::Triplet<double>>& trip, int nx, int ny, bool along_x,
                            double weight) {
  static constexpr double d4[5] = {1.0, -4.0, 6.0, -4.0, 1.0};
  const int n_along = along_x ? nx : ny;
  const int n_across = along_x ? ny : nx;
  if (n_along < 5) return;
  auto index = [&](int along, int across) {
    return along_x ? across * nx + along : along * nx + across;
  };
  for (int across = 0; across < n_across; ++across) {
    for (int s = 0; s + 4 < n_along; ++s) {
      for (int a = 0; a < 5; ++a) {
        for (int b = 0; b < 5; ++b) {
          trip.emplace_back(index(s + a, across), index(s + b, across), weight * d4[a] * d4[b]);
        }
      }
    }
  }
}

}  // namespace

FieldPlane spline_interp(const FieldPlane& input, const Mask& mask, const SplineConfig& config) {
  require_shapes(input, mask, "spline_interp");
  if (config.knot_spacing < 1 || !(config.smoothing > 0.0)) {
    throw SpecError("spline_interp: knot spacing and smoothing must be positive");
  }
  FieldPlane out = input;
  if (mask.missing_count() == 0) return out;
  const int h = input.height();
  const int w = input.width();

  std::vector<std::pair<int, int>> pts;
  pts.reserve(mask.given_count());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask.missing(r, c)) pts.emplace_back(r, c);
    }
  }
  if (pts.size() < 16 || bicubic_rank(pts, h, w) < 16) {
    throw ConditioningError("spline_interp: given pixels do not determine a bicubic surface");
  }

  const SplineAxis ax(w, config.knot_spacing);
  const SplineAxis ay(h, config.knot_spacing);
  const int nx = ax.count;
  const int ny = ay.count;
  const int ncoef = nx * ny;

  // Normal equations B^T B + lambda P, assembled from 16-entry rows.
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(pts.size() * 256 + static_cast<std::size_t>(ncoef) * 50);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(ncoef, kComponents);
  double wx[4], wy[4];
  for (const auto& [r, c] : pts) {
    const int ix = ax.eval(c, wx);
    const int iy = ay.eval(r, wy);
    int idx[16];
    double val[16];
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        idx[a * 4 + b] = (iy + a) * nx + ix + b;
        val[a * 4 + b] = wy[a] * wx[b];
      }
    }
    for (int p = 0; p < 16; ++p) {
      for (int q = 0; q < 16; ++q) trip.emplace_back(idx[p], idx[q], val[p] * val[q]);
      for (int k = 0; k < kComponents; ++k) rhs(idx[p], k) += val[p] * input.at(k, r, c);
    }
  }
  add_difference_penalty(trip, nx, ny, true, config.smoothing);
  add_difference_penalty(trip, nx, ny, false, config.smoothing);
  Eigen::SparseMatrix<double> normal(ncoef, ncoef);
  normal.setFromTriplets(trip.begin(), trip.end());

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(normal);
  if (solver.info() != Eigen::Success) {
    throw ConditioningError("spline_interp: normal equations are singular");
  }
  const Eigen::MatrixXd coef = solver.solve(rhs);
  if (solver.info() != Eigen::Success || !coef.allFinite()) {
    throw ConditioningError("spline_interp: normal-equation solve failed");
  }

  for (int r = 0; r < h; ++r) {
    const int iy = ay.eval(r, wy);
    for (int c = 0; c < w; ++c) {
      if (!mask.missing(r, c)) continue;
      const int ix = ax.eval(c, wx);
      for (int k = 0; k < kComponents; ++k) {
        double s = 0.0;
        for (int a = 0; a < 4; ++a) {
          for (int b = 0; b < 4; ++b) s += wy[a] * wx[b] * coef((iy + a) * nx + ix + b, k);
        }
        out.at(k, r, c) = s;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- biharmonic

FieldPlane biharmonic_inpaint(const FieldPlane& input, const Mask& mask) {
  require_shapes(input, mask, "biharmonic_inpaint");
  FieldPlane out = input;
  const std::size_t n = mask.missing_count();
  if (n == 0) return out;
  if (mask.given_count() == 0) throw ContractError("biharmonic_inpaint: no given pixels");
  const int h = input.height();
  const int w = input.width();

  std::vector<int> unknown(mask.pixels(), -1);
  std::vector<std::pair<int, int>> cells;
  cells.reserve(n);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (mask.missing(r, c)) {
        unknown[r * w + c] = static_cast<int>(cells.size());
        cells.emplace_back(r, c);
      }
    }
  }

  // Discrete thin-plate energy sum (u_xx)^2 + 2 (u_xy)^2 + (u_yy)^2 over
  // every place the difference fits. Its stationarity condition on a
  // missing pixel two or more pixels from the edge is the 13-point
  // biharmonic stencil; near the edge it gives the natural boundary
  // conditions, so regions touching the edge stay well posed.
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(n * 12);
  std::vector<double> known_part;
  known_part.reserve(n * 3 * kComponents);
  int terms = 0;
  auto term = [&](std::initializer_list<std::tuple<int, int, double>> taps, double weight) {
    bool touches = false;
    for (const auto& [r, c, coef] : taps) touches |= unknown[r * w + c] >= 0;
    if (!touches) return;
    const double sw = std::sqrt(weight);
    double known[kComponents] = {0.0, 0.0, 0.0};
    for (const auto& [r, c, coef] : taps) {
      const int u = unknown[r * w + c];
      if (u >= 0) {
        trip.emplace_back(terms, u, sw * coef);
      } else {
        for (int k = 0; k < kComponents; ++k) known[k] += sw * coef * input.at(k, r, c);
      }
    }
    known_part.insert(known_part.end(), known, known + kComponents);
    ++terms;
  };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (c >= 1 && c <= w - 2) term({{r, c - 1, 1.0}, {r, c, -2.0}, {r, c + 1, 1.0}}, 1.0);
      if (r >= 1 && r <= h - 2) term({{r - 1, c, 1.0}, {r, c, -2.0}, {r + 1, c, 1.0}}, 1.0);
      if (r + 1 < h && c + 1 < w) {
        term({{r, c, 1.0}, {r, c + 1, -1.0}, {r + 1, c, -1.0}, {r + 1, c + 1, 1.0}}, 2.0);
      }
    }
  }
  Eigen::SparseMatrix<double> d(terms, static_cast<Eigen::Index>(n));
  d.setFromTriplets(trip.begin(), trip.end());
  Eigen::MatrixXd b(terms, kComponents);
  for (int i = 0; i < terms; ++i) {
    for (int k = 0; k < kComponents; ++k) b(i, k) = -known_part[static_cast<std::size_t>(i) * kComponents + k];
  }
  const Eigen::SparseMatrix<double> a = Eigen::SparseMatrix<double>(d.transpose()) * d;
  const Eigen::MatrixXd rhs = d.transpose() * b;

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
  if (ldlt.info() != Eigen::Success) {
    throw ConditioningError("biharmonic_inpaint: factorization failed");
  }
  const Eigen::VectorXd diag = ldlt.vectorD();
  if (!(diag.minCoeff() > 1e-12 * diag.maxCoeff())) {
    throw ConditioningError("biharmonic_inpaint: given pixels do not determine the fill");
  }
  const Eigen::MatrixXd x = ldlt.solve(rhs);
  const double bnorm = rhs.norm();
  const double res = (a * x - rhs).norm() / (bnorm > 0.0 ? bnorm : 1.0);
  if (!(res < 1e-10)) {
    throw NumericalError("biharmonic_inpaint: residual above 1e-10", res);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < kComponents; ++k) out.at(k, cells[i].first, cells[i].second) = x(i, k);
  }
  return out;
}

// ---------------------------------------------------------------- gp

void GPConfig::validate() const {
  if (!(lengthscale > 0.0)) throw SpecError("GP lengthscale must be positive");
  if (!(signal_variance > 0.0)) throw SpecError("GP signal variance must be positive");
  if (!(noise_jitter > 0.0)) throw SpecError("GP jitter must be positive");
}

namespace {

std::vector<double> rbf_table(double lengthscale, int extent) {
  std::vector<double> t(extent + 1);
  for (int d = 0; d <= extent; ++d) t[d] = std::exp(-0.5 * d * d / (lengthscale * lengthscale));
  return t;
}

int coordinate_extent(const std::vector<GaussianProcess::Point>& a,
                      const std::vector<GaussianProcess::Point>& b) {
  int m = 0;
  for (const auto* v : {&a, &b}) {
    for (const auto& p : *v) m = std::max({m, std::abs(p.row), std::abs(p.col)});
  }
  return 2 * m + 1;
}

}  // namespace

GaussianProcess::GaussianProcess(std::vector<Point> points,
                                 const std::vector<std::vector<double>>& values,
                                 const GPConfig& config)
    : points_(std::move(points)), config_(config) {
  config_.validate();
  const auto n = static_cast<Eigen::Index>(points_.size());
  if (n == 0) throw ContractError("GaussianProcess: no training points");
  for (const auto& v : values) {
    if (static_cast<Eigen::Index>(v.size()) != n) {
      throw DimensionError("GaussianProcess: value count differs from point count");
    }
  }
  const auto table = rbf_table(config_.lengthscale, coordinate_extent(points_, points_));
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      k(i, j) = config_.signal_variance * table[std::abs(points_[i].row - points_[j].row)] *
                table[std::abs(points_[i].col - points_[j].col)];
    }
  }

  const Eigen::Index channels = static_cast<Eigen::Index>(values.size());
  Eigen::MatrixXd y(n, channels);
  scale_.assign(values.size(), 1.0);
  for (Eigen::Index ch = 0; ch < channels; ++ch) {
    double ss = 0.0;
    for (double v : values[ch]) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(n));
    if (rms > 0.0 && std::isfinite(rms)) scale_[ch] = rms;
    for (Eigen::Index i = 0; i < n; ++i) y(i, ch) = values[ch][i] / scale_[ch];
  }

  jitter_ = config_.noise_jitter;
  Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt;
  for (int attempt = 0;; ++attempt) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter_;
    llt.compute(kj);
    if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().allFinite() &&
        (llt.matrixLLT().diagonal().array() > 0.0).all()) {
      break;
    }
    if (attempt == 3) {
      throw ConditioningError("GaussianProcess: Cholesky failed after jitter escalation to " +
                              std::to_string(jitter_));
    }
    jitter_ *= 10.0;
  }
  const Eigen::MatrixXd alpha = llt.solve(y);
  alpha_.assign(values.size(), std::vector<double>(n));
  for (Eigen::Index ch = 0; ch < channels; ++ch) {
    for (Eigen::Index i = 0; i < n; ++i) alpha_[ch][i] = alpha(i, ch);
  }
}

std::vector<std::vector<double>> GaussianProcess::mean(const std::vector<Point>& queries) const {
  const auto table = rbf_table(config_.lengthscale, coordinate_extent(points_, queries));
  const auto n = static_cast<Eigen::Index>(points_.size());
  const auto channels = static_cast<Eigen::Index>(alpha_.size());
  Eigen::MatrixXd alpha(n, channels);
  for (Eigen::Index ch = 0; ch < channels; ++ch) {
    for (Eigen::Index i = 0; i < n; ++i) alpha(i, ch) = alpha_[ch][i] * scale_[ch];
  }
  std::vector<std::vector<double>> out(alpha_.size(), std::vector<double>(queries.size()));
  constexpr Eigen::Index kChunk = 512;
  Eigen::MatrixXd ks;
  for (std::size_t q0 = 0; q0 < queries.size(); q0 += kChunk) {
    const auto m = static_cast<Eigen::Index>(std::min<std::size_t>(kChunk, queries.size() - q0));
    ks.resize(m, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index q = 0; q < m; ++q) {
        const Point& p = queries[q0 + q];
        ks(q, i) = table[std::abs(p.row - points_[i].row)] * table[std::abs(p.col - points_[i].col)];
      }
    }
    const Eigen::MatrixXd mu = config_.signal_variance * (ks * alpha);
    for (Eigen::Index ch = 0; ch < channels; ++ch) {
      for (Eigen::Index q = 0; q < m; ++q) out[ch][q0 + q] = mu(q, ch);
    }
  }
  return out;
}

FieldPlane gp_predict(const FieldPlane& input, const Mask& mask, const GPConfig& config) {
  require_shapes(input, mask, "gp_predict");
  config.validate();
  FieldPlane out = input;
  if (mask.missing_count() == 0) return out;
  if (mask.given_count() == 0) throw ContractError("gp_predict: no given pixels");
  if (mask.given_count() > kGpWarnPoints) {
    std::cerr << "warning: gp_predict with " << mask.given_count()
              << " given pixels; the O(n^3) solve will be slow\n";
  }
  std::vector<GaussianProcess::Point> given, missing;
  for (int r = 0; r < input.height(); ++r) {
    for (int c = 0; c < input.width(); ++c) {
      (mask.missing(r, c) ? missing : given).push_back({r, c});
    }
  }
  std::vector<std::vector<double>> values(kComponents, std::vector<double>(given.size()));
  for (int k = 0; k < kComponents; ++k) {
    for (std::size_t i = 0; i < given.size(); ++i) values[k][i] = input.at(k, given[i].row, given[i].col);
  }
  const GaussianProcess gp(std::move(given), values, config);
  const auto mu = gp.mean(missing);
  for (int k = 0; k < kComponents; ++k) {
    for (std::size_t i = 0; i < missing.size(); ++i) out.at(k, missing[i].row, missing[i].col) = mu[k][i];
  }
  return out;
}

}  // namespace magfield
