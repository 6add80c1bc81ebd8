#include "magfield/physics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "magfield/error.hpp"

namespace magfield {

namespace {

void require_grid(const FieldGrid& g) {
  if (g.height() < 3 || g.width() < 3) throw ContractError("physics operators need H, W >= 3");
}

// Second-order derivative along a strided line of n >= 3 samples.
template <class Get, class Put>
void diff_line(int n, double h, Get get, Put put) {
  const double inv = 1.0 / (2.0 * h);
  put(0, (-3.0 * get(0) + 4.0 * get(1) - get(2)) * inv);
  for (int i = 1; i + 1 < n; ++i) put(i, (get(i + 1) - get(i - 1)) * inv);
  put(n - 1, (3.0 * get(n - 1) - 4.0 * get(n - 2) + get(n - 3)) * inv);
}

constexpr int kMid = static_cast<int>(Layer::measurement);

}  // namespace

ScalarPlane d_dx(const FieldGrid& g, int comp) {
  require_grid(g);
  ScalarPlane out(g.height(), g.width());
  for (int r = 0; r < g.height(); ++r) {
    diff_line(
        g.width(), g.dx(), [&](int c) { return g.at(kMid, comp, r, c); },
        [&](int c, double v) { out.at(r, c) = v; });
  }
  return out;
}

ScalarPlane d_dy(const FieldGrid& g, int comp) {
  require_grid(g);
  ScalarPlane out(g.height(), g.width());
  for (int c = 0; c < g.width(); ++c) {
    diff_line(
        g.height(), g.dy(), [&](int r) { return g.at(kMid, comp, r, c); },
        [&](int r, double v) { out.at(r, c) = v; });
  }
  return out;
}

ScalarPlane d_dz(const FieldGrid& g, int comp) {
  require_grid(g);
  ScalarPlane out(g.height(), g.width());
  const double inv = 1.0 / (2.0 * g.dz());
  for (int r = 0; r < g.height(); ++r) {
    for (int c = 0; c < g.width(); ++c) {
      out.at(r, c) = (g.at(2, comp, r, c) - g.at(0, comp, r, c)) * inv;
    }
  }
  return out;
}

ScalarPlane divergence(const FieldGrid& g, bool include_z) {
  ScalarPlane out = d_dx(g, 0);
  const ScalarPlane by = d_dy(g, 1);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += by.values[i];
  if (include_z) {
    const ScalarPlane bz = d_dz(g, 2);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += bz.values[i];
  }
  return out;
}

FieldPlane curl(const FieldGrid& g, bool include_z) {
  const ScalarPlane dbz_dy = d_dy(g, 2);
  const ScalarPlane dbz_dx = d_dx(g, 2);
  const ScalarPlane dby_dx = d_dx(g, 1);
  const ScalarPlane dbx_dy = d_dy(g, 0);
  FieldPlane out(g.height(), g.width());
  const std::size_t n = g.pixels();
  auto cx = out.component(0);
  auto cy = out.component(1);
  auto cz = out.component(2);
  for (std::size_t i = 0; i < n; ++i) {
    cx[i] = dbz_dy.values[i];
    cy[i] = -dbz_dx.values[i];
    cz[i] = dby_dx.values[i] - dbx_dy.values[i];
  }
  if (include_z) {
    const ScalarPlane dby_dz = d_dz(g, 1);
    const ScalarPlane dbx_dz = d_dz(g, 0);
    for (std::size_t i = 0; i < n; ++i) {
      cx[i] -= dby_dz.values[i];
      cy[i] += dbx_dz.values[i];
    }
  }
  return out;
}

double l_div(const FieldGrid& g, bool include_z) {
  const ScalarPlane d = divergence(g, include_z);
  double s = 0.0;
  for (double v : d.values) s += std::abs(v);
  return s / static_cast<double>(d.values.size()) * g.dx() * 1e3;
}

double l_curl(const FieldGrid& g, bool include_z) {
  const FieldPlane c = curl(g, include_z);
  double s = 0.0;
  for (double v : c.values()) s += std::abs(v);
  return s / static_cast<double>(c.pixels()) * g.dx() * 1e6;
}

double mae(const FieldPlane& pred, const FieldPlane& truth, const Mask& mask) {
  if (!pred.same_shape(truth) || !mask.matches(pred)) throw DimensionError("mae: shape mismatch");
  const std::size_t n = mask.missing_count();
  if (n == 0) throw ContractError("mae: mask has no missing pixels");
  const auto bits = mask.bits();
  double s = 0.0;
  for (int c = 0; c < kComponents; ++c) {
    const auto p = pred.component(c);
    const auto t = truth.component(c);
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i]) s += std::abs(p[i] - t[i]);
    }
  }
  return s / static_cast<double>(kComponents * n) * 1e3;
}

ReconstructionLosses reconstruction_losses(const FieldPlane& pred, const FieldPlane& input,
                                           const FieldPlane& truth, const Mask& mask) {
  if (!pred.same_shape(input) || !pred.same_shape(truth) || !mask.matches(pred)) {
    throw DimensionError("reconstruction_losses: shape mismatch");
  }
  ReconstructionLosses l;
  const auto bits = mask.bits();
  for (int c = 0; c < kComponents; ++c) {
    const auto p = pred.component(c);
    const auto x0 = input.component(c);
    const auto x = truth.component(c);
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i]) {
        l.mimic += std::abs(x[i] - p[i]);
      } else {
        l.match += std::abs(x0[i] - p[i]);
      }
    }
  }
  const std::size_t missing = mask.missing_count();
  const std::size_t given = mask.given_count();
  if (given > 0) l.match_mean = l.match / static_cast<double>(kComponents * given) * 1e3;
  if (missing > 0) l.mimic_mean = l.mimic / static_cast<double>(kComponents * missing) * 1e3;
  return l;
}

namespace {

// Squared distance transform of a sampled function along one line
// (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
            std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == inf) continue;
    if (f[v[k]] == inf) {
      v[k] = q;
      continue;
    }
    double s = 0.0;
    while (true) {
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double diff = q - v[k];
    d[q] = f[v[k]] == inf ? inf : diff * diff + f[v[k]];
  }
}

}  // namespace

std::vector<double> distance_to_given(const Mask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  if (mask.given_count() == 0) throw ContractError("distance transform needs a given pixel");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) grid[r * w + c] = mask.missing(r, c) ? inf : 0.0;
  }
  const int n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  f.resize(h);
  d.resize(h);
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) f[r] = grid[r * w + c];
    edt_1d(f, d, v, z);
    for (int r = 0; r < h; ++r) grid[r * w + c] = d[r];
  }
  f.resize(w);
  d.resize(w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[c] = grid[r * w + c];
    edt_1d(f, d, v, z);
    for (int c = 0; c < w; ++c) grid[r * w + c] = std::sqrt(d[c]);
  }
  return grid;
}

std::vector<ProfileBin> distance_profile(const FieldPlane& pred, const FieldPlane& truth,
                                         const Mask& mask) {
  if (!pred.same_shape(truth) || !mask.matches(pred)) {
    throw DimensionError("distance_profile: shape mismatch");
  }
  if (mask.missing_count() == 0) throw ContractError("distance_profile: no missing pixels");
  const auto dist = distance_to_given(mask);
  const auto bits = mask.bits();
  int max_bin = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) max_bin = std::max(max_bin, static_cast<int>(std::lround(dist[i])));
  }
  std::vector<ProfileBin> bins(max_bin);
  std::vector<double> sums(max_bin, 0.0);
  for (int b = 0; b < max_bin; ++b) bins[b].distance = b + 1;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!bits[i]) continue;
    const int b = static_cast<int>(std::lround(dist[i])) - 1;
    double e = 0.0;
    for (int c = 0; c < kComponents; ++c) e += std::abs(pred.component(c)[i] - truth.component(c)[i]);
    sums[b] += e / kComponents;
    ++bins[b].count;
  }
  for (int b = 0; b < max_bin; ++b) {
    if (bins[b].count > 0) bins[b].mae = sums[b] / static_cast<double>(bins[b].count) * 1e3;
  }
  return bins;
}

MetricReport evaluate(const FieldPlane& pred, const Sample& truth, const Mask& mask,
                      bool with_profile) {
  const FieldPlane truth_plane = truth.field.plane(kMid);
  MetricReport r;
  r.mae = mae(pred, truth_plane, mask);
  const FieldGrid composed = truth.field.with_measurement_plane(pred);
  r.z_terms = truth.has_flanking_layers;
  r.l_div = l_div(composed, r.z_terms);
  r.l_curl = l_curl(composed, r.z_terms);
  if (with_profile) r.profile = distance_profile(pred, truth_plane, mask);
  return r;
}

}  // namespace magfield
