#include "magfield/magnetsim_kernels.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <tuple>

#if defined(__AVX512F__)
#include <immintrin.h>
extern "C" __m512d _ZGVeN8v_atan(__m512d);
extern "C" __m512d _ZGVeN8v_log(__m512d);
#endif

namespace magfield::sim {

namespace {

constexpr double kInvFourPi = 1.0 / (4.0 * std::numbers::pi);

struct CornerTerms {
  double axx, ayy, azz;  // arctangent (diagonal) terms
  double lu, lv, lw;     // ln(u + R), ln(v + R), ln(w + R)
  bool singular;         // a log term hit the axis of an edge line
};

/// ln(t + R) with R = sqrt(t^2 + a); for t < 0 uses ln(a / (R - t)) to avoid
/// cancellation.
inline double log_plus_r(double t, double a, double r) {
  return t >= 0.0 ? std::log(t + r) : std::log(a / (r - t));
}

inline CornerTerms corner_terms(double u, double v, double w) {
  const double u2 = u * u, v2 = v * v, w2 = w * w;
  const double r = std::sqrt(u2 + v2 + w2);
  CornerTerms t;
  t.axx = u != 0.0 ? std::atan(v * w / (u * r)) : 0.0;
  t.ayy = v != 0.0 ? std::atan(u * w / (v * r)) : 0.0;
  t.azz = w != 0.0 ? std::atan(u * v / (w * r)) : 0.0;
  t.singular = (u < 0.0 && v2 + w2 == 0.0) || (v < 0.0 && u2 + w2 == 0.0) ||
               (w < 0.0 && u2 + v2 == 0.0);
  t.lu = log_plus_r(u, v2 + w2, r);
  t.lv = log_plus_r(v, u2 + w2, r);
  t.lw = log_plus_r(w, u2 + v2, r);
  return t;
}

Vec3 corner_field_scalar(const CornerSet& cs, Vec3 p, bool& singular) {
  double bx = 0.0, by = 0.0, bz = 0.0;
  singular = false;
  for (std::size_t c = 0; c < cs.size(); ++c) {
    const auto t = corner_terms(p.x - cs.x[c], p.y - cs.y[c], p.z - cs.z[c]);
    singular |= t.singular;
    const double mx = cs.mx[c], my = cs.my[c], mz = cs.mz[c];
    bx += t.axx * mx - t.lw * my - t.lv * mz;
    by += -t.lw * mx + t.ayy * my - t.lu * mz;
    bz += -t.lv * mx - t.lu * my + t.azz * mz;
  }
  return {kInvFourPi * bx, kInvFourPi * by, kInvFourPi * bz};
}

#if defined(__AVX512F__)

/// Corner arrays padded to a multiple of 8 with far-away, zero-weight entries.
struct PaddedCorners {
  std::vector<double> x, y, z, mx, my, mz;
  explicit PaddedCorners(const CornerSet& cs) : x(cs.x), y(cs.y), z(cs.z), mx(cs.mx), my(cs.my), mz(cs.mz) {
    while (x.size() % 8 != 0) {
      x.push_back(1.0e3);
      y.push_back(1.0e3);
      z.push_back(1.0e3);
      mx.push_back(0.0);
      my.push_back(0.0);
      mz.push_back(0.0);
    }
  }
};

inline __m512d log_plus_r8(__m512d t, __m512d a, __m512d r) {
  const __mmask8 neg = _mm512_cmp_pd_mask(t, _mm512_setzero_pd(), _CMP_LT_OQ);
  const __m512d pos_arg = _mm512_add_pd(t, r);
  const __m512d neg_arg = _mm512_div_pd(a, _mm512_sub_pd(r, t));
  return _ZGVeN8v_log(_mm512_mask_blend_pd(neg, pos_arg, neg_arg));
}

inline __m512d atan_term8(__m512d num, __m512d den) {
  const __mmask8 nz = _mm512_cmp_pd_mask(den, _mm512_setzero_pd(), _CMP_NEQ_OQ);
  const __m512d val = _ZGVeN8v_atan(_mm512_div_pd(num, den));
  return _mm512_maskz_mov_pd(nz, val);
}

Vec3 corner_field_simd(const PaddedCorners& pc, Vec3 p, bool& singular) {
  const __m512d px = _mm512_set1_pd(p.x), py = _mm512_set1_pd(p.y), pz = _mm512_set1_pd(p.z);
  const __m512d zero = _mm512_setzero_pd();
  __m512d bx = zero, by = zero, bz = zero;
  __mmask8 sing = 0;
  for (std::size_t c = 0; c < pc.x.size(); c += 8) {
    const __m512d u = _mm512_sub_pd(px, _mm512_loadu_pd(&pc.x[c]));
    const __m512d v = _mm512_sub_pd(py, _mm512_loadu_pd(&pc.y[c]));
    const __m512d w = _mm512_sub_pd(pz, _mm512_loadu_pd(&pc.z[c]));
    const __m512d u2 = _mm512_mul_pd(u, u), v2 = _mm512_mul_pd(v, v), w2 = _mm512_mul_pd(w, w);
    const __m512d vw2 = _mm512_add_pd(v2, w2), uw2 = _mm512_add_pd(u2, w2),
                  uv2 = _mm512_add_pd(u2, v2);
    const __m512d r = _mm512_sqrt_pd(_mm512_add_pd(uv2, w2));

    const __m512d axx = atan_term8(_mm512_mul_pd(v, w), _mm512_mul_pd(u, r));
    const __m512d ayy = atan_term8(_mm512_mul_pd(u, w), _mm512_mul_pd(v, r));
    const __m512d azz = atan_term8(_mm512_mul_pd(u, v), _mm512_mul_pd(w, r));
    const __m512d lu = log_plus_r8(u, vw2, r);
    const __m512d lv = log_plus_r8(v, uw2, r);
    const __m512d lw = log_plus_r8(w, uv2, r);

    sing |= _mm512_cmp_pd_mask(u, zero, _CMP_LT_OQ) & _mm512_cmp_pd_mask(vw2, zero, _CMP_EQ_OQ);
    sing |= _mm512_cmp_pd_mask(v, zero, _CMP_LT_OQ) & _mm512_cmp_pd_mask(uw2, zero, _CMP_EQ_OQ);
    sing |= _mm512_cmp_pd_mask(w, zero, _CMP_LT_OQ) & _mm512_cmp_pd_mask(uv2, zero, _CMP_EQ_OQ);

    const __m512d mx = _mm512_loadu_pd(&pc.mx[c]);
    const __m512d my = _mm512_loadu_pd(&pc.my[c]);
    const __m512d mz = _mm512_loadu_pd(&pc.mz[c]);
    bx = _mm512_fmadd_pd(axx, mx, bx);
    bx = _mm512_fnmadd_pd(lw, my, bx);
    bx = _mm512_fnmadd_pd(lv, mz, bx);
    by = _mm512_fnmadd_pd(lw, mx, by);
    by = _mm512_fmadd_pd(ayy, my, by);
    by = _mm512_fnmadd_pd(lu, mz, by);
    bz = _mm512_fnmadd_pd(lv, mx, bz);
    bz = _mm512_fnmadd_pd(lu, my, bz);
    bz = _mm512_fmadd_pd(azz, mz, bz);
  }
  singular = sing != 0;
  return {kInvFourPi * _mm512_reduce_add_pd(bx), kInvFourPi * _mm512_reduce_add_pd(by),
          kInvFourPi * _mm512_reduce_add_pd(bz)};
}

#endif

}  // namespace

CornerSet aggregate_corners(std::span<const PrismMagnet> magnets) {
  std::map<std::tuple<double, double, double>, Vec3> acc;
  for (const auto& m : magnets) {
    const double xs[2] = {m.center.x - m.half_sides.x, m.center.x + m.half_sides.x};
    const double ys[2] = {m.center.y - m.half_sides.y, m.center.y + m.half_sides.y};
    const double zs[2] = {m.center.z - m.half_sides.z, m.center.z + m.half_sides.z};
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        for (int k = 0; k < 2; ++k) {
          const double sign = ((i + j + k) % 2 == 0) ? -1.0 : 1.0;
          auto& w = acc[{xs[i], ys[j], zs[k]}];
          w = w + sign * m.magnetization;
        }
      }
    }
  }
  CornerSet cs;
  for (const auto& [pos, w] : acc) {
    if (w.x == 0.0 && w.y == 0.0 && w.z == 0.0) continue;
    cs.x.push_back(std::get<0>(pos));
    cs.y.push_back(std::get<1>(pos));
    cs.z.push_back(std::get<2>(pos));
    cs.mx.push_back(w.x);
    cs.my.push_back(w.y);
    cs.mz.push_back(w.z);
  }
  return cs;
}

Vec3 superposition_field(std::span<const PrismMagnet> magnets, Vec3 point) {
  Vec3 b{};
  for (const auto& m : magnets) b = b + prism_field(m, point);
  return b;
}

void render_points_reference(std::span<const PrismMagnet> magnets, std::span<const Vec3> points,
                             std::span<Vec3> out) {
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = superposition_field(magnets, points[i]);
}

void render_points_serial(std::span<const PrismMagnet> magnets, const CornerSet& corners,
                          std::span<const Vec3> points, std::span<Vec3> out) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool singular = false;
    out[i] = corner_field_scalar(corners, points[i], singular);
    if (singular) out[i] = superposition_field(magnets, points[i]);
  }
}

void render_points_parallel(std::span<const PrismMagnet> magnets, const CornerSet& corners,
                            std::span<const Vec3> points, std::span<Vec3> out) {
#if defined(__AVX512F__)
  const PaddedCorners padded(corners);
#endif
  const auto n = static_cast<std::ptrdiff_t>(points.size());
  std::vector<char> singular(points.size(), 0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    bool s = false;
#if defined(__AVX512F__)
    out[i] = corner_field_simd(padded, points[i], s);
#else
    out[i] = corner_field_scalar(corners, points[i], s);
#endif
    singular[i] = s ? 1 : 0;
  }
  // Points on the axis of a corner line need the pairwise-stable per-prism form.
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (singular[i]) out[i] = superposition_field(magnets, points[i]);
  }
}

}  // namespace magfield::sim
