#include "magfield/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "magfield/error.hpp"

namespace magfield {

namespace {

constexpr int kMinSide = 4;
constexpr int kPlacementAttempts = 10000;

int max_jittered_side(const TaskSpec& s) {
  return std::max(kMinSide, static_cast<int>(std::lround(s.side_px * (1.0 + s.jitter_frac))));
}

}  // namespace

void TaskSpec::validate(int height, int width) const {
  if (height < 3 || width < 3) throw SpecError("grid must be at least 3x3");
  if (kind == TaskKind::inpaint) {
    if (side_px < 1) throw SpecError("inpaint side must be positive");
    if (jitter_frac < 0.0 || jitter_frac >= 1.0) throw SpecError("jitter must lie in [0, 1)");
    if (max_jittered_side(*this) >= std::min(height, width)) {
      throw SpecError("inpaint square cannot fit inside the grid with a given border");
    }
  } else {
    if (n_regions < 1) throw SpecError("outpaint needs at least one given region");
    if (region_side_px < 1) throw SpecError("region side must be positive");
    if (region_side_px > std::min(height, width)) throw SpecError("region larger than the grid");
    const long long area = static_cast<long long>(n_regions) * region_side_px * region_side_px;
    if (area >= static_cast<long long>(height) * width) {
      throw SpecError("given regions cover the whole grid");
    }
  }
  if (s_pad < 0 || inpaint_pad < 0) throw SpecError("padding must be non-negative");
}

Mask inpaint_mask(Rng& rng, const TaskSpec& spec, int height, int width) {
  if (spec.kind != TaskKind::inpaint) throw SpecError("inpaint_mask needs an inpaint spec");
  spec.validate(height, width);
  const double u = uniform(rng, 1.0 - spec.jitter_frac, 1.0 + spec.jitter_frac);
  const int side = std::max(kMinSide, static_cast<int>(std::lround(spec.side_px * u)));
  const int row0 = static_cast<int>(uniform_index(rng, height - side + 1));
  const int col0 = static_cast<int>(uniform_index(rng, width - side + 1));
  Mask m(height, width, 0);
  m.fill_rect(row0, col0, side, side, true);
  return m;
}

Mask outpaint_mask(Rng& rng, const TaskSpec& spec, int height, int width) {
  if (spec.kind != TaskKind::outpaint) throw SpecError("outpaint_mask needs an outpaint spec");
  spec.validate(height, width);
  const int s = spec.region_side_px;
  Mask m(height, width, 1);
  std::vector<PixelRect> placed;
  int attempts = 0;
  while (static_cast<int>(placed.size()) < spec.n_regions) {
    if (++attempts > kPlacementAttempts) {
      throw SpecError("could not place disjoint outpaint regions");
    }
    const PixelRect r{static_cast<int>(uniform_index(rng, height - s + 1)),
                      static_cast<int>(uniform_index(rng, width - s + 1)), s, s};
    // Regions keep a one-pixel gap so each stays its own connected component.
    const bool overlaps = std::any_of(placed.begin(), placed.end(), [&](const PixelRect& q) {
      return r.row0 <= q.row0 + s && q.row0 <= r.row0 + s && r.col0 <= q.col0 + s &&
             q.col0 <= r.col0 + s;
    });
    if (overlaps) continue;
    placed.push_back(r);
    m.fill_rect(r.row0, r.col0, s, s, false);
  }
  return m;
}

Mask make_mask(Rng& rng, const TaskSpec& spec, int height, int width) {
  return spec.kind == TaskKind::inpaint ? inpaint_mask(rng, spec, height, width)
                                        : outpaint_mask(rng, spec, height, width);
}

FieldPlane make_input(const FieldPlane& field, const Mask& mask) {
  return hadamard(field, mask, Keep::given);
}

FieldPlane compose_result(const FieldPlane& input, const FieldPlane& generated, const Mask& mask) {
  if (!input.same_shape(generated) || !mask.matches(input)) {
    throw DimensionError("compose_result: shape mismatch");
  }
  FieldPlane out = input;
  const auto bits = mask.bits();
  for (int c = 0; c < kComponents; ++c) {
    auto o = out.component(c);
    const auto g = generated.component(c);
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i]) o[i] = g[i];
    }
  }
  return out;
}

namespace {

PixelRect grow_clip(PixelRect r, int pad, int height, int width) {
  const int r0 = std::max(0, r.row0 - pad);
  const int c0 = std::max(0, r.col0 - pad);
  const int r1 = std::min(height, r.row0 + r.height + pad);
  const int c1 = std::min(width, r.col0 + r.width + pad);
  return {r0, c0, r1 - r0, c1 - c0};
}

}  // namespace

LocalPatchSet local_patches(const Mask& mask, const TaskSpec& spec) {
  const int h = mask.height();
  const int w = mask.width();
  LocalPatchSet out;
  if (spec.kind == TaskKind::inpaint) {
    int r0 = h, c0 = w, r1 = -1, c1 = -1;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (!mask.missing(r, c)) continue;
        r0 = std::min(r0, r);
        c0 = std::min(c0, c);
        r1 = std::max(r1, r);
        c1 = std::max(c1, c);
      }
    }
    if (r1 < 0) throw ContractError("local_patches: mask has no missing pixels");
    out.push_back(grow_clip({r0, c0, r1 - r0 + 1, c1 - c0 + 1}, spec.inpaint_pad, h, w));
    return out;
  }
  // One patch per 4-connected component of given pixels.
  std::vector<std::uint8_t> seen(mask.pixels(), 0);
  std::vector<int> stack;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (mask.missing(r, c) || seen[r * w + c]) continue;
      int r0 = r, c0 = c, r1 = r, c1 = c;
      seen[r * w + c] = 1;
      stack.push_back(r * w + c);
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int pr = p / w;
        const int pc = p % w;
        r0 = std::min(r0, pr);
        r1 = std::max(r1, pr);
        c0 = std::min(c0, pc);
        c1 = std::max(c1, pc);
        const int nb[4][2] = {{pr - 1, pc}, {pr + 1, pc}, {pr, pc - 1}, {pr, pc + 1}};
        for (const auto& q : nb) {
          if (q[0] < 0 || q[0] >= h || q[1] < 0 || q[1] >= w) continue;
          const int qi = q[0] * w + q[1];
          if (seen[qi] || mask.missing(q[0], q[1])) continue;
          seen[qi] = 1;
          stack.push_back(qi);
        }
      }
      out.push_back(grow_clip({r0, c0, r1 - r0 + 1, c1 - c0 + 1}, spec.s_pad, h, w));
    }
  }
  if (out.empty()) throw ContractError("local_patches: mask has no given pixels");
  return out;
}

}  // namespace magfield
