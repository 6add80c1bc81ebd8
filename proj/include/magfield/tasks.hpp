#pragma once

#include <vector>

#include "magfield/field.hpp"
#include "magfield/rng.hpp"

namespace magfield {

enum class TaskKind { inpaint, outpaint };

struct TaskSpec {
  TaskKind kind = TaskKind::inpaint;
  int side_px = 48;         ///< inpaint square side before jitter
  double jitter_frac = 0.25;
  int n_regions = 20;       ///< outpaint given regions
  int region_side_px = 16;  ///< outpaint region side
  int s_pad = 8;            ///< local-patch padding around outpaint regions
  int inpaint_pad = 4;      ///< local-patch growth around the inpaint square

  /// Throws SpecError when the spec cannot produce a mask on an H x W grid.
  void validate(int height, int width) const;
};

struct PixelRect {
  int row0 = 0;
  int col0 = 0;
  int height = 0;
  int width = 0;
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

using LocalPatchSet = std::vector<PixelRect>;

/// One missing square, side jittered by u in [1-j, 1+j] and rounded (minimum 4).
Mask inpaint_mask(Rng& rng, const TaskSpec& spec, int height, int width);
/// All missing except n_regions disjoint given squares.
Mask outpaint_mask(Rng& rng, const TaskSpec& spec, int height, int width);
Mask make_mask(Rng& rng, const TaskSpec& spec, int height, int width);

/// B_in = B * (1 - m).
FieldPlane make_input(const FieldPlane& field, const Mask& mask);

/// input on given pixels, generated on missing pixels.
FieldPlane compose_result(const FieldPlane& input, const FieldPlane& generated, const Mask& mask);

/// Inpaint: the missing bounding box grown by inpaint_pad. Outpaint: each
/// given square grown by s_pad. Rectangles are clipped to the grid.
LocalPatchSet local_patches(const Mask& mask, const TaskSpec& spec);

}  // namespace magfield
