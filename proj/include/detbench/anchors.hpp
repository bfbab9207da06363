#pragma once

#include <utility>
#include <vector>

#include "detbench/geometry.hpp"

namespace detbench {

// A regular grid of anchors tiled over a feature map. Anchors are ordered
// row-major over (row, col), then by scale, then by aspect ratio. The anchor
// at cell (i, j) is centered at ((i + 0.5) * stride, (j + 0.5) * stride) in
// (y, x); anchors are not clipped to the image.
struct AnchorGrid {
  int fm_height = 0;
  int fm_width = 0;
  double stride_px = 0.0;
  double base_px = 0.0;
  std::vector<double> scales;
  std::vector<double> aspect_ratios;
  std::vector<Anchor> anchors;

  int anchors_per_location() const {
    return static_cast<int>(scales.size() * aspect_ratios.size());
  }
};

// Anchor at (scale s, ratio r) has width base*s*sqrt(r) and height
// base*s/sqrt(r), so area is base^2 s^2 regardless of ratio.
// Throws std::invalid_argument on empty scales or ratios.
AnchorGrid generate_grid(int fm_height, int fm_width, double stride_px,
                         double base_px, const std::vector<double>& scales,
                         const std::vector<double>& aspect_ratios);

// One grid per pyramid layer for the single-shot arrangement; resolutions
// must be strictly decreasing. Layer l uses stride image_size / fm_height[l]
// and base size base_sizes_px[l]; ratios are shared across layers. The
// concatenated anchor ordering is layer-major.
std::vector<AnchorGrid> ssd_anchor_pyramid(
    double image_h, double image_w,
    const std::vector<std::pair<int, int>>& resolutions,
    const std::vector<double>& base_sizes_px,
    const std::vector<double>& aspect_ratios);

std::vector<Anchor> flatten_anchors(const std::vector<AnchorGrid>& grids);

}  // namespace detbench
