#include "detbench/anchors.hpp"

#include <cmath>
#include <stdexcept>

namespace detbench {

AnchorGrid generate_grid(int fm_height, int fm_width, double stride_px,
                         double base_px, const std::vector<double>& scales,
                         const std::vector<double>& aspect_ratios) {
  if (fm_height <= 0 || fm_width <= 0 || stride_px <= 0.0 || base_px <= 0.0) {
    throw std::invalid_argument("generate_grid: dimensions must be positive");
  }
  if (scales.empty() || aspect_ratios.empty()) {
    throw std::invalid_argument("generate_grid: scales and ratios must be nonempty");
  }
  for (double r : aspect_ratios) {
    if (r <= 0.0) throw std::invalid_argument("generate_grid: ratios must be > 0");
  }

  AnchorGrid grid;
  grid.fm_height = fm_height;
  grid.fm_width = fm_width;
  grid.stride_px = stride_px;
  grid.base_px = base_px;
  grid.scales = scales;
  grid.aspect_ratios = aspect_ratios;
  grid.anchors.reserve(static_cast<std::size_t>(fm_height) * fm_width *
                       scales.size() * aspect_ratios.size());

  for (int i = 0; i < fm_height; ++i) {
    for (int j = 0; j < fm_width; ++j) {
      const double cy = (i + 0.5) * stride_px;
      const double cx = (j + 0.5) * stride_px;
      for (double s : scales) {
        for (double r : aspect_ratios) {
          const double w = base_px * s * std::sqrt(r);
          const double h = base_px * s / std::sqrt(r);
          grid.anchors.push_back(Anchor(Box::from_center(cy, cx, h, w)));
        }
      }
    }
  }
  return grid;
}

std::vector<AnchorGrid> ssd_anchor_pyramid(
    double image_h, double image_w,
    const std::vector<std::pair<int, int>>& resolutions,
    const std::vector<double>& base_sizes_px,
    const std::vector<double>& aspect_ratios) {
  if (resolutions.empty()) {
    throw std::invalid_argument("ssd_anchor_pyramid: no layers");
  }
  if (base_sizes_px.size() != resolutions.size()) {
    throw std::invalid_argument(
        "ssd_anchor_pyramid: one base size per layer required");
  }
  for (std::size_t l = 1; l < resolutions.size(); ++l) {
    if (resolutions[l].first >= resolutions[l - 1].first ||
        resolutions[l].second >= resolutions[l - 1].second) {
      throw std::invalid_argument(
          "ssd_anchor_pyramid: resolutions must strictly decrease");
    }
  }

  std::vector<AnchorGrid> grids;
  grids.reserve(resolutions.size());
  for (std::size_t l = 0; l < resolutions.size(); ++l) {
    const auto [fm_h, fm_w] = resolutions[l];
    // Strides derive from the image extent so every layer covers it.
    const double stride_y = image_h / fm_h;
    const double stride_x = image_w / fm_w;
    // Non-square strides are handled by generating with the y stride and
    // shifting x centers afterwards; square inputs keep this a no-op.
    AnchorGrid grid = generate_grid(fm_h, fm_w, stride_y, base_sizes_px[l],
                                    {1.0}, aspect_ratios);
    if (stride_x != stride_y) {
      std::size_t idx = 0;
      const std::size_t per_loc = aspect_ratios.size();
      for (int i = 0; i < fm_h; ++i) {
        for (int j = 0; j < fm_w; ++j) {
          const double cx = (j + 0.5) * stride_x;
          for (std::size_t a = 0; a < per_loc; ++a, ++idx) {
            const Box& old = grid.anchors[idx].box();
            const double half_w = 0.5 * (old.xmax - old.xmin);
            grid.anchors[idx] =
                Anchor(Box{old.ymin, cx - half_w, old.ymax, cx + half_w});
          }
        }
      }
    }
    grids.push_back(std::move(grid));
  }
  return grids;
}

std::vector<Anchor> flatten_anchors(const std::vector<AnchorGrid>& grids) {
  std::vector<Anchor> out;
  std::size_t total = 0;
  for (const auto& g : grids) total += g.anchors.size();
  out.reserve(total);
  for (const auto& g : grids) {
    out.insert(out.end(), g.anchors.begin(), g.anchors.end());
  }
  return out;
}

}  // namespace detbench
