#pragma once

#include <optional>
#include <span>
#include <vector>

#include "detbench/geometry.hpp"

namespace detbench {

struct GroundtruthInstance {
  Box box;
  int category = 0;
  double area = 0.0;  // box area unless the source provides its own
};

struct DetectionInstance {
  Box box;
  int category = 0;
  double score = 0.0;
};

struct EvalConfig {
  // 0.5 : 0.05 : 0.95
  std::vector<double> iou_thresholds = {0.5,  0.55, 0.6,  0.65, 0.7,
                                        0.75, 0.8,  0.85, 0.9,  0.95};
  double area_small_max = 32.0 * 32.0;   // small:  area <  this
  double area_medium_max = 96.0 * 96.0;  // medium: area in [small, this)
  int max_detections_per_image = 100;
};

// Object-size strata scaled so that an image of the given side length uses
// bands proportional to the 32^2 / 96^2 split at a 256-pixel reference side.
EvalConfig eval_config_for_image_size(int image_size);

struct EvalResult {
  double map = 0.0;
  double map50 = 0.0;
  double map75 = 0.0;
  double map_small = 0.0;
  double map_medium = 0.0;
  double map_large = 0.0;
  double map50_small = 0.0;
  double map50_medium = 0.0;
  double map50_large = 0.0;
  double ar100 = 0.0;
  double ar_small = 0.0;
  double ar_medium = 0.0;
  double ar_large = 0.0;
  std::vector<int> categories;
  std::vector<double> per_category_ap;  // averaged over thresholds; -1 if undefined
};

// Greedy matching for a single image and class: detections must arrive in
// score order; each is matched to the highest-overlap still-unmatched
// groundtruth at or above the threshold (ties toward the lowest groundtruth
// index), true positive on success, false positive otherwise.
std::vector<char> greedy_match_detections(std::span<const Box> dets_by_score,
                                          std::span<const Box> gts,
                                          double iou_threshold);

// 101-point interpolated average precision from true/false-positive flags in
// score order. With zero groundtruth the metric is undefined (nullopt) and is
// excluded from any mean.
std::optional<double> average_precision(std::span<const char> tp_flags,
                                        int num_gt);

// Full evaluation: per (class, threshold) average precision pooled over
// images, averaged over defined classes and then thresholds; size strata use
// the groundtruth-area bands with out-of-band instances ignored rather than
// penalized; recall uses at most max_detections_per_image detections.
// Undefined aggregate metrics are reported as 0.
EvalResult evaluate(const std::vector<std::vector<GroundtruthInstance>>& gts,
                    const std::vector<std::vector<DetectionInstance>>& dets,
                    const std::vector<int>& categories,
                    const EvalConfig& cfg = {});

}  // namespace detbench
