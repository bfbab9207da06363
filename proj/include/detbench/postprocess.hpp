#pragma once

#include <vector>

#include "detbench/geometry.hpp"

namespace detbench {

struct ScoredDetection {
  Box box;
  int class_id = 0;
  double score = 0.0;

  friend bool operator==(const ScoredDetection&, const ScoredDetection&) = default;
};

// Greedy suppression: sort by score descending (ties keep the lower input
// index first), keep a detection iff its overlap with every kept one is at or
// below the threshold. Output stays in that score order. Class ids are not
// consulted; callers invoke this per class.
std::vector<ScoredDetection> nms(const std::vector<ScoredDetection>& dets,
                                 double iou_threshold);

struct FinalizeConfig {
  double score_threshold = 0.05;
  double iou_threshold = 0.6;
  int max_detections = 100;
};

// Score filter, clip to the window, per-class greedy suppression, then global
// truncation to max_detections by score.
std::vector<ScoredDetection> finalize(const std::vector<ScoredDetection>& raw,
                                      const Box& window,
                                      const FinalizeConfig& cfg);

}  // namespace detbench
