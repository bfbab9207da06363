#include "detbench/postprocess.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace detbench {

std::vector<ScoredDetection> nms(const std::vector<ScoredDetection>& dets,
                                 double iou_threshold) {
  if (iou_threshold < 0.0 || iou_threshold > 1.0) {
    throw std::invalid_argument("nms: threshold must be in [0, 1]");
  }
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&dets](int a, int b) {
    return dets[a].score > dets[b].score;
  });

  std::vector<ScoredDetection> kept;
  for (int idx : order) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (iou(dets[idx].box, k.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

std::vector<ScoredDetection> finalize(const std::vector<ScoredDetection>& raw,
                                      const Box& window,
                                      const FinalizeConfig& cfg) {
  if (!window.valid()) {
    throw std::invalid_argument("finalize: invalid window");
  }
  std::map<int, std::vector<ScoredDetection>> per_class;
  for (const auto& d : raw) {
    if (d.score < cfg.score_threshold) continue;
    ScoredDetection clipped = d;
    clipped.box = clip_to_window(d.box, window);
    per_class[d.class_id].push_back(clipped);
  }

  std::vector<ScoredDetection> merged;
  for (auto& [cls, dets] : per_class) {
    auto kept = nms(dets, cfg.iou_threshold);
    merged.insert(merged.end(), kept.begin(), kept.end());
  }
  std::stable_sort(merged.begin(), merged.end(),
                   [](const ScoredDetection& a, const ScoredDetection& b) {
                     return a.score > b.score;
                   });
  if (static_cast<int>(merged.size()) > cfg.max_detections) {
    merged.resize(cfg.max_detections);
  }
  return merged;
}

}  // namespace detbench
