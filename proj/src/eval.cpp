#include "detbench/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace detbench {

EvalConfig eval_config_for_image_size(int image_size) {
  EvalConfig cfg;
  const double scale = static_cast<double>(image_size) / 256.0;
  cfg.area_small_max = (32.0 * scale) * (32.0 * scale);
  cfg.area_medium_max = (96.0 * scale) * (96.0 * scale);
  return cfg;
}

std::vector<char> greedy_match_detections(std::span<const Box> dets_by_score,
                                          std::span<const Box> gts,
                                          double iou_threshold) {
  std::vector<char> flags(dets_by_score.size(), 0);
  std::vector<char> gt_matched(gts.size(), 0);
  for (std::size_t d = 0; d < dets_by_score.size(); ++d) {
    double best = -1.0;
    int best_g = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_matched[g]) continue;
      const double ov = iou(dets_by_score[d], gts[g]);
      if (ov >= iou_threshold && ov > best) {
        best = ov;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      gt_matched[best_g] = 1;
      flags[d] = 1;
    }
  }
  return flags;
}

std::optional<double> average_precision(std::span<const char> tp_flags,
                                        int num_gt) {
  if (num_gt == 0) return std::nullopt;
  const std::size_t n = tp_flags.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp_flags[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  // Monotone envelope from the right.
  for (std::size_t i = n; i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double sum = 0.0;
  for (int j = 0; j <= 100; ++j) {
    const double r = static_cast<double>(j) / 100.0;
    // First prefix reaching recall r; zero precision past the curve end.
    double p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (recall[i] >= r - 1e-12) {
        p = precision[i];
        break;
      }
    }
    sum += p;
  }
  return sum / 101.0;
}

namespace {

// Per-detection outcome under one (threshold, area range) setting.
enum class DetFlag : char { FalsePositive = 0, TruePositive = 1, Ignored = 2 };

struct ImageClassData {
  std::vector<int> det_order;        // indices into the image's class dets, by score
  std::vector<double> det_scores;    // aligned with det_order
  std::vector<double> det_areas;     // aligned with det_order
  std::vector<double> gt_areas;
  std::vector<std::vector<double>> ious;  // [det][gt]
};

struct RangeBand {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  bool contains(double area) const { return area >= lo && area < hi; }
};

// COCO-style greedy matching with ignored groundtruth: detections prefer
// non-ignored groundtruth; a match to an ignored one marks the detection
// ignored instead of true positive, and unmatched detections whose own area
// falls outside the band are ignored as well.
std::vector<DetFlag> match_with_ignore(const ImageClassData& img,
                                       const std::vector<char>& gt_ignore,
                                       double threshold, const RangeBand& band) {
  const std::size_t nd = img.det_order.size();
  const std::size_t ng = img.gt_areas.size();

  // Non-ignored groundtruth first, stable within each group.
  std::vector<int> gt_order(ng);
  std::iota(gt_order.begin(), gt_order.end(), 0);
  std::stable_sort(gt_order.begin(), gt_order.end(),
                   [&gt_ignore](int a, int b) {
                     return gt_ignore[a] < gt_ignore[b];
                   });

  std::vector<char> gt_matched(ng, 0);
  std::vector<DetFlag> flags(nd, DetFlag::FalsePositive);
  for (std::size_t d = 0; d < nd; ++d) {
    double best = -1.0;
    int best_g = -1;
    for (int g : gt_order) {
      if (gt_matched[g]) continue;
      // Once a real match exists, ignored groundtruth cannot displace it.
      if (best_g >= 0 && !gt_ignore[best_g] && gt_ignore[g]) break;
      const double ov = img.ious[img.det_order[d]][g];
      if (ov >= threshold && ov > best) {
        best = ov;
        best_g = g;
      }
    }
    if (best_g >= 0) {
      gt_matched[best_g] = 1;
      flags[d] = gt_ignore[best_g] ? DetFlag::Ignored : DetFlag::TruePositive;
    } else if (!band.contains(img.det_areas[d])) {
      flags[d] = DetFlag::Ignored;
    }
  }
  return flags;
}

}  // namespace

EvalResult evaluate(const std::vector<std::vector<GroundtruthInstance>>& gts,
                    const std::vector<std::vector<DetectionInstance>>& dets,
                    const std::vector<int>& categories, const EvalConfig& cfg) {
  if (categories.empty()) {
    throw std::invalid_argument("evaluate: no categories");
  }
  if (gts.size() != dets.size()) {
    throw std::invalid_argument("evaluate: image count mismatch");
  }
  std::map<int, int> cat_index;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (!cat_index.emplace(categories[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("evaluate: duplicate category id");
    }
  }
  for (const auto& img : gts) {
    for (const auto& g : img) {
      if (!cat_index.count(g.category)) {
        throw std::invalid_argument("evaluate: unknown groundtruth category");
      }
    }
  }
  for (const auto& img : dets) {
    for (const auto& d : img) {
      if (!cat_index.count(d.category)) {
        throw std::invalid_argument("evaluate: unknown detection category");
      }
    }
  }

  const std::size_t num_images = gts.size();
  const std::size_t num_cats = categories.size();
  const std::size_t num_thr = cfg.iou_thresholds.size();
  const double inf = std::numeric_limits<double>::infinity();
  const RangeBand bands[4] = {
      {0.0, inf},
      {0.0, cfg.area_small_max},
      {cfg.area_small_max, cfg.area_medium_max},
      {cfg.area_medium_max, inf},
  };
  constexpr int kNumBands = 4;

  // ap[cat][band][thr], recall likewise; -1 marks undefined (no groundtruth).
  std::vector ap(num_cats, std::vector(kNumBands, std::vector(num_thr, -1.0)));
  auto recall = ap;

  for (std::size_t ci = 0; ci < num_cats; ++ci) {
    const int cat = categories[ci];

    // Gather per-image class slices with capped, score-sorted detections.
    std::vector<ImageClassData> images(num_images);
    std::vector<std::vector<const GroundtruthInstance*>> class_gts(num_images);
    bool any = false;
    for (std::size_t im = 0; im < num_images; ++im) {
      ImageClassData& slot = images[im];
      std::vector<const DetectionInstance*> class_dets;
      for (const auto& d : dets[im]) {
        if (d.category == cat) class_dets.push_back(&d);
      }
      for (const auto& g : gts[im]) {
        if (g.category == cat) class_gts[im].push_back(&g);
      }
      if (!class_dets.empty() || !class_gts[im].empty()) any = true;

      std::vector<int> order(class_dets.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&class_dets](int a, int b) {
        return class_dets[a]->score > class_dets[b]->score;
      });
      if (static_cast<int>(order.size()) > cfg.max_detections_per_image) {
        order.resize(cfg.max_detections_per_image);
      }
      slot.det_order.resize(order.size());
      std::iota(slot.det_order.begin(), slot.det_order.end(), 0);
      slot.det_scores.reserve(order.size());
      slot.det_areas.reserve(order.size());
      slot.ious.resize(order.size());
      for (std::size_t d = 0; d < order.size(); ++d) {
        const DetectionInstance* det = class_dets[order[d]];
        slot.det_scores.push_back(det->score);
        slot.det_areas.push_back(det->box.area());
        slot.ious[d].resize(class_gts[im].size());
        for (std::size_t g = 0; g < class_gts[im].size(); ++g) {
          slot.ious[d][g] = iou(det->box, class_gts[im][g]->box);
        }
      }
      slot.gt_areas.reserve(class_gts[im].size());
      for (const auto* g : class_gts[im]) slot.gt_areas.push_back(g->area);
    }
    if (!any) continue;

    // Global detection ordering for pooling flags across images.
    struct GlobalDet {
      double score;
      int image;
      int pos;
    };
    std::vector<GlobalDet> global_order;
    for (std::size_t im = 0; im < num_images; ++im) {
      for (std::size_t d = 0; d < images[im].det_scores.size(); ++d) {
        global_order.push_back(GlobalDet{images[im].det_scores[d],
                                         static_cast<int>(im),
                                         static_cast<int>(d)});
      }
    }
    std::sort(global_order.begin(), global_order.end(),
              [](const GlobalDet& a, const GlobalDet& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.image != b.image) return a.image < b.image;
                return a.pos < b.pos;
              });

    for (int band = 0; band < kNumBands; ++band) {
      std::vector<std::vector<char>> gt_ignore(num_images);
      int num_gt = 0;
      for (std::size_t im = 0; im < num_images; ++im) {
        gt_ignore[im].resize(images[im].gt_areas.size());
        for (std::size_t g = 0; g < images[im].gt_areas.size(); ++g) {
          gt_ignore[im][g] = bands[band].contains(images[im].gt_areas[g]) ? 0 : 1;
          if (!gt_ignore[im][g]) ++num_gt;
        }
      }
      if (num_gt == 0) continue;  // undefined for this band, stays -1

      for (std::size_t ti = 0; ti < num_thr; ++ti) {
        std::vector<std::vector<DetFlag>> flags(num_images);
        for (std::size_t im = 0; im < num_images; ++im) {
          flags[im] = match_with_ignore(images[im], gt_ignore[im],
                                        cfg.iou_thresholds[ti], bands[band]);
        }
        std::vector<char> pooled;
        pooled.reserve(global_order.size());
        int tp_count = 0;
        for (const GlobalDet& gd : global_order) {
          const DetFlag f = flags[gd.image][gd.pos];
          if (f == DetFlag::Ignored) continue;
          pooled.push_back(f == DetFlag::TruePositive ? 1 : 0);
          if (f == DetFlag::TruePositive) ++tp_count;
        }
        ap[ci][band][ti] = average_precision(pooled, num_gt).value_or(-1.0);
        recall[ci][band][ti] =
            static_cast<double>(tp_count) / static_cast<double>(num_gt);
      }
    }
  }

  // Mean over defined classes per threshold, then over thresholds.
  auto mean_over = [&](const auto& table, int band,
                       std::optional<std::size_t> only_thr) -> double {
    double thr_sum = 0.0;
    int thr_count = 0;
    for (std::size_t ti = 0; ti < num_thr; ++ti) {
      if (only_thr && *only_thr != ti) continue;
      double cat_sum = 0.0;
      int cat_count = 0;
      for (std::size_t ci = 0; ci < num_cats; ++ci) {
        if (table[ci][band][ti] < 0.0) continue;
        cat_sum += table[ci][band][ti];
        ++cat_count;
      }
      if (cat_count > 0) {
        thr_sum += cat_sum / cat_count;
        ++thr_count;
      }
    }
    return thr_count > 0 ? thr_sum / thr_count : 0.0;
  };

  std::size_t idx50 = 0, idx75 = 0;
  for (std::size_t ti = 0; ti < num_thr; ++ti) {
    if (std::abs(cfg.iou_thresholds[ti] - 0.5) < 1e-9) idx50 = ti;
    if (std::abs(cfg.iou_thresholds[ti] - 0.75) < 1e-9) idx75 = ti;
  }

  EvalResult result;
  result.categories = categories;
  result.map = mean_over(ap, 0, std::nullopt);
  result.map50 = mean_over(ap, 0, idx50);
  result.map75 = mean_over(ap, 0, idx75);
  result.map_small = mean_over(ap, 1, std::nullopt);
  result.map_medium = mean_over(ap, 2, std::nullopt);
  result.map_large = mean_over(ap, 3, std::nullopt);
  result.map50_small = mean_over(ap, 1, idx50);
  result.map50_medium = mean_over(ap, 2, idx50);
  result.map50_large = mean_over(ap, 3, idx50);
  result.ar100 = mean_over(recall, 0, std::nullopt);
  result.ar_small = mean_over(recall, 1, std::nullopt);
  result.ar_medium = mean_over(recall, 2, std::nullopt);
  result.ar_large = mean_over(recall, 3, std::nullopt);

  result.per_category_ap.resize(num_cats, -1.0);
  for (std::size_t ci = 0; ci < num_cats; ++ci) {
    double sum = 0.0;
    int count = 0;
    for (std::size_t ti = 0; ti < num_thr; ++ti) {
      if (ap[ci][0][ti] < 0.0) continue;
      sum += ap[ci][0][ti];
      ++count;
    }
    if (count > 0) result.per_category_ap[ci] = sum / count;
  }
  return result;
}

}  // namespace detbench
