#include "detbench/matching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "detbench/rng.hpp"

namespace detbench {

namespace {

void check_inputs(std::span<const Box> gt_boxes, std::span<const int> gt_classes,
                  const MatcherConfig& cfg) {
  if (gt_boxes.size() != gt_classes.size()) {
    throw std::invalid_argument("matching: box/class count mismatch");
  }
  if (cfg.unmatched_threshold < 0.0 ||
      cfg.unmatched_threshold > cfg.matched_threshold ||
      cfg.matched_threshold > 1.0) {
    throw std::invalid_argument("matching: invalid thresholds");
  }
}

}  // namespace

int MatchResult::num_positive() const {
  return static_cast<int>(std::count_if(
      entries.begin(), entries.end(),
      [](const MatchEntry& e) { return e.kind == MatchKind::Positive; }));
}

int MatchResult::num_negative() const {
  return static_cast<int>(std::count_if(
      entries.begin(), entries.end(),
      [](const MatchEntry& e) { return e.kind == MatchKind::Negative; }));
}

MatchResult match_argmax(std::span<const Anchor> anchors,
                         std::span<const Box> gt_boxes,
                         std::span<const int> gt_classes,
                         const MatcherConfig& cfg) {
  check_inputs(gt_boxes, gt_classes, cfg);
  MatchResult result;
  result.entries.assign(anchors.size(), MatchEntry{});
  if (gt_boxes.empty()) return result;

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double ov = iou(anchors[a].box(), gt_boxes[g]);
      if (ov > best) {
        best = ov;
        best_gt = static_cast<int>(g);
      }
    }
    MatchEntry& e = result.entries[a];
    if (best >= cfg.matched_threshold) {
      e = MatchEntry{MatchKind::Positive, best_gt, gt_classes[best_gt]};
    } else if (best < cfg.unmatched_threshold) {
      e = MatchEntry{MatchKind::Negative, -1, 0};
    } else {
      e = MatchEntry{MatchKind::Ignored, -1, 0};
    }
  }

  if (cfg.force_match_groundtruth) {
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      double best = -1.0;
      int best_anchor = -1;
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        const double ov = iou(anchors[a].box(), gt_boxes[g]);
        if (ov > best) {
          best = ov;
          best_anchor = static_cast<int>(a);
        }
      }
      if (best_anchor >= 0) {
        result.entries[best_anchor] = MatchEntry{
            MatchKind::Positive, static_cast<int>(g), gt_classes[g]};
      }
    }
  }
  return result;
}

MatchResult match_bipartite(std::span<const Anchor> anchors,
                            std::span<const Box> gt_boxes,
                            std::span<const int> gt_classes,
                            const MatcherConfig& cfg) {
  check_inputs(gt_boxes, gt_classes, cfg);
  MatchResult result;
  result.entries.assign(anchors.size(), MatchEntry{});
  if (gt_boxes.empty() || anchors.empty()) return result;

  struct Pair {
    double ov;
    int g;
    int a;
  };
  std::vector<Pair> pairs;
  pairs.reserve(anchors.size() * gt_boxes.size());
  for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const double ov = iou(anchors[a].box(), gt_boxes[g]);
      if (ov > 0.0) {
        pairs.push_back(Pair{ov, static_cast<int>(g), static_cast<int>(a)});
      }
    }
  }
  // Descending overlap; ties resolve toward the lowest (gt, anchor) pair,
  // which makes the sorted sweep equivalent to repeated global argmax.
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    if (x.ov != y.ov) return x.ov > y.ov;
    if (x.g != y.g) return x.g < y.g;
    return x.a < y.a;
  });

  std::vector<char> gt_used(gt_boxes.size(), 0);
  std::vector<char> anchor_used(anchors.size(), 0);
  for (const Pair& p : pairs) {
    if (gt_used[p.g] || anchor_used[p.a]) continue;
    gt_used[p.g] = 1;
    anchor_used[p.a] = 1;
    result.entries[p.a] = MatchEntry{MatchKind::Positive, p.g, gt_classes[p.g]};
  }
  return result;
}

MatchResult match_box_center(std::span<const Anchor> anchors,
                             std::span<const Box> gt_boxes,
                             std::span<const int> gt_classes,
                             const MatcherConfig& cfg) {
  check_inputs(gt_boxes, gt_classes, cfg);
  MatchResult result;
  result.entries.assign(anchors.size(), MatchEntry{});

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const Box& ab = anchors[a].box();
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double cy = gt_boxes[g].center_y();
      const double cx = gt_boxes[g].center_x();
      const bool inside = cy >= ab.ymin && cy < ab.ymax && cx >= ab.xmin &&
                          cx < ab.xmax;
      if (!inside) continue;
      const double ov = iou(ab, gt_boxes[g]);
      if (ov > best) {
        best = ov;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      result.entries[a] =
          MatchEntry{MatchKind::Positive, best_gt, gt_classes[best_gt]};
    }
  }
  return result;
}

MatchResult match(std::span<const Anchor> anchors, std::span<const Box> gt_boxes,
                  std::span<const int> gt_classes, const MatcherConfig& cfg) {
  switch (cfg.strategy) {
    case MatchStrategy::Argmax:
      return match_argmax(anchors, gt_boxes, gt_classes, cfg);
    case MatchStrategy::Bipartite:
      return match_bipartite(anchors, gt_boxes, gt_classes, cfg);
    case MatchStrategy::BoxCenter:
      return match_box_center(anchors, gt_boxes, gt_classes, cfg);
  }
  throw std::invalid_argument("matching: unknown strategy");
}

std::vector<int> sample_minibatch(const MatchResult& match, int batch_size,
                                  double positive_fraction, std::uint64_t seed) {
  if (batch_size <= 0) {
    throw std::invalid_argument("sample_minibatch: batch_size must be positive");
  }
  if (positive_fraction <= 0.0 || positive_fraction >= 1.0) {
    throw std::invalid_argument(
        "sample_minibatch: positive_fraction must be in (0, 1)");
  }

  std::vector<int> positives;
  std::vector<int> negatives;
  for (std::size_t i = 0; i < match.entries.size(); ++i) {
    switch (match.entries[i].kind) {
      case MatchKind::Positive:
        positives.push_back(static_cast<int>(i));
        break;
      case MatchKind::Negative:
        negatives.push_back(static_cast<int>(i));
        break;
      case MatchKind::Ignored:
        break;
    }
  }

  const std::size_t eligible = positives.size() + negatives.size();
  std::vector<int> selected;
  if (static_cast<std::size_t>(batch_size) >= eligible) {
    selected = positives;
    selected.insert(selected.end(), negatives.begin(), negatives.end());
    std::sort(selected.begin(), selected.end());
    return selected;
  }

  Rng rng(seed);
  auto shuffle = [&rng](std::vector<int>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  };

  const int max_pos = static_cast<int>(
      std::ceil(static_cast<double>(batch_size) * positive_fraction));
  const int take_pos = std::min<int>(static_cast<int>(positives.size()), max_pos);
  shuffle(positives);
  selected.assign(positives.begin(), positives.begin() + take_pos);

  const int take_neg = std::min<int>(static_cast<int>(negatives.size()),
                                     batch_size - take_pos);
  shuffle(negatives);
  selected.insert(selected.end(), negatives.begin(), negatives.begin() + take_neg);
  std::sort(selected.begin(), selected.end());
  return selected;
}

}  // namespace detbench
