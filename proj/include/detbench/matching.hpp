#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "detbench/geometry.hpp"

namespace detbench {

enum class MatchStrategy { Argmax, Bipartite, BoxCenter };

struct MatcherConfig {
  MatchStrategy strategy = MatchStrategy::Argmax;
  // Require 0 <= unmatched_threshold <= matched_threshold <= 1. Anchors whose
  // best overlap lands strictly between the two are ignored.
  double matched_threshold = 0.5;
  double unmatched_threshold = 0.5;
  // Argmax only: guarantee each groundtruth its best anchor regardless of
  // threshold.
  bool force_match_groundtruth = false;
};

enum class MatchKind : std::uint8_t { Negative, Positive, Ignored };

struct MatchEntry {
  MatchKind kind = MatchKind::Negative;
  int gt_index = -1;    // valid iff Positive
  int class_label = 0;  // groundtruth class for positives, 0 (background) else
};

struct MatchResult {
  std::vector<MatchEntry> entries;

  int num_positive() const;
  int num_negative() const;
};

// Each anchor takes its maximum-overlap groundtruth (ties broken toward the
// lowest groundtruth index). Positive at or above matched_threshold, negative
// below unmatched_threshold, ignored in between. With force matching enabled,
// each groundtruth's best anchor (ties toward the lowest anchor index) is made
// positive for it, processed in groundtruth order so a later groundtruth wins
// a contested anchor. Empty groundtruth yields all negatives.
MatchResult match_argmax(std::span<const Anchor> anchors,
                         std::span<const Box> gt_boxes,
                         std::span<const int> gt_classes,
                         const MatcherConfig& cfg);

// Greedy one-to-one assignment: repeatedly take the globally best remaining
// (anchor, groundtruth) overlap, ties broken toward the lowest
// (groundtruth, anchor) index pair. Zero-overlap pairs never match.
MatchResult match_bipartite(std::span<const Anchor> anchors,
                            std::span<const Box> gt_boxes,
                            std::span<const int> gt_classes,
                            const MatcherConfig& cfg);

// A groundtruth matches every anchor containing its center. Containment is
// half-open ([min, max) per axis) so a center on a shared edge of adjacent
// anchors belongs to exactly one of them. When several groundtruths land in
// one anchor the higher overlap wins, ties toward the lowest index.
MatchResult match_box_center(std::span<const Anchor> anchors,
                             std::span<const Box> gt_boxes,
                             std::span<const int> gt_classes,
                             const MatcherConfig& cfg);

// Dispatch on cfg.strategy.
MatchResult match(std::span<const Anchor> anchors, std::span<const Box> gt_boxes,
                  std::span<const int> gt_classes, const MatcherConfig& cfg);

// Selects up to batch_size anchor indices with at most
// ceil(batch_size * positive_fraction) positives; any shortfall is filled with
// negatives. Ignored anchors are never selected. If batch_size covers every
// eligible anchor the whole eligible set is returned. Output is ascending and
// deterministic for a fixed seed.
std::vector<int> sample_minibatch(const MatchResult& match, int batch_size,
                                  double positive_fraction, std::uint64_t seed);

}  // namespace detbench
