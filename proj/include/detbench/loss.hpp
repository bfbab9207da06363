#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "detbench/matching.hpp"

namespace detbench {

enum class LocationLossKind { SmoothL1, L2 };

struct LossConfig {
  double alpha = 1.0;  // location weight
  double beta = 1.0;   // classification weight
  LocationLossKind location_loss = LocationLossKind::SmoothL1;
  int num_classes = 1;  // K foreground classes; logits carry K+1 entries
};

// One prediction per anchor: a 4-vector box encoding and K+1 class logits
// (index 0 is background).
struct AnchorPrediction {
  std::array<double, 4> loc{};
  std::vector<double> class_logits;
};

using Predictions = std::vector<AnchorPrediction>;
using BoxTarget = std::array<double, 4>;

// Huber penalty: 0.5 x^2 inside the unit interval, |x| - 0.5 outside.
double smooth_l1(double x);

// Location penalty summed over the four encoding coordinates of the residual.
// L2 is the half squared norm so its gradient is the residual itself.
double location_loss_value(LocationLossKind kind, const BoxTarget& residual);

std::vector<double> softmax(std::span<const double> logits);

// Softmax cross entropy, -log p[label], computed through a stable
// log-sum-exp.
double classification_loss(std::span<const double> logits, int label);

// Weighted per-anchor objective: the location term applies only to positive
// anchors (target required), the classification term to positives and
// negatives. Ignored anchors contribute exactly zero.
double anchor_loss(const MatchEntry& entry, const AnchorPrediction& pred,
                   const std::optional<BoxTarget>& target, const LossConfig& cfg);

// Mean of anchor_loss over the sampled anchor indices. Throws on an empty
// sample. Summation follows the sampled index order, so results are
// bit-reproducible.
double total_loss(const MatchResult& match, const Predictions& preds,
                  std::span<const std::optional<BoxTarget>> targets,
                  std::span<const int> sampled, const LossConfig& cfg);

// Analytic d(total_loss)/d(predictions), same shape as the predictions.
// Anchors outside the sample (and ignored anchors) get exactly zero rows.
Predictions loss_gradient(const MatchResult& match, const Predictions& preds,
                          std::span<const std::optional<BoxTarget>> targets,
                          std::span<const int> sampled, const LossConfig& cfg);

}  // namespace detbench
