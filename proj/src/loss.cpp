#include "detbench/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace detbench {

namespace {

void check_config(const LossConfig& cfg) {
  if (cfg.alpha < 0.0 || cfg.beta < 0.0 || cfg.alpha + cfg.beta <= 0.0) {
    throw std::invalid_argument("loss: weights must be nonnegative, not both 0");
  }
  if (cfg.num_classes < 1) {
    throw std::invalid_argument("loss: num_classes must be >= 1");
  }
}

double smooth_l1_derivative(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0.0 ? 1.0 : -1.0;
}

}  // namespace

double smooth_l1(double x) {
  const double ax = std::abs(x);
  if (ax < 1.0) return 0.5 * x * x;
  return ax - 0.5;
}

double location_loss_value(LocationLossKind kind, const BoxTarget& residual) {
  double sum = 0.0;
  switch (kind) {
    case LocationLossKind::SmoothL1:
      for (double r : residual) sum += smooth_l1(r);
      break;
    case LocationLossKind::L2:
      for (double r : residual) sum += 0.5 * r * r;
      break;
  }
  return sum;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

double classification_loss(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw std::invalid_argument("classification_loss: label out of range");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  return std::log(z) + m - logits[label];
}

double anchor_loss(const MatchEntry& entry, const AnchorPrediction& pred,
                   const std::optional<BoxTarget>& target, const LossConfig& cfg) {
  check_config(cfg);
  if (entry.kind == MatchKind::Ignored) return 0.0;
  if (static_cast<int>(pred.class_logits.size()) != cfg.num_classes + 1) {
    throw std::invalid_argument("anchor_loss: logit count != num_classes + 1");
  }

  double loss = cfg.beta * classification_loss(pred.class_logits, entry.class_label);
  if (entry.kind == MatchKind::Positive) {
    if (!target.has_value()) {
      throw std::invalid_argument("anchor_loss: positive anchor without target");
    }
    BoxTarget residual;
    for (int i = 0; i < 4; ++i) residual[i] = (*target)[i] - pred.loc[i];
    loss += cfg.alpha * location_loss_value(cfg.location_loss, residual);
  }
  return loss;
}

double total_loss(const MatchResult& match, const Predictions& preds,
                  std::span<const std::optional<BoxTarget>> targets,
                  std::span<const int> sampled, const LossConfig& cfg) {
  if (sampled.empty()) {
    throw std::invalid_argument("total_loss: empty sample");
  }
  if (match.entries.size() != preds.size() || targets.size() != preds.size()) {
    throw std::invalid_argument("total_loss: size mismatch");
  }
  double sum = 0.0;
  for (int idx : sampled) {
    sum += anchor_loss(match.entries[idx], preds[idx], targets[idx], cfg);
  }
  return sum / static_cast<double>(sampled.size());
}

Predictions loss_gradient(const MatchResult& match, const Predictions& preds,
                          std::span<const std::optional<BoxTarget>> targets,
                          std::span<const int> sampled, const LossConfig& cfg) {
  check_config(cfg);
  if (sampled.empty()) {
    throw std::invalid_argument("loss_gradient: empty sample");
  }
  Predictions grad(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    grad[i].class_logits.assign(preds[i].class_logits.size(), 0.0);
  }

  const double inv_n = 1.0 / static_cast<double>(sampled.size());
  for (int idx : sampled) {
    const MatchEntry& entry = match.entries[idx];
    if (entry.kind == MatchKind::Ignored) continue;
    const AnchorPrediction& pred = preds[idx];

    // d/dlogits of cross entropy is softmax - onehot.
    std::vector<double> p = softmax(pred.class_logits);
    for (std::size_t c = 0; c < p.size(); ++c) {
      double g = p[c];
      if (static_cast<int>(c) == entry.class_label) g -= 1.0;
      grad[idx].class_logits[c] += cfg.beta * inv_n * g;
    }

    if (entry.kind == MatchKind::Positive) {
      if (!targets[idx].has_value()) {
        throw std::invalid_argument("loss_gradient: positive anchor without target");
      }
      for (int i = 0; i < 4; ++i) {
        const double r = (*targets[idx])[i] - pred.loc[i];
        double dr = 0.0;
        switch (cfg.location_loss) {
          case LocationLossKind::SmoothL1:
            dr = smooth_l1_derivative(r);
            break;
          case LocationLossKind::L2:
            dr = r;
            break;
        }
        // residual = target - prediction, so the prediction picks up -d/dr.
        grad[idx].loc[i] += -cfg.alpha * inv_n * dr;
      }
    }
  }
  return grad;
}

}  // namespace detbench
