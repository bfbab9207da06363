#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "detbench/data.hpp"
#include "detbench/model.hpp"

namespace detbench {

struct TrainConfig {
  int steps = 500;
  double learning_rate = 0.2;
  double momentum = 0.9;
  // Sampled anchors per stage; a batch at least as large as the eligible
  // anchor set selects all of it.
  int rpn_batch = 256;
  double rpn_positive_fraction = 0.5;
  int stage2_batch = 64;
  double stage2_positive_fraction = 0.25;
  int ssd_batch = 64;
  double ssd_positive_fraction = 0.25;
  std::uint64_t seed = 1;
};

struct TrainResult {
  WeightStore weights;
  std::vector<double> loss_trace;  // one entry per step
};

// Loss and parameter gradients for one scene. Only predictor-layer tensors
// appear in the gradient map; matching, sampling, and (for two-stage models)
// proposal selection are derived deterministically from step_seed and the
// current weights.
struct StepGradients {
  double loss = 0.0;
  std::map<std::string, TensorData> grads;
};

StepGradients compute_gradients(const Detector& detector,
                                const WeightStore& weights, const Scene& scene,
                                const TrainConfig& tcfg, std::uint64_t step_seed);

// SGD with momentum on the predictor heads only; feature-extractor weights
// stay at initialization. Deterministic under (detector.weight_seed,
// tcfg.seed). Throws std::runtime_error if the loss exceeds ten times its
// initial value.
TrainResult train_head(const DetectorConfig& cfg, const TrainConfig& tcfg,
                       const std::vector<Scene>& dataset);

// CSV loss trace: header "step,loss", one row per step.
void write_loss_trace(const std::vector<double>& trace, const std::string& path);

}  // namespace detbench
