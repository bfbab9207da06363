#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "detbench/anchors.hpp"
#include "detbench/geometry.hpp"
#include "detbench/loss.hpp"
#include "detbench/tensor.hpp"

namespace detbench {

enum class LayerKind { Conv, DepthwiseConv, PointwiseConv, MaxPool, Predictor };
enum class PaddingMode { Same, Valid };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int kernel_h = 3;
  int kernel_w = 3;
  int in_channels = 1;
  int out_channels = 1;
  int stride = 1;
  PaddingMode padding = PaddingMode::Same;
};

// Kernel layouts: Conv/Predictor [out][kh][kw][in], DepthwiseConv [kh][kw][c],
// PointwiseConv [out][in]. Only Predictor layers carry a bias.
struct TensorData {
  std::vector<int> shape;
  std::vector<double> values;
};

// Named weights; the ordered map keeps serialization deterministic.
using WeightStore = std::map<std::string, TensorData>;

// Output spatial size for the layer given an input size.
std::pair<int, int> layer_output_shape(const LayerSpec& layer, int in_h, int in_w);

// Multiply-add count for one forward application. MaxPool counts zero.
std::int64_t layer_flops(const LayerSpec& layer, int in_h, int in_w);

// Kernel (plus bias for predictors) element count.
std::int64_t layer_param_count(const LayerSpec& layer);

// Cross-correlation (or pooling) with the layer's stride and padding.
// Same padding matches the ceil(in/stride) output convention with the
// surplus split evenly, extra on the bottom/right.
Tensor conv_forward(const Tensor& input, const LayerSpec& layer,
                    const TensorData& kernel, const TensorData* bias = nullptr);

// Gradient of a scalar objective with respect to the layer's kernel and bias,
// given the gradient at the layer output. Supports Conv/Predictor and
// PointwiseConv layers (the trainable kinds).
void conv_weight_gradient(const Tensor& input, const LayerSpec& layer,
                          const Tensor& d_output, TensorData& d_kernel,
                          TensorData& d_bias);

// Bilinear resampling of the (normalized-coordinate) box onto an out_h x out_w
// grid. Sampling is corner aligned: sample t/(out-1) across the box span, a
// single-sample axis reads the box midpoint. A degenerate box replicates the
// value at the collapsed coordinate.
Tensor crop_and_resize(const Tensor& feature_map, const Box& normalized_box,
                       int out_h, int out_w);

// Adjoint of crop_and_resize: scatters d_output back onto a feature-map
// gradient of the given shape.
void crop_and_resize_backward(const Box& normalized_box, const Tensor& d_output,
                              Tensor& d_feature_map);

// Position-sensitive pooling: the box splits into k x k bins, bin (i, j) is
// average-pooled (samples_per_bin^2 bilinear taps) from channel group
// (i*k + j), and the k^2 votes are averaged into one value per group channel.
// Requires channels divisible by k^2.
std::vector<double> position_sensitive_pool(const Tensor& score_maps,
                                            const Box& normalized_box, int k,
                                            int samples_per_bin = 3);

// Adjoint of position_sensitive_pool.
void position_sensitive_pool_backward(const Box& normalized_box,
                                      std::span<const double> d_pooled, int k,
                                      int samples_per_bin, Tensor& d_score_maps);

enum class MetaArchitecture { SSD, FasterRCNN, RFCN };
enum class ExtractorKind { DenseTiny, SeparableTiny };

struct DetectorConfig {
  MetaArchitecture meta_arch = MetaArchitecture::SSD;
  ExtractorKind extractor = ExtractorKind::DenseTiny;
  int input_size = 64;    // images are square, input_size x input_size
  int output_stride = 16; // 8 or 16
  int num_proposals = 100; // two-stage only; ignored by SSD
  int num_classes = 3;
  BoxEncodingScheme box_encoding = BoxEncodingScheme::ScaledResidual;
  int crop_size = 7;  // second-stage crop resolution (FasterRCNN)
  int ps_bins = 3;    // k for position-sensitive pooling (RFCN)
  int ps_samples_per_bin = 3;

  std::vector<double> aspect_ratios = {0.5, 1.0, 2.0};
  std::vector<double> rpn_scales = {1.0, 2.0, 3.5};
  double rpn_base_fraction = 0.25;  // rpn anchor base = fraction * input_size
  std::vector<double> ssd_base_fractions = {0.2, 0.45, 0.7};
  double rpn_nms_iou = 0.7;

  MatcherConfig rpn_matcher{MatchStrategy::Argmax, 0.7, 0.3, true};
  MatcherConfig head_matcher{MatchStrategy::Argmax, 0.5, 0.5, true};
  MatcherConfig stage2_matcher{MatchStrategy::Argmax, 0.5, 0.5, false};
  LossConfig loss{1.0, 1.0, LocationLossKind::SmoothL1, 3};

  std::uint64_t weight_seed = 1;
};

// Throws std::invalid_argument when a field violates its contract.
void validate_config(const DetectorConfig& cfg);

std::string to_string(MetaArchitecture m);
std::string to_string(ExtractorKind e);
std::string to_string(BoxEncodingScheme s);

// Per-layer cost row. Per-proposal entries record the cost of a single
// proposal; report totals scale them by the proposal count.
struct LayerCost {
  std::string name;
  std::int64_t flops = 0;
  std::int64_t params = 0;
  std::int64_t activation_bytes = 0;
  bool per_proposal = false;
};

struct CostReport {
  std::vector<LayerCost> layers;
  int num_proposals = 0;
  std::int64_t fixed_flops = 0;
  std::int64_t per_proposal_flops = 0;  // cost of one proposal
  std::int64_t total_flops = 0;         // fixed + N * per_proposal
  std::int64_t params = 0;
  std::int64_t memory_bytes = 0;  // all activations plus parameters
};

// Analytic cost accounting without executing the network.
CostReport cost_model(const DetectorConfig& cfg);

// Per-anchor (or per-proposal) raw outputs before postprocessing: a decoded
// box and the softmax class distribution including background at index 0.
struct RawDetections {
  std::vector<Box> boxes;
  std::vector<std::vector<double>> class_probs;
};

struct DetectionOutput {
  RawDetections raw;
  CostReport cost;
};

// Intermediate state exposed for head training.
struct SsdForward {
  std::vector<Tensor> level_inputs;  // predictor input per pyramid level
  std::vector<int> level_anchor_offsets;
  std::vector<Anchor> anchors;
  Predictions predictions;
};

struct TwoStageForward {
  Tensor backbone;               // crop source and RPN input
  Tensor rpn_hidden;             // input to the RPN predictor convs
  std::vector<Anchor> rpn_anchors;
  Predictions rpn_predictions;   // 4 + 2 logits per anchor
  std::vector<Box> proposals;    // decoded, clipped, NMS'd, top N
  std::vector<double> proposal_scores;
  // FasterRCNN second stage: pooled feature vector per proposal.
  std::vector<std::vector<double>> stage2_inputs;
  // RFCN: position-sensitive score maps (class and box regression).
  Tensor ps_class_maps;
  Tensor ps_box_maps;
  Predictions stage2_predictions;  // 4 + (K+1) logits per proposal
};

class Detector {
 public:
  explicit Detector(const DetectorConfig& cfg);

  const DetectorConfig& config() const { return cfg_; }

  // Truncated-normal initialization; predictor layers use sigma 0.03,
  // fixed feature layers use a fan-in-scaled sigma (see init_sigma).
  WeightStore init_weights(std::uint64_t seed) const;

  // Full inference pass. The image must be input_size x input_size x 3.
  DetectionOutput run(const Tensor& image, const WeightStore& weights) const;

  CostReport cost() const { return cost_model(cfg_); }

  // Training-facing passes that retain intermediates.
  SsdForward ssd_forward(const Tensor& image, const WeightStore& weights) const;
  TwoStageForward two_stage_forward(const Tensor& image,
                                    const WeightStore& weights) const;

  // Names of the trainable (predictor) kernel/bias tensors.
  std::vector<std::string> trainable_tensor_names() const;

  const std::vector<Anchor>& anchors() const { return anchors_; }
  int anchors_per_location() const;

 private:
  DetectorConfig cfg_;
  std::vector<Anchor> anchors_;  // SSD pyramid anchors or RPN grid anchors
  std::vector<std::pair<int, int>> ssd_resolutions_;
};

// Convenience wrapper matching the one-shot call shape.
DetectionOutput run_detector(const DetectorConfig& cfg, const Tensor& image,
                             const WeightStore& weights);

}  // namespace detbench
