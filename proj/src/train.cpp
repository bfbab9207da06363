#include "detbench/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>

#include "detbench/loss.hpp"
#include "detbench/matching.hpp"
#include "detbench/rng.hpp"

namespace detbench {

namespace {

std::vector<Box> gt_boxes_of(const Scene& scene) {
  std::vector<Box> boxes;
  boxes.reserve(scene.gts.size());
  for (const auto& g : scene.gts) boxes.push_back(g.box);
  return boxes;
}

std::vector<int> gt_classes_of(const Scene& scene) {
  std::vector<int> classes;
  classes.reserve(scene.gts.size());
  for (const auto& g : scene.gts) classes.push_back(g.category);
  return classes;
}

std::vector<std::optional<BoxTarget>> encode_targets(
    const MatchResult& match, std::span<const Anchor> anchors,
    std::span<const Box> gt_boxes, BoxEncodingScheme scheme, double m) {
  std::vector<std::optional<BoxTarget>> targets(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const MatchEntry& e = match.entries[i];
    if (e.kind != MatchKind::Positive) continue;
    targets[i] = encode_box(gt_boxes[e.gt_index], anchors[i], scheme, m, m).values;
  }
  return targets;
}

void add_tensor(std::map<std::string, TensorData>& grads, const std::string& name,
                TensorData&& value) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, std::move(value));
    return;
  }
  for (std::size_t i = 0; i < value.values.size(); ++i) {
    it->second.values[i] += value.values[i];
  }
}

// Scatters per-anchor gradients into the predictor output maps of one feature
// level, then accumulates the corresponding kernel/bias gradients.
void ssd_level_gradients(const Tensor& level_input, const Predictions& grad,
                         int anchor_offset, int per_loc, int k1,
                         const std::string& prefix,
                         std::map<std::string, TensorData>& grads) {
  const auto [oh, ow] = std::pair<int, int>{level_input.height, level_input.width};
  Tensor d_cls(oh, ow, per_loc * k1);
  Tensor d_box(oh, ow, per_loc * 4);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      for (int a = 0; a < per_loc; ++a) {
        const int idx = anchor_offset + (y * ow + x) * per_loc + a;
        const AnchorPrediction& g = grad[idx];
        for (int c = 0; c < k1; ++c) d_cls.at(y, x, a * k1 + c) = g.class_logits[c];
        for (int d = 0; d < 4; ++d) d_box.at(y, x, a * 4 + d) = g.loc[d];
      }
    }
  }
  const LayerSpec cls_spec{LayerKind::Predictor, 3, 3, level_input.channels,
                           per_loc * k1, 1, PaddingMode::Same};
  const LayerSpec box_spec{LayerKind::Predictor, 3, 3, level_input.channels,
                           per_loc * 4, 1, PaddingMode::Same};
  TensorData dk, db;
  conv_weight_gradient(level_input, cls_spec, d_cls, dk, db);
  add_tensor(grads, prefix + "/cls/kernel", std::move(dk));
  add_tensor(grads, prefix + "/cls/bias", std::move(db));
  conv_weight_gradient(level_input, box_spec, d_box, dk, db);
  add_tensor(grads, prefix + "/box/kernel", std::move(dk));
  add_tensor(grads, prefix + "/box/bias", std::move(db));
}

StepGradients ssd_gradients(const Detector& det, const WeightStore& weights,
                            const Scene& scene, const TrainConfig& tcfg,
                            std::uint64_t step_seed) {
  const DetectorConfig& cfg = det.config();
  const double m = cfg.input_size;
  const int k1 = cfg.num_classes + 1;
  const int per_loc = det.anchors_per_location();

  const SsdForward fwd = det.ssd_forward(scene.image, weights);
  const std::vector<Box> boxes = gt_boxes_of(scene);
  const std::vector<int> classes = gt_classes_of(scene);
  const MatchResult matched =
      match(fwd.anchors, boxes, classes, cfg.head_matcher);
  const auto targets =
      encode_targets(matched, fwd.anchors, boxes, cfg.box_encoding, m);
  const std::vector<int> sampled =
      sample_minibatch(matched, tcfg.ssd_batch, tcfg.ssd_positive_fraction,
                       Rng::mix(step_seed, 0));

  StepGradients out;
  if (sampled.empty()) return out;
  LossConfig lcfg = cfg.loss;
  lcfg.num_classes = cfg.num_classes;
  out.loss = total_loss(matched, fwd.predictions, targets, sampled, lcfg);
  const Predictions grad =
      loss_gradient(matched, fwd.predictions, targets, sampled, lcfg);

  for (std::size_t l = 0; l < fwd.level_inputs.size(); ++l) {
    ssd_level_gradients(fwd.level_inputs[l], grad, fwd.level_anchor_offsets[l],
                        per_loc, k1, "ssd/l" + std::to_string(l), out.grads);
  }
  return out;
}

StepGradients two_stage_gradients(const Detector& det, const WeightStore& weights,
                                  const Scene& scene, const TrainConfig& tcfg,
                                  std::uint64_t step_seed) {
  const DetectorConfig& cfg = det.config();
  const double m = cfg.input_size;
  const int k1 = cfg.num_classes + 1;
  const int per_loc = det.anchors_per_location();

  const TwoStageForward fwd = det.two_stage_forward(scene.image, weights);
  const std::vector<Box> boxes = gt_boxes_of(scene);
  const std::vector<int> classes = gt_classes_of(scene);

  StepGradients out;

  // Region proposal stage: class-agnostic objectness.
  {
    const std::vector<int> agnostic(classes.size(), 1);
    const MatchResult matched =
        match(fwd.rpn_anchors, boxes, agnostic, cfg.rpn_matcher);
    const auto targets =
        encode_targets(matched, fwd.rpn_anchors, boxes, cfg.box_encoding, m);
    const std::vector<int> sampled =
        sample_minibatch(matched, tcfg.rpn_batch, tcfg.rpn_positive_fraction,
                         Rng::mix(step_seed, 1));
    if (!sampled.empty()) {
      LossConfig lcfg = cfg.loss;
      lcfg.num_classes = 1;
      out.loss += total_loss(matched, fwd.rpn_predictions, targets, sampled, lcfg);
      const Predictions grad =
          loss_gradient(matched, fwd.rpn_predictions, targets, sampled, lcfg);

      const Tensor& hidden = fwd.rpn_hidden;
      Tensor d_cls(hidden.height, hidden.width, per_loc * 2);
      Tensor d_box(hidden.height, hidden.width, per_loc * 4);
      for (int y = 0; y < hidden.height; ++y) {
        for (int x = 0; x < hidden.width; ++x) {
          for (int a = 0; a < per_loc; ++a) {
            const int idx = (y * hidden.width + x) * per_loc + a;
            const AnchorPrediction& g = grad[idx];
            d_cls.at(y, x, a * 2) = g.class_logits[0];
            d_cls.at(y, x, a * 2 + 1) = g.class_logits[1];
            for (int d = 0; d < 4; ++d) d_box.at(y, x, a * 4 + d) = g.loc[d];
          }
        }
      }
      const LayerSpec cls_spec{LayerKind::Predictor, 1, 1, hidden.channels,
                               per_loc * 2, 1, PaddingMode::Same};
      const LayerSpec box_spec{LayerKind::Predictor, 1, 1, hidden.channels,
                               per_loc * 4, 1, PaddingMode::Same};
      TensorData dk, db;
      conv_weight_gradient(hidden, cls_spec, d_cls, dk, db);
      add_tensor(out.grads, "rpn/cls/kernel", std::move(dk));
      add_tensor(out.grads, "rpn/cls/bias", std::move(db));
      conv_weight_gradient(hidden, box_spec, d_box, dk, db);
      add_tensor(out.grads, "rpn/box/kernel", std::move(dk));
      add_tensor(out.grads, "rpn/box/bias", std::move(db));
    }
  }

  // Box classifier stage over the proposals.
  if (!fwd.proposals.empty()) {
    std::vector<Anchor> prop_anchors;
    prop_anchors.reserve(fwd.proposals.size());
    for (const Box& p : fwd.proposals) prop_anchors.push_back(Anchor(p));

    const MatchResult matched =
        match(prop_anchors, boxes, classes, cfg.stage2_matcher);
    const auto targets =
        encode_targets(matched, prop_anchors, boxes, cfg.box_encoding, m);
    const std::vector<int> sampled = sample_minibatch(
        matched, tcfg.stage2_batch, tcfg.stage2_positive_fraction,
        Rng::mix(step_seed, 2));
    if (!sampled.empty()) {
      LossConfig lcfg = cfg.loss;
      lcfg.num_classes = cfg.num_classes;
      out.loss +=
          total_loss(matched, fwd.stage2_predictions, targets, sampled, lcfg);
      const Predictions grad = loss_gradient(matched, fwd.stage2_predictions,
                                             targets, sampled, lcfg);

      if (cfg.meta_arch == MetaArchitecture::FasterRCNN) {
        const int c_in = static_cast<int>(fwd.stage2_inputs[0].size());
        const LayerSpec cls_spec{LayerKind::Predictor, 1, 1, c_in, k1, 1,
                                 PaddingMode::Same};
        const LayerSpec box_spec{LayerKind::Predictor, 1, 1, c_in, 4, 1,
                                 PaddingMode::Same};
        for (std::size_t p = 0; p < fwd.proposals.size(); ++p) {
          const AnchorPrediction& g = grad[p];
          bool nonzero = false;
          for (double v : g.class_logits) nonzero |= v != 0.0;
          for (double v : g.loc) nonzero |= v != 0.0;
          if (!nonzero) continue;
          Tensor input(1, 1, c_in);
          input.data = fwd.stage2_inputs[p];
          Tensor d_cls(1, 1, k1), d_box(1, 1, 4);
          d_cls.data.assign(g.class_logits.begin(), g.class_logits.end());
          d_box.data.assign(g.loc.begin(), g.loc.end());
          TensorData dk, db;
          conv_weight_gradient(input, cls_spec, d_cls, dk, db);
          add_tensor(out.grads, "stage2/cls/kernel", std::move(dk));
          add_tensor(out.grads, "stage2/cls/bias", std::move(db));
          conv_weight_gradient(input, box_spec, d_box, dk, db);
          add_tensor(out.grads, "stage2/box/kernel", std::move(dk));
          add_tensor(out.grads, "stage2/box/bias", std::move(db));
        }
      } else {
        // Pooling is linear in the score maps, so gradients scatter back
        // through the bilinear taps and then into the 1x1 predictor kernels.
        Tensor d_cls_maps(fwd.ps_class_maps.height, fwd.ps_class_maps.width,
                          fwd.ps_class_maps.channels);
        Tensor d_box_maps(fwd.ps_box_maps.height, fwd.ps_box_maps.width,
                          fwd.ps_box_maps.channels);
        for (std::size_t p = 0; p < fwd.proposals.size(); ++p) {
          const AnchorPrediction& g = grad[p];
          const Box nb{fwd.proposals[p].ymin / m, fwd.proposals[p].xmin / m,
                       fwd.proposals[p].ymax / m, fwd.proposals[p].xmax / m};
          position_sensitive_pool_backward(nb, g.class_logits, cfg.ps_bins,
                                           cfg.ps_samples_per_bin, d_cls_maps);
          position_sensitive_pool_backward(
              nb, std::span<const double>(g.loc.data(), 4), cfg.ps_bins,
              cfg.ps_samples_per_bin, d_box_maps);
        }
        const int k2 = cfg.ps_bins * cfg.ps_bins;
        const LayerSpec cls_spec{LayerKind::Predictor, 1, 1,
                                 fwd.backbone.channels, k2 * k1, 1,
                                 PaddingMode::Same};
        const LayerSpec box_spec{LayerKind::Predictor, 1, 1,
                                 fwd.backbone.channels, k2 * 4, 1,
                                 PaddingMode::Same};
        TensorData dk, db;
        conv_weight_gradient(fwd.backbone, cls_spec, d_cls_maps, dk, db);
        add_tensor(out.grads, "rfcn/ps_cls/kernel", std::move(dk));
        add_tensor(out.grads, "rfcn/ps_cls/bias", std::move(db));
        conv_weight_gradient(fwd.backbone, box_spec, d_box_maps, dk, db);
        add_tensor(out.grads, "rfcn/ps_box/kernel", std::move(dk));
        add_tensor(out.grads, "rfcn/ps_box/bias", std::move(db));
      }
    }
  }
  return out;
}

}  // namespace

StepGradients compute_gradients(const Detector& detector,
                                const WeightStore& weights, const Scene& scene,
                                const TrainConfig& tcfg, std::uint64_t step_seed) {
  if (detector.config().meta_arch == MetaArchitecture::SSD) {
    return ssd_gradients(detector, weights, scene, tcfg, step_seed);
  }
  return two_stage_gradients(detector, weights, scene, tcfg, step_seed);
}

TrainResult train_head(const DetectorConfig& cfg, const TrainConfig& tcfg,
                       const std::vector<Scene>& dataset) {
  if (dataset.empty()) {
    throw std::invalid_argument("train_head: empty dataset");
  }
  if (tcfg.steps <= 0 || tcfg.learning_rate < 0.0) {
    throw std::invalid_argument("train_head: steps must be positive, rate >= 0");
  }

  const Detector detector(cfg);
  TrainResult result;
  result.weights = detector.init_weights(cfg.weight_seed);
  std::map<std::string, std::vector<double>> velocity;

  double initial_loss = -1.0;
  for (int step = 0; step < tcfg.steps; ++step) {
    const std::uint64_t step_seed = Rng::mix(tcfg.seed, step);
    Rng pick(Rng::mix(step_seed, 0x5CE9E));
    const int img =
        static_cast<int>(pick.uniform_int(0, static_cast<int>(dataset.size()) - 1));

    const StepGradients sg =
        compute_gradients(detector, result.weights, dataset[img], tcfg, step_seed);
    result.loss_trace.push_back(sg.loss);
    if (initial_loss < 0.0) initial_loss = sg.loss;
    if (sg.loss > 10.0 * initial_loss) {
      throw std::runtime_error("train_head: loss diverged");
    }

    for (const auto& [name, grad] : sg.grads) {
      auto wit = result.weights.find(name);
      if (wit == result.weights.end()) {
        throw std::runtime_error("train_head: gradient for unknown tensor " + name);
      }
      auto& vel = velocity[name];
      if (vel.empty()) vel.assign(grad.values.size(), 0.0);
      for (std::size_t i = 0; i < grad.values.size(); ++i) {
        vel[i] = tcfg.momentum * vel[i] - tcfg.learning_rate * grad.values[i];
        wit->second.values[i] += vel[i];
      }
    }
  }
  return result;
}

void write_loss_trace(const std::vector<double>& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_loss_trace: cannot open " + path);
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", i, trace[i]);
    out << buf;
  }
}

}  // namespace detbench
