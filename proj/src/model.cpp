#include "detbench/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "detbench/postprocess.hpp"
#include "detbench/rng.hpp"

namespace detbench {

namespace {

constexpr double kPredictorSigma = 0.03;

int ceil_div(int a, int b) { return (a + b - 1) / b; }

struct PadInfo {
  int out_h, out_w;
  int pad_top, pad_left;
};

PadInfo padding_for(const LayerSpec& layer, int in_h, int in_w) {
  PadInfo p{};
  if (layer.padding == PaddingMode::Same) {
    p.out_h = ceil_div(in_h, layer.stride);
    p.out_w = ceil_div(in_w, layer.stride);
    const int pad_h =
        std::max((p.out_h - 1) * layer.stride + layer.kernel_h - in_h, 0);
    const int pad_w =
        std::max((p.out_w - 1) * layer.stride + layer.kernel_w - in_w, 0);
    p.pad_top = pad_h / 2;
    p.pad_left = pad_w / 2;
  } else {
    if (in_h < layer.kernel_h || in_w < layer.kernel_w) {
      throw std::invalid_argument("valid padding: input smaller than kernel");
    }
    p.out_h = (in_h - layer.kernel_h) / layer.stride + 1;
    p.out_w = (in_w - layer.kernel_w) / layer.stride + 1;
  }
  return p;
}

int effective_kernel_h(const LayerSpec& l) {
  return l.kind == LayerKind::PointwiseConv ? 1 : l.kernel_h;
}
int effective_kernel_w(const LayerSpec& l) {
  return l.kind == LayerKind::PointwiseConv ? 1 : l.kernel_w;
}

LayerSpec normalized(const LayerSpec& layer) {
  LayerSpec l = layer;
  l.kernel_h = effective_kernel_h(layer);
  l.kernel_w = effective_kernel_w(layer);
  if (l.kind == LayerKind::DepthwiseConv || l.kind == LayerKind::MaxPool) {
    l.out_channels = l.in_channels;
  }
  return l;
}

void check_kernel_size(const LayerSpec& l, const TensorData& kernel) {
  std::size_t expect = 0;
  switch (l.kind) {
    case LayerKind::Conv:
    case LayerKind::Predictor:
      expect = static_cast<std::size_t>(l.out_channels) * l.kernel_h *
               l.kernel_w * l.in_channels;
      break;
    case LayerKind::DepthwiseConv:
      expect = static_cast<std::size_t>(l.kernel_h) * l.kernel_w * l.in_channels;
      break;
    case LayerKind::PointwiseConv:
      expect = static_cast<std::size_t>(l.out_channels) * l.in_channels;
      break;
    case LayerKind::MaxPool:
      expect = 0;
      break;
  }
  if (kernel.values.size() != expect) {
    throw std::invalid_argument("conv_forward: kernel size mismatch");
  }
}

}  // namespace

std::pair<int, int> layer_output_shape(const LayerSpec& layer, int in_h,
                                       int in_w) {
  const LayerSpec l = normalized(layer);
  const PadInfo p = padding_for(l, in_h, in_w);
  return {p.out_h, p.out_w};
}

std::int64_t layer_flops(const LayerSpec& layer, int in_h, int in_w) {
  const LayerSpec l = normalized(layer);
  const auto [oh, ow] = layer_output_shape(l, in_h, in_w);
  const std::int64_t spatial = static_cast<std::int64_t>(oh) * ow;
  switch (l.kind) {
    case LayerKind::Conv:
    case LayerKind::Predictor:
      return spatial * l.out_channels *
             (static_cast<std::int64_t>(l.kernel_h) * l.kernel_w * l.in_channels);
    case LayerKind::DepthwiseConv:
      return spatial * l.in_channels *
             (static_cast<std::int64_t>(l.kernel_h) * l.kernel_w);
    case LayerKind::PointwiseConv:
      return spatial * l.out_channels * static_cast<std::int64_t>(l.in_channels);
    case LayerKind::MaxPool:
      return 0;
  }
  return 0;
}

std::int64_t layer_param_count(const LayerSpec& layer) {
  const LayerSpec l = normalized(layer);
  switch (l.kind) {
    case LayerKind::Conv:
      return static_cast<std::int64_t>(l.out_channels) * l.kernel_h * l.kernel_w *
             l.in_channels;
    case LayerKind::Predictor:
      return static_cast<std::int64_t>(l.out_channels) * l.kernel_h * l.kernel_w *
                 l.in_channels +
             l.out_channels;
    case LayerKind::DepthwiseConv:
      return static_cast<std::int64_t>(l.kernel_h) * l.kernel_w * l.in_channels;
    case LayerKind::PointwiseConv:
      return static_cast<std::int64_t>(l.out_channels) * l.in_channels;
    case LayerKind::MaxPool:
      return 0;
  }
  return 0;
}

Tensor conv_forward(const Tensor& input, const LayerSpec& layer,
                    const TensorData& kernel, const TensorData* bias) {
  const LayerSpec l = normalized(layer);
  if (input.channels != l.in_channels) {
    throw std::invalid_argument("conv_forward: channel mismatch");
  }
  check_kernel_size(l, kernel);
  const PadInfo p = padding_for(l, input.height, input.width);
  Tensor out(p.out_h, p.out_w, l.out_channels);

  const int kh = l.kernel_h, kw = l.kernel_w;
  const int ih = input.height, iw = input.width;

  switch (l.kind) {
    case LayerKind::Conv:
    case LayerKind::Predictor: {
      for (int oy = 0; oy < p.out_h; ++oy) {
        for (int ox = 0; ox < p.out_w; ++ox) {
          for (int oc = 0; oc < l.out_channels; ++oc) {
            double acc = 0.0;
            const double* k =
                kernel.values.data() +
                static_cast<std::size_t>(oc) * kh * kw * l.in_channels;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * l.stride + ky - p.pad_top;
              if (iy < 0 || iy >= ih) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * l.stride + kx - p.pad_left;
                if (ix < 0 || ix >= iw) continue;
                const double* in_px = input.data.data() + input.index(iy, ix, 0);
                const double* k_px = k + (ky * kw + kx) * l.in_channels;
                for (int ic = 0; ic < l.in_channels; ++ic) {
                  acc += in_px[ic] * k_px[ic];
                }
              }
            }
            if (bias != nullptr && !bias->values.empty()) {
              acc += bias->values[oc];
            }
            out.at(oy, ox, oc) = acc;
          }
        }
      }
      break;
    }
    case LayerKind::DepthwiseConv: {
      for (int oy = 0; oy < p.out_h; ++oy) {
        for (int ox = 0; ox < p.out_w; ++ox) {
          for (int c = 0; c < l.in_channels; ++c) {
            double acc = 0.0;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * l.stride + ky - p.pad_top;
              if (iy < 0 || iy >= ih) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * l.stride + kx - p.pad_left;
                if (ix < 0 || ix >= iw) continue;
                acc += input.at(iy, ix, c) *
                       kernel.values[(static_cast<std::size_t>(ky) * kw + kx) *
                                         l.in_channels +
                                     c];
              }
            }
            out.at(oy, ox, c) = acc;
          }
        }
      }
      break;
    }
    case LayerKind::PointwiseConv: {
      for (int oy = 0; oy < p.out_h; ++oy) {
        for (int ox = 0; ox < p.out_w; ++ox) {
          const int iy = oy * l.stride;
          const int ix = ox * l.stride;
          for (int oc = 0; oc < l.out_channels; ++oc) {
            double acc = 0.0;
            const double* k =
                kernel.values.data() + static_cast<std::size_t>(oc) * l.in_channels;
            const double* in_px = input.data.data() + input.index(iy, ix, 0);
            for (int ic = 0; ic < l.in_channels; ++ic) acc += in_px[ic] * k[ic];
            out.at(oy, ox, oc) = acc;
          }
        }
      }
      break;
    }
    case LayerKind::MaxPool: {
      for (int oy = 0; oy < p.out_h; ++oy) {
        for (int ox = 0; ox < p.out_w; ++ox) {
          for (int c = 0; c < l.in_channels; ++c) {
            double best = -std::numeric_limits<double>::infinity();
            bool seen = false;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * l.stride + ky - p.pad_top;
              if (iy < 0 || iy >= ih) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * l.stride + kx - p.pad_left;
                if (ix < 0 || ix >= iw) continue;
                best = std::max(best, input.at(iy, ix, c));
                seen = true;
              }
            }
            out.at(oy, ox, c) = seen ? best : 0.0;
          }
        }
      }
      break;
    }
  }
  return out;
}

void conv_weight_gradient(const Tensor& input, const LayerSpec& layer,
                          const Tensor& d_output, TensorData& d_kernel,
                          TensorData& d_bias) {
  const LayerSpec l = normalized(layer);
  if (l.kind == LayerKind::DepthwiseConv || l.kind == LayerKind::MaxPool) {
    throw std::invalid_argument("conv_weight_gradient: unsupported layer kind");
  }
  const PadInfo p = padding_for(l, input.height, input.width);
  if (d_output.height != p.out_h || d_output.width != p.out_w ||
      d_output.channels != l.out_channels) {
    throw std::invalid_argument("conv_weight_gradient: output shape mismatch");
  }
  const int kh = l.kernel_h, kw = l.kernel_w;

  d_kernel.shape = {l.out_channels, kh, kw, l.in_channels};
  d_kernel.values.assign(
      static_cast<std::size_t>(l.out_channels) * kh * kw * l.in_channels, 0.0);
  d_bias.shape = {l.out_channels};
  d_bias.values.assign(l.out_channels, 0.0);

  for (int oy = 0; oy < p.out_h; ++oy) {
    for (int ox = 0; ox < p.out_w; ++ox) {
      for (int oc = 0; oc < l.out_channels; ++oc) {
        const double g = d_output.at(oy, ox, oc);
        if (g == 0.0) continue;
        d_bias.values[oc] += g;
        double* dk = d_kernel.values.data() +
                     static_cast<std::size_t>(oc) * kh * kw * l.in_channels;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * l.stride + ky - p.pad_top;
          if (iy < 0 || iy >= input.height) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * l.stride + kx - p.pad_left;
            if (ix < 0 || ix >= input.width) continue;
            const double* in_px = input.data.data() + input.index(iy, ix, 0);
            double* dk_px = dk + (ky * kw + kx) * l.in_channels;
            for (int ic = 0; ic < l.in_channels; ++ic) {
              dk_px[ic] += g * in_px[ic];
            }
          }
        }
      }
    }
  }
  if (l.kind == LayerKind::PointwiseConv) {
    d_kernel.shape = {l.out_channels, l.in_channels};
  }
}

namespace {

// Corner-aligned sample positions across [lo, hi]; a single sample sits at the
// midpoint.
double sample_coord(double lo, double hi, int i, int n) {
  if (n == 1) return 0.5 * (lo + hi);
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
}

struct BilinearTaps {
  int y0, y1, x0, x1;
  double w00, w01, w10, w11;
};

// fy, fx in feature-pixel coordinates ([0, H-1] x [0, W-1]).
BilinearTaps bilinear_taps(double fy, double fx, int h, int w) {
  fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
  fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
  BilinearTaps t{};
  t.y0 = h > 1 ? std::min(static_cast<int>(std::floor(fy)), h - 2) : 0;
  t.x0 = w > 1 ? std::min(static_cast<int>(std::floor(fx)), w - 2) : 0;
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.x1 = std::min(t.x0 + 1, w - 1);
  const double wy = fy - t.y0;
  const double wx = fx - t.x0;
  t.w00 = (1.0 - wy) * (1.0 - wx);
  t.w01 = (1.0 - wy) * wx;
  t.w10 = wy * (1.0 - wx);
  t.w11 = wy * wx;
  return t;
}

}  // namespace

Tensor crop_and_resize(const Tensor& feature_map, const Box& normalized_box,
                       int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("crop_and_resize: output dims must be >= 1");
  }
  Tensor out(out_h, out_w, feature_map.channels);
  const double scale_y = feature_map.height - 1;
  const double scale_x = feature_map.width - 1;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy =
        sample_coord(normalized_box.ymin, normalized_box.ymax, oy, out_h) *
        scale_y;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx =
          sample_coord(normalized_box.xmin, normalized_box.xmax, ox, out_w) *
          scale_x;
      const BilinearTaps t =
          bilinear_taps(fy, fx, feature_map.height, feature_map.width);
      for (int c = 0; c < feature_map.channels; ++c) {
        out.at(oy, ox, c) = t.w00 * feature_map.at(t.y0, t.x0, c) +
                            t.w01 * feature_map.at(t.y0, t.x1, c) +
                            t.w10 * feature_map.at(t.y1, t.x0, c) +
                            t.w11 * feature_map.at(t.y1, t.x1, c);
      }
    }
  }
  return out;
}

void crop_and_resize_backward(const Box& normalized_box, const Tensor& d_output,
                              Tensor& d_feature_map) {
  const double scale_y = d_feature_map.height - 1;
  const double scale_x = d_feature_map.width - 1;
  for (int oy = 0; oy < d_output.height; ++oy) {
    const double fy =
        sample_coord(normalized_box.ymin, normalized_box.ymax, oy,
                     d_output.height) *
        scale_y;
    for (int ox = 0; ox < d_output.width; ++ox) {
      const double fx =
          sample_coord(normalized_box.xmin, normalized_box.xmax, ox,
                       d_output.width) *
          scale_x;
      const BilinearTaps t =
          bilinear_taps(fy, fx, d_feature_map.height, d_feature_map.width);
      for (int c = 0; c < d_output.channels; ++c) {
        const double g = d_output.at(oy, ox, c);
        if (g == 0.0) continue;
        d_feature_map.at(t.y0, t.x0, c) += g * t.w00;
        d_feature_map.at(t.y0, t.x1, c) += g * t.w01;
        d_feature_map.at(t.y1, t.x0, c) += g * t.w10;
        d_feature_map.at(t.y1, t.x1, c) += g * t.w11;
      }
    }
  }
}

std::vector<double> position_sensitive_pool(const Tensor& score_maps,
                                            const Box& normalized_box, int k,
                                            int samples_per_bin) {
  if (k < 1 || samples_per_bin < 1) {
    throw std::invalid_argument("position_sensitive_pool: k and samples >= 1");
  }
  if (score_maps.channels % (k * k) != 0) {
    throw std::invalid_argument(
        "position_sensitive_pool: channels not divisible by k^2");
  }
  const int group_channels = score_maps.channels / (k * k);
  const double bh = (normalized_box.ymax - normalized_box.ymin) / k;
  const double bw = (normalized_box.xmax - normalized_box.xmin) / k;
  const double scale_y = score_maps.height - 1;
  const double scale_x = score_maps.width - 1;
  const int s = samples_per_bin;

  std::vector<double> pooled(group_channels, 0.0);
  for (int bi = 0; bi < k; ++bi) {
    const double y0 = normalized_box.ymin + bi * bh;
    for (int bj = 0; bj < k; ++bj) {
      const double x0 = normalized_box.xmin + bj * bw;
      const int group = bi * k + bj;
      for (int c = 0; c < group_channels; ++c) {
        const int ch = group * group_channels + c;
        double acc = 0.0;
        for (int sy = 0; sy < s; ++sy) {
          const double fy = sample_coord(y0, y0 + bh, sy, s) * scale_y;
          for (int sx = 0; sx < s; ++sx) {
            const double fx = sample_coord(x0, x0 + bw, sx, s) * scale_x;
            const BilinearTaps t =
                bilinear_taps(fy, fx, score_maps.height, score_maps.width);
            acc += t.w00 * score_maps.at(t.y0, t.x0, ch) +
                   t.w01 * score_maps.at(t.y0, t.x1, ch) +
                   t.w10 * score_maps.at(t.y1, t.x0, ch) +
                   t.w11 * score_maps.at(t.y1, t.x1, ch);
          }
        }
        pooled[c] += acc / static_cast<double>(s * s);
      }
    }
  }
  // Average the k^2 bin votes.
  for (double& v : pooled) v /= static_cast<double>(k * k);
  return pooled;
}

void position_sensitive_pool_backward(const Box& normalized_box,
                                      std::span<const double> d_pooled, int k,
                                      int samples_per_bin, Tensor& d_score_maps) {
  const int group_channels = d_score_maps.channels / (k * k);
  const double bh = (normalized_box.ymax - normalized_box.ymin) / k;
  const double bw = (normalized_box.xmax - normalized_box.xmin) / k;
  const double scale_y = d_score_maps.height - 1;
  const double scale_x = d_score_maps.width - 1;
  const int s = samples_per_bin;
  const double norm = 1.0 / (static_cast<double>(k * k) * s * s);

  for (int bi = 0; bi < k; ++bi) {
    const double y0 = normalized_box.ymin + bi * bh;
    for (int bj = 0; bj < k; ++bj) {
      const double x0 = normalized_box.xmin + bj * bw;
      const int group = bi * k + bj;
      for (int c = 0; c < group_channels; ++c) {
        const double g = d_pooled[c] * norm;
        if (g == 0.0) continue;
        const int ch = group * group_channels + c;
        for (int sy = 0; sy < s; ++sy) {
          const double fy = sample_coord(y0, y0 + bh, sy, s) * scale_y;
          for (int sx = 0; sx < s; ++sx) {
            const double fx = sample_coord(x0, x0 + bw, sx, s) * scale_x;
            const BilinearTaps t = bilinear_taps(fy, fx, d_score_maps.height,
                                                 d_score_maps.width);
            d_score_maps.at(t.y0, t.x0, ch) += g * t.w00;
            d_score_maps.at(t.y0, t.x1, ch) += g * t.w01;
            d_score_maps.at(t.y1, t.x0, ch) += g * t.w10;
            d_score_maps.at(t.y1, t.x1, ch) += g * t.w11;
          }
        }
      }
    }
  }
}

std::string to_string(MetaArchitecture m) {
  switch (m) {
    case MetaArchitecture::SSD: return "ssd";
    case MetaArchitecture::FasterRCNN: return "faster_rcnn";
    case MetaArchitecture::RFCN: return "rfcn";
  }
  return "?";
}

std::string to_string(ExtractorKind e) {
  switch (e) {
    case ExtractorKind::DenseTiny: return "dense_tiny";
    case ExtractorKind::SeparableTiny: return "separable_tiny";
  }
  return "?";
}

std::string to_string(BoxEncodingScheme s) {
  switch (s) {
    case BoxEncodingScheme::Corner: return "corner";
    case BoxEncodingScheme::CenterSqrt: return "center_sqrt";
    case BoxEncodingScheme::ScaledResidual: return "scaled_residual";
  }
  return "?";
}

void validate_config(const DetectorConfig& cfg) {
  if (cfg.input_size <= 0) {
    throw std::invalid_argument("config: input_size must be positive");
  }
  if (cfg.output_stride != 8 && cfg.output_stride != 16) {
    throw std::invalid_argument("config: output_stride must be 8 or 16");
  }
  if (cfg.input_size % cfg.output_stride != 0) {
    throw std::invalid_argument("config: input_size must be a stride multiple");
  }
  if (cfg.num_classes < 1) {
    throw std::invalid_argument("config: num_classes must be >= 1");
  }
  if (cfg.num_proposals < 0 || cfg.num_proposals > 300) {
    throw std::invalid_argument("config: num_proposals must be in [0, 300]");
  }
  if (cfg.aspect_ratios.empty()) {
    throw std::invalid_argument("config: aspect_ratios must be nonempty");
  }
  if (cfg.meta_arch == MetaArchitecture::SSD) {
    if (cfg.ssd_base_fractions.empty()) {
      throw std::invalid_argument("config: ssd_base_fractions must be nonempty");
    }
    const int levels = static_cast<int>(cfg.ssd_base_fractions.size());
    const int top = cfg.input_size / cfg.output_stride;
    if (top < (1 << (levels - 1))) {
      throw std::invalid_argument("config: input too small for pyramid depth");
    }
  } else {
    if (cfg.rpn_scales.empty()) {
      throw std::invalid_argument("config: rpn_scales must be nonempty");
    }
    if (cfg.crop_size < 1) {
      throw std::invalid_argument("config: crop_size must be >= 1");
    }
    if (cfg.meta_arch == MetaArchitecture::RFCN && cfg.ps_bins < 1) {
      throw std::invalid_argument("config: ps_bins must be >= 1");
    }
  }
}

namespace {

constexpr int kBackboneChannels = 32;
constexpr int kStage2Channels = 32;

struct PlannedLayer {
  std::string name;
  LayerSpec spec;
  bool relu = false;
  bool trainable = false;
};

struct Plan {
  std::vector<PlannedLayer> extractor;
  std::vector<PlannedLayer> ssd_extras;              // extra pyramid convs
  std::vector<std::pair<PlannedLayer, PlannedLayer>> ssd_predictors;  // cls, box
  PlannedLayer rpn_hidden, rpn_cls, rpn_box;
  PlannedLayer stage2_conv, stage2_cls, stage2_box;
  PlannedLayer rfcn_cls, rfcn_box;
};

std::vector<PlannedLayer> make_extractor(ExtractorKind kind, int output_stride) {
  // Four downsampling stages; the stride-8 variant keeps the layer stack and
  // runs the last stage at stride 1.
  const int last_stride = output_stride == 16 ? 2 : 1;
  std::vector<PlannedLayer> layers;
  auto conv = [](std::string name, int in, int out, int stride) {
    return PlannedLayer{std::move(name),
                        LayerSpec{LayerKind::Conv, 3, 3, in, out, stride,
                                  PaddingMode::Same},
                        true, false};
  };
  if (kind == ExtractorKind::DenseTiny) {
    layers.push_back(conv("extractor/conv0", 3, 8, 2));
    layers.push_back(conv("extractor/conv1", 8, 16, 2));
    layers.push_back(conv("extractor/conv2", 16, 24, 2));
    layers.push_back(conv("extractor/conv3", 24, kBackboneChannels, last_stride));
  } else {
    auto dw = [](std::string name, int c, int stride) {
      return PlannedLayer{std::move(name),
                          LayerSpec{LayerKind::DepthwiseConv, 3, 3, c, c, stride,
                                    PaddingMode::Same},
                          true, false};
    };
    auto pw = [](std::string name, int in, int out) {
      return PlannedLayer{std::move(name),
                          LayerSpec{LayerKind::PointwiseConv, 1, 1, in, out, 1,
                                    PaddingMode::Same},
                          true, false};
    };
    layers.push_back(conv("extractor/conv0", 3, 8, 2));
    layers.push_back(dw("extractor/dw1", 8, 2));
    layers.push_back(pw("extractor/pw1", 8, 16));
    layers.push_back(dw("extractor/dw2", 16, 2));
    layers.push_back(pw("extractor/pw2", 16, 24));
    layers.push_back(dw("extractor/dw3", 24, last_stride));
    layers.push_back(pw("extractor/pw3", 24, kBackboneChannels));
  }
  return layers;
}

Plan build_plan(const DetectorConfig& cfg) {
  Plan plan;
  plan.extractor = make_extractor(cfg.extractor, cfg.output_stride);
  const int ratios = static_cast<int>(cfg.aspect_ratios.size());
  const int k1 = cfg.num_classes + 1;

  if (cfg.meta_arch == MetaArchitecture::SSD) {
    const int levels = static_cast<int>(cfg.ssd_base_fractions.size());
    for (int l = 1; l < levels; ++l) {
      plan.ssd_extras.push_back(PlannedLayer{
          "ssd/extra" + std::to_string(l),
          LayerSpec{LayerKind::Conv, 3, 3, kBackboneChannels, kBackboneChannels,
                    2, PaddingMode::Same},
          true, false});
    }
    for (int l = 0; l < levels; ++l) {
      PlannedLayer cls{"ssd/l" + std::to_string(l) + "/cls",
                       LayerSpec{LayerKind::Predictor, 3, 3, kBackboneChannels,
                                 ratios * k1, 1, PaddingMode::Same},
                       false, true};
      PlannedLayer box{"ssd/l" + std::to_string(l) + "/box",
                       LayerSpec{LayerKind::Predictor, 3, 3, kBackboneChannels,
                                 ratios * 4, 1, PaddingMode::Same},
                       false, true};
      plan.ssd_predictors.emplace_back(std::move(cls), std::move(box));
    }
  } else {
    const int rpn_per_loc = static_cast<int>(cfg.rpn_scales.size()) * ratios;
    plan.rpn_hidden = PlannedLayer{
        "rpn/hidden",
        LayerSpec{LayerKind::Conv, 3, 3, kBackboneChannels, kBackboneChannels, 1,
                  PaddingMode::Same},
        true, false};
    plan.rpn_cls = PlannedLayer{
        "rpn/cls",
        LayerSpec{LayerKind::Predictor, 1, 1, kBackboneChannels, rpn_per_loc * 2,
                  1, PaddingMode::Same},
        false, true};
    plan.rpn_box = PlannedLayer{
        "rpn/box",
        LayerSpec{LayerKind::Predictor, 1, 1, kBackboneChannels, rpn_per_loc * 4,
                  1, PaddingMode::Same},
        false, true};
    if (cfg.meta_arch == MetaArchitecture::FasterRCNN) {
      plan.stage2_conv = PlannedLayer{
          "stage2/conv",
          LayerSpec{LayerKind::Conv, 3, 3, kBackboneChannels, kStage2Channels, 1,
                    PaddingMode::Same},
          true, false};
      plan.stage2_cls = PlannedLayer{
          "stage2/cls",
          LayerSpec{LayerKind::Predictor, 1, 1, kStage2Channels, k1, 1,
                    PaddingMode::Same},
          false, true};
      plan.stage2_box = PlannedLayer{
          "stage2/box",
          LayerSpec{LayerKind::Predictor, 1, 1, kStage2Channels, 4, 1,
                    PaddingMode::Same},
          false, true};
    } else {
      const int k2 = cfg.ps_bins * cfg.ps_bins;
      plan.rfcn_cls = PlannedLayer{
          "rfcn/ps_cls",
          LayerSpec{LayerKind::Predictor, 1, 1, kBackboneChannels, k2 * k1, 1,
                    PaddingMode::Same},
          false, true};
      plan.rfcn_box = PlannedLayer{
          "rfcn/ps_box",
          LayerSpec{LayerKind::Predictor, 1, 1, kBackboneChannels, k2 * 4, 1,
                    PaddingMode::Same},
          false, true};
    }
  }
  return plan;
}

void for_each_planned(const Plan& plan, const DetectorConfig& cfg,
                      const std::function<void(const PlannedLayer&)>& fn) {
  for (const auto& l : plan.extractor) fn(l);
  if (cfg.meta_arch == MetaArchitecture::SSD) {
    for (const auto& l : plan.ssd_extras) fn(l);
    for (const auto& [cls, box] : plan.ssd_predictors) {
      fn(cls);
      fn(box);
    }
  } else {
    fn(plan.rpn_hidden);
    fn(plan.rpn_cls);
    fn(plan.rpn_box);
    if (cfg.meta_arch == MetaArchitecture::FasterRCNN) {
      fn(plan.stage2_conv);
      fn(plan.stage2_cls);
      fn(plan.stage2_box);
    } else {
      fn(plan.rfcn_cls);
      fn(plan.rfcn_box);
    }
  }
}

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

void relu_inplace(Tensor& t) {
  for (double& v : t.data) v = std::max(v, 0.0);
}

Tensor apply_layer(const Tensor& input, const PlannedLayer& layer,
                   const WeightStore& weights) {
  const auto kit = weights.find(layer.name + "/kernel");
  if (kit == weights.end()) {
    throw std::invalid_argument("missing weight tensor: " + layer.name);
  }
  const TensorData* bias = nullptr;
  if (layer.spec.kind == LayerKind::Predictor) {
    const auto bit = weights.find(layer.name + "/bias");
    if (bit != weights.end()) bias = &bit->second;
  }
  Tensor out = conv_forward(input, layer.spec, kit->second, bias);
  if (layer.relu) relu_inplace(out);
  return out;
}

// Normalizes a pixel box into the unit square of an image_size x image_size
// window.
Box normalize_box(const Box& b, double image_size) {
  return Box{b.ymin / image_size, b.xmin / image_size, b.ymax / image_size,
             b.xmax / image_size};
}

Box canonicalize(const Box& b) {
  return Box{std::min(b.ymin, b.ymax), std::min(b.xmin, b.xmax),
             std::max(b.ymin, b.ymax), std::max(b.xmin, b.xmax)};
}

}  // namespace

Detector::Detector(const DetectorConfig& cfg) : cfg_(cfg) {
  validate_config(cfg_);
  cfg_.loss.num_classes = cfg_.num_classes;
  const double m = cfg_.input_size;
  const int top = cfg_.input_size / cfg_.output_stride;

  if (cfg_.meta_arch == MetaArchitecture::SSD) {
    const int levels = static_cast<int>(cfg_.ssd_base_fractions.size());
    std::vector<double> bases;
    for (int l = 0; l < levels; ++l) {
      const int res = std::max(top >> l, 1);
      ssd_resolutions_.emplace_back(res, res);
      bases.push_back(cfg_.ssd_base_fractions[l] * m);
    }
    anchors_ = flatten_anchors(
        ssd_anchor_pyramid(m, m, ssd_resolutions_, bases, cfg_.aspect_ratios));
  } else {
    const AnchorGrid grid = generate_grid(
        top, top, cfg_.output_stride, cfg_.rpn_base_fraction * m,
        cfg_.rpn_scales, cfg_.aspect_ratios);
    anchors_ = grid.anchors;
  }
}

int Detector::anchors_per_location() const {
  if (cfg_.meta_arch == MetaArchitecture::SSD) {
    return static_cast<int>(cfg_.aspect_ratios.size());
  }
  return static_cast<int>(cfg_.rpn_scales.size() * cfg_.aspect_ratios.size());
}

WeightStore Detector::init_weights(std::uint64_t seed) const {
  const Plan plan = build_plan(cfg_);
  WeightStore store;
  for_each_planned(plan, cfg_, [&](const PlannedLayer& layer) {
    const LayerSpec l = layer.spec;
    TensorData kernel;
    int fan_in = 0;
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Predictor:
        kernel.shape = {l.out_channels, l.kernel_h, l.kernel_w, l.in_channels};
        fan_in = l.kernel_h * l.kernel_w * l.in_channels;
        break;
      case LayerKind::DepthwiseConv:
        kernel.shape = {l.kernel_h, l.kernel_w, l.in_channels};
        fan_in = l.kernel_h * l.kernel_w;
        break;
      case LayerKind::PointwiseConv:
        kernel.shape = {l.out_channels, l.in_channels};
        fan_in = l.in_channels;
        break;
      case LayerKind::MaxPool:
        return;
    }
    std::size_t count = 1;
    for (int d : kernel.shape) count *= static_cast<std::size_t>(d);
    kernel.values.resize(count);
    // Trained predictor heads start at sigma 0.03; the frozen feature layers
    // use a fan-in scaled sigma so activations keep a usable magnitude.
    const double sigma = layer.trainable
                             ? kPredictorSigma
                             : std::sqrt(2.0 / static_cast<double>(fan_in));
    Rng rng(Rng::mix(seed, name_hash(layer.name)));
    for (double& v : kernel.values) v = rng.truncated_normal(sigma);
    store[layer.name + "/kernel"] = std::move(kernel);
    if (l.kind == LayerKind::Predictor) {
      TensorData bias;
      bias.shape = {l.out_channels};
      bias.values.assign(l.out_channels, 0.0);
      store[layer.name + "/bias"] = std::move(bias);
    }
  });
  return store;
}

std::vector<std::string> Detector::trainable_tensor_names() const {
  const Plan plan = build_plan(cfg_);
  std::vector<std::string> names;
  for_each_planned(plan, cfg_, [&](const PlannedLayer& layer) {
    if (!layer.trainable) return;
    names.push_back(layer.name + "/kernel");
    names.push_back(layer.name + "/bias");
  });
  return names;
}

SsdForward Detector::ssd_forward(const Tensor& image,
                                 const WeightStore& weights) const {
  if (cfg_.meta_arch != MetaArchitecture::SSD) {
    throw std::invalid_argument("ssd_forward: not an SSD config");
  }
  if (image.height != cfg_.input_size || image.width != cfg_.input_size ||
      image.channels != 3) {
    throw std::invalid_argument("ssd_forward: image must be MxMx3");
  }
  const Plan plan = build_plan(cfg_);
  const double m = cfg_.input_size;
  const int k1 = cfg_.num_classes + 1;
  const int per_loc = anchors_per_location();

  SsdForward fwd;
  Tensor x = image;
  for (const auto& layer : plan.extractor) x = apply_layer(x, layer, weights);

  fwd.level_inputs.push_back(x);
  for (const auto& layer : plan.ssd_extras) {
    fwd.level_inputs.push_back(apply_layer(fwd.level_inputs.back(), layer, weights));
  }

  fwd.anchors = anchors_;
  fwd.predictions.resize(anchors_.size());
  int offset = 0;
  for (std::size_t l = 0; l < plan.ssd_predictors.size(); ++l) {
    fwd.level_anchor_offsets.push_back(offset);
    const Tensor& in = fwd.level_inputs[l];
    const Tensor cls = apply_layer(in, plan.ssd_predictors[l].first, weights);
    const Tensor box = apply_layer(in, plan.ssd_predictors[l].second, weights);
    for (int y = 0; y < cls.height; ++y) {
      for (int x2 = 0; x2 < cls.width; ++x2) {
        for (int a = 0; a < per_loc; ++a) {
          const int idx = offset + (y * cls.width + x2) * per_loc + a;
          AnchorPrediction& p = fwd.predictions[idx];
          p.class_logits.resize(k1);
          for (int c = 0; c < k1; ++c) {
            p.class_logits[c] = cls.at(y, x2, a * k1 + c);
          }
          for (int d = 0; d < 4; ++d) p.loc[d] = box.at(y, x2, a * 4 + d);
        }
      }
    }
    offset += cls.height * cls.width * per_loc;
  }
  (void)m;
  return fwd;
}

TwoStageForward Detector::two_stage_forward(const Tensor& image,
                                            const WeightStore& weights) const {
  if (cfg_.meta_arch == MetaArchitecture::SSD) {
    throw std::invalid_argument("two_stage_forward: not a two-stage config");
  }
  if (image.height != cfg_.input_size || image.width != cfg_.input_size ||
      image.channels != 3) {
    throw std::invalid_argument("two_stage_forward: image must be MxMx3");
  }
  if (cfg_.num_proposals < 1) {
    throw std::invalid_argument("two_stage_forward: num_proposals must be >= 1");
  }
  const Plan plan = build_plan(cfg_);
  const double m = cfg_.input_size;
  const int k1 = cfg_.num_classes + 1;
  const int per_loc = anchors_per_location();

  TwoStageForward fwd;
  Tensor x = image;
  for (const auto& layer : plan.extractor) x = apply_layer(x, layer, weights);
  fwd.backbone = std::move(x);
  fwd.rpn_hidden = apply_layer(fwd.backbone, plan.rpn_hidden, weights);

  const Tensor rpn_cls = apply_layer(fwd.rpn_hidden, plan.rpn_cls, weights);
  const Tensor rpn_box = apply_layer(fwd.rpn_hidden, plan.rpn_box, weights);

  fwd.rpn_anchors = anchors_;
  fwd.rpn_predictions.resize(anchors_.size());
  for (int y = 0; y < rpn_cls.height; ++y) {
    for (int x2 = 0; x2 < rpn_cls.width; ++x2) {
      for (int a = 0; a < per_loc; ++a) {
        const int idx = (y * rpn_cls.width + x2) * per_loc + a;
        AnchorPrediction& p = fwd.rpn_predictions[idx];
        p.class_logits = {rpn_cls.at(y, x2, a * 2), rpn_cls.at(y, x2, a * 2 + 1)};
        for (int d = 0; d < 4; ++d) p.loc[d] = rpn_box.at(y, x2, a * 4 + d);
      }
    }
  }

  // Decode proposals, clip to the image, suppress overlaps, keep the top N
  // by objectness.
  const Box window{0.0, 0.0, m, m};
  std::vector<ScoredDetection> candidates;
  candidates.reserve(anchors_.size());
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    const AnchorPrediction& p = fwd.rpn_predictions[i];
    const std::vector<double> probs = softmax(p.class_logits);
    BoxEncoding e{p.loc, cfg_.box_encoding};
    Box decoded = canonicalize(decode_box(e, anchors_[i], m, m));
    decoded = clip_to_window(decoded, window);
    if (decoded.width() <= 1e-6 || decoded.height() <= 1e-6) continue;
    candidates.push_back(ScoredDetection{decoded, 0, probs[1]});
  }
  std::vector<ScoredDetection> kept = nms(candidates, cfg_.rpn_nms_iou);
  if (static_cast<int>(kept.size()) > cfg_.num_proposals) {
    kept.resize(cfg_.num_proposals);
  }
  for (const auto& d : kept) {
    fwd.proposals.push_back(d.box);
    fwd.proposal_scores.push_back(d.score);
  }

  // Second stage.
  fwd.stage2_predictions.resize(fwd.proposals.size());
  if (cfg_.meta_arch == MetaArchitecture::FasterRCNN) {
    for (std::size_t i = 0; i < fwd.proposals.size(); ++i) {
      const Box nb = normalize_box(fwd.proposals[i], m);
      const Tensor crop =
          crop_and_resize(fwd.backbone, nb, cfg_.crop_size, cfg_.crop_size);
      const Tensor h = apply_layer(crop, plan.stage2_conv, weights);
      // Global average pool into a 1x1 feature vector.
      Tensor gap(1, 1, h.channels);
      const double inv = 1.0 / (static_cast<double>(h.height) * h.width);
      for (int y = 0; y < h.height; ++y) {
        for (int x2 = 0; x2 < h.width; ++x2) {
          for (int c = 0; c < h.channels; ++c) {
            gap.at(0, 0, c) += h.at(y, x2, c) * inv;
          }
        }
      }
      fwd.stage2_inputs.push_back(gap.data);
      const Tensor cls = apply_layer(gap, plan.stage2_cls, weights);
      const Tensor box = apply_layer(gap, plan.stage2_box, weights);
      AnchorPrediction& p = fwd.stage2_predictions[i];
      p.class_logits.assign(cls.data.begin(), cls.data.end());
      for (int d = 0; d < 4; ++d) p.loc[d] = box.data[d];
    }
  } else {
    fwd.ps_class_maps = apply_layer(fwd.backbone, plan.rfcn_cls, weights);
    fwd.ps_box_maps = apply_layer(fwd.backbone, plan.rfcn_box, weights);
    for (std::size_t i = 0; i < fwd.proposals.size(); ++i) {
      const Box nb = normalize_box(fwd.proposals[i], m);
      const std::vector<double> logits = position_sensitive_pool(
          fwd.ps_class_maps, nb, cfg_.ps_bins, cfg_.ps_samples_per_bin);
      const std::vector<double> loc = position_sensitive_pool(
          fwd.ps_box_maps, nb, cfg_.ps_bins, cfg_.ps_samples_per_bin);
      AnchorPrediction& p = fwd.stage2_predictions[i];
      p.class_logits = logits;
      for (int d = 0; d < 4; ++d) p.loc[d] = loc[d];
    }
  }
  (void)k1;
  return fwd;
}

DetectionOutput Detector::run(const Tensor& image,
                              const WeightStore& weights) const {
  DetectionOutput out;
  out.cost = cost_model(cfg_);
  const double m = cfg_.input_size;

  if (cfg_.meta_arch == MetaArchitecture::SSD) {
    const SsdForward fwd = ssd_forward(image, weights);
    out.raw.boxes.reserve(fwd.predictions.size());
    out.raw.class_probs.reserve(fwd.predictions.size());
    for (std::size_t i = 0; i < fwd.predictions.size(); ++i) {
      const AnchorPrediction& p = fwd.predictions[i];
      BoxEncoding e{p.loc, cfg_.box_encoding};
      out.raw.boxes.push_back(canonicalize(decode_box(e, fwd.anchors[i], m, m)));
      out.raw.class_probs.push_back(softmax(p.class_logits));
    }
  } else {
    const TwoStageForward fwd = two_stage_forward(image, weights);
    out.raw.boxes.reserve(fwd.proposals.size());
    out.raw.class_probs.reserve(fwd.proposals.size());
    for (std::size_t i = 0; i < fwd.proposals.size(); ++i) {
      const AnchorPrediction& p = fwd.stage2_predictions[i];
      const Anchor proposal_anchor(fwd.proposals[i]);
      BoxEncoding e{p.loc, cfg_.box_encoding};
      out.raw.boxes.push_back(
          canonicalize(decode_box(e, proposal_anchor, m, m)));
      out.raw.class_probs.push_back(softmax(p.class_logits));
    }
  }
  return out;
}

DetectionOutput run_detector(const DetectorConfig& cfg, const Tensor& image,
                             const WeightStore& weights) {
  return Detector(cfg).run(image, weights);
}

CostReport cost_model(const DetectorConfig& cfg) {
  DetectorConfig checked = cfg;
  // The analytic model tolerates N = 0 (fixed cost only).
  validate_config(checked);
  const Plan plan = build_plan(cfg);
  CostReport report;
  report.num_proposals =
      cfg.meta_arch == MetaArchitecture::SSD ? 0 : cfg.num_proposals;

  int h = cfg.input_size, w = cfg.input_size;
  report.layers.push_back(LayerCost{
      "input", 0, 0,
      static_cast<std::int64_t>(h) * w * 3 * static_cast<std::int64_t>(sizeof(double)),
      false});

  auto add_layer = [&](const PlannedLayer& layer, int& cur_h, int& cur_w,
                       bool per_proposal) {
    const auto [oh, ow] = layer_output_shape(layer.spec, cur_h, cur_w);
    report.layers.push_back(LayerCost{
        layer.name, layer_flops(layer.spec, cur_h, cur_w),
        layer_param_count(layer.spec),
        static_cast<std::int64_t>(oh) * ow * layer.spec.out_channels *
            static_cast<std::int64_t>(sizeof(double)),
        per_proposal});
    cur_h = oh;
    cur_w = ow;
  };

  for (const auto& layer : plan.extractor) add_layer(layer, h, w, false);
  const int bh = h, bw = w;

  if (cfg.meta_arch == MetaArchitecture::SSD) {
    int lh = bh, lw = bw;
    // Predictors see the level input, extras then shrink it.
    for (std::size_t l = 0; l < plan.ssd_predictors.size(); ++l) {
      int th = lh, tw = lw;
      add_layer(plan.ssd_predictors[l].first, th, tw, false);
      th = lh;
      tw = lw;
      add_layer(plan.ssd_predictors[l].second, th, tw, false);
      if (l < plan.ssd_extras.size()) {
        add_layer(plan.ssd_extras[l], lh, lw, false);
      }
    }
  } else {
    int rh = bh, rw = bw;
    add_layer(plan.rpn_hidden, rh, rw, false);
    int th = rh, tw = rw;
    add_layer(plan.rpn_cls, th, tw, false);
    th = rh;
    tw = rw;
    add_layer(plan.rpn_box, th, tw, false);

    if (cfg.meta_arch == MetaArchitecture::FasterRCNN) {
      // Per-proposal pipeline: bilinear crop, one conv, pooled predictors.
      const int cs = cfg.crop_size;
      report.layers.push_back(LayerCost{
          "stage2/crop",
          static_cast<std::int64_t>(cs) * cs * kBackboneChannels * 4,
          0,
          static_cast<std::int64_t>(cs) * cs * kBackboneChannels *
              static_cast<std::int64_t>(sizeof(double)),
          true});
      int ch = cs, cw = cs;
      add_layer(plan.stage2_conv, ch, cw, true);
      report.layers.push_back(LayerCost{
          "stage2/gap", 0, 0,
          static_cast<std::int64_t>(kStage2Channels) *
              static_cast<std::int64_t>(sizeof(double)),
          true});
      int gh = 1, gw = 1;
      add_layer(plan.stage2_cls, gh, gw, true);
      gh = gw = 1;
      add_layer(plan.stage2_box, gh, gw, true);
    } else {
      int th2 = bh, tw2 = bw;
      add_layer(plan.rfcn_cls, th2, tw2, false);
      th2 = bh;
      tw2 = bw;
      add_layer(plan.rfcn_box, th2, tw2, false);
      // Pooling taps: k^2 bins, s^2 bilinear samples each, per group channel.
      const int k1 = cfg.num_classes + 1;
      const std::int64_t taps = static_cast<std::int64_t>(cfg.ps_bins) *
                                cfg.ps_bins * cfg.ps_samples_per_bin *
                                cfg.ps_samples_per_bin * 4;
      report.layers.push_back(LayerCost{
          "rfcn/pool_cls", taps * k1, 0,
          static_cast<std::int64_t>(k1) * static_cast<std::int64_t>(sizeof(double)),
          true});
      report.layers.push_back(LayerCost{
          "rfcn/pool_box", taps * 4, 0,
          4 * static_cast<std::int64_t>(sizeof(double)), true});
    }
  }

  for (const auto& lc : report.layers) {
    report.params += lc.params;
    if (lc.per_proposal) {
      report.per_proposal_flops += lc.flops;
      report.memory_bytes += lc.activation_bytes * report.num_proposals;
    } else {
      report.fixed_flops += lc.flops;
      report.memory_bytes += lc.activation_bytes;
    }
  }
  report.total_flops =
      report.fixed_flops + report.per_proposal_flops * report.num_proposals;
  report.memory_bytes += report.params * static_cast<std::int64_t>(sizeof(double));
  return report;
}

}  // namespace detbench
