#include "detbench/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace detbench {

bool Box::valid() const {
  return std::isfinite(ymin) && std::isfinite(xmin) && std::isfinite(ymax) &&
         std::isfinite(xmax) && ymax >= ymin && xmax >= xmin;
}

Anchor::Anchor(const Box& b) : box_(b) {
  if (!b.valid() || b.width() <= 0.0 || b.height() <= 0.0) {
    throw std::invalid_argument("Anchor requires a valid box with positive size");
  }
}

double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double ih = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

BoxEncoding encode_box(const Box& b, const Anchor& a, BoxEncodingScheme scheme,
                       double image_h, double image_w) {
  BoxEncoding e;
  e.scheme = scheme;
  switch (scheme) {
    case BoxEncodingScheme::Corner:
      e.values = {b.xmin / image_w, b.ymin / image_h, b.xmax / image_w,
                  b.ymax / image_h};
      break;
    case BoxEncodingScheme::CenterSqrt:
      if (b.width() <= 0.0 || b.height() <= 0.0) {
        throw std::invalid_argument("CenterSqrt encoding needs positive box size");
      }
      e.values = {b.center_x(), b.center_y(), std::sqrt(b.width()),
                  std::sqrt(b.height())};
      break;
    case BoxEncodingScheme::ScaledResidual:
      if (b.width() <= 0.0 || b.height() <= 0.0) {
        throw std::invalid_argument(
            "ScaledResidual encoding needs positive box size");
      }
      e.values = {10.0 * (b.center_x() - a.center_x()) / a.width(),
                  10.0 * (b.center_y() - a.center_y()) / a.height(),
                  5.0 * std::log(b.width() / a.width()),
                  5.0 * std::log(b.height() / a.height())};
      break;
  }
  return e;
}

Box decode_box(const BoxEncoding& e, const Anchor& a, double image_h,
               double image_w) {
  const auto& v = e.values;
  switch (e.scheme) {
    case BoxEncodingScheme::Corner:
      return Box{v[1] * image_h, v[0] * image_w, v[3] * image_h, v[2] * image_w};
    case BoxEncodingScheme::CenterSqrt:
      return Box::from_center(v[1], v[0], v[3] * v[3], v[2] * v[2]);
    case BoxEncodingScheme::ScaledResidual: {
      const double cx = a.center_x() + v[0] * a.width() / 10.0;
      const double cy = a.center_y() + v[1] * a.height() / 10.0;
      const double w = a.width() * std::exp(v[2] / 5.0);
      const double h = a.height() * std::exp(v[3] / 5.0);
      return Box::from_center(cy, cx, h, w);
    }
  }
  throw std::invalid_argument("unknown box encoding scheme");
}

Box clip_to_window(const Box& b, const Box& window) {
  auto clamp = [](double v, double lo, double hi) {
    return std::min(std::max(v, lo), hi);
  };
  return Box{clamp(b.ymin, window.ymin, window.ymax),
             clamp(b.xmin, window.xmin, window.xmax),
             clamp(b.ymax, window.ymin, window.ymax),
             clamp(b.xmax, window.xmin, window.xmax)};
}

}  // namespace detbench
