#pragma once

#include <array>
#include <cstdint>

namespace detbench {

// Axis-aligned rectangle in image coordinates, y pointing down.
// Invariant: ymax >= ymin, xmax >= xmin, all coordinates finite.
struct Box {
  double ymin = 0.0;
  double xmin = 0.0;
  double ymax = 0.0;
  double xmax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (xmin + xmax); }
  double center_y() const { return 0.5 * (ymin + ymax); }
  bool valid() const;

  static Box from_center(double cy, double cx, double h, double w) {
    return Box{cy - 0.5 * h, cx - 0.5 * w, cy + 0.5 * h, cx + 0.5 * w};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

// A reference box with strictly positive width and height; predictions are
// expressed relative to it.
class Anchor {
 public:
  explicit Anchor(const Box& b);
  Anchor(double ymin, double xmin, double ymax, double xmax)
      : Anchor(Box{ymin, xmin, ymax, xmax}) {}

  const Box& box() const { return box_; }
  double width() const { return box_.width(); }
  double height() const { return box_.height(); }
  double center_x() const { return box_.center_x(); }
  double center_y() const { return box_.center_y(); }

  friend bool operator==(const Anchor&, const Anchor&) = default;

 private:
  Box box_;
};

enum class BoxEncodingScheme { Corner, CenterSqrt, ScaledResidual };

struct BoxEncoding {
  std::array<double, 4> values{};
  BoxEncodingScheme scheme = BoxEncodingScheme::ScaledResidual;
};

// Jaccard overlap. Degenerate inputs (zero-area union) yield 0.
double iou(const Box& a, const Box& b);

double intersection_area(const Box& a, const Box& b);

// Encodes box b relative to anchor a.
//   Corner:         [x0/W, y0/H, x1/W, y1/H]
//   CenterSqrt:     [xc, yc, sqrt(w), sqrt(h)]
//   ScaledResidual: [10 (xc-xa)/wa, 10 (yc-ya)/ha, 5 log(w/wa), 5 log(h/ha)]
// image_h/image_w only affect the Corner scheme; callers that want
// resolution-independent corner encodings pass the image dimensions.
// Throws std::invalid_argument for a nonpositive-size box under a
// sqrt/log scheme.
BoxEncoding encode_box(const Box& b, const Anchor& a, BoxEncodingScheme scheme,
                       double image_h = 1.0, double image_w = 1.0);

// Exact inverse of encode_box for the encoding's scheme.
Box decode_box(const BoxEncoding& e, const Anchor& a, double image_h = 1.0,
               double image_w = 1.0);

// Componentwise clamp into the window. Boxes fully outside degenerate to a
// zero-area box on the window edge.
Box clip_to_window(const Box& b, const Box& window);

}  // namespace detbench
