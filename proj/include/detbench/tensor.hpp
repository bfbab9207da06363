#pragma once

#include <cstddef>
#include <vector>

namespace detbench {

// Dense H x W x C tensor of doubles, row-major with channels innermost.
struct Tensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int h, int w, int c)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, 0.0) {}

  static Tensor constant(int h, int w, int c, double value) {
    Tensor t(h, w, c);
    for (double& v : t.data) v = value;
    return t;
  }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c) { return data[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data[index(y, x, c)]; }

  std::size_t size() const { return data.size(); }
};

}  // namespace detbench
