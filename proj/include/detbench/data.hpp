#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "detbench/eval.hpp"
#include "detbench/tensor.hpp"

namespace detbench {

// Shape classes rendered into synthetic scenes.
inline constexpr int kClassRectangle = 1;
inline constexpr int kClassEllipse = 2;
inline constexpr int kClassTriangle = 3;

struct Scene {
  Tensor image;  // M x M x 3, values in [0, 1]
  std::vector<GroundtruthInstance> gts;
  std::uint64_t seed = 0;
  int index = 0;
};

struct DatasetSpec {
  int image_size = 64;
  int num_images = 100;
  std::vector<int> classes = {kClassRectangle, kClassEllipse, kClassTriangle};
  // Weights over the {small, medium, large} object-size bands; must be
  // nonnegative and sum to 1.
  std::array<double, 3> size_mix = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double noise_amplitude = 0.05;
  std::uint64_t seed = 1;
};

// Renders 1..6 color-coded filled shapes on a noisy gray background. Shape
// layouts are drawn in normalized coordinates, so two specs differing only in
// image_size produce the same scene at different rasterizations. Deterministic
// per (spec.seed, index).
Scene generate_scene(const DatasetSpec& spec, int index);

std::vector<Scene> generate_dataset(const DatasetSpec& spec);

// Binary PPM (P6, 8-bit) image dump / load.
void write_ppm(const Tensor& image, const std::string& path);
Tensor read_ppm(const std::string& path);

// COCO-style JSON interchange.
struct CocoCategory {
  int id = 0;
  std::string name;
};

struct CocoGroundtruth {
  std::vector<int> image_ids;  // in file order
  std::vector<std::pair<int, int>> image_sizes;  // (height, width)
  std::vector<std::string> file_names;           // may be empty strings
  std::vector<std::vector<GroundtruthInstance>> per_image;
  std::vector<CocoCategory> categories;
};

// bbox [x, y, w, h] maps to corners (ymin=y, xmin=x, ymax=y+h, xmax=x+w).
CocoGroundtruth load_coco_groundtruth(const std::string& path);
void write_coco_groundtruth(const CocoGroundtruth& gt, const std::string& path);

// Detections as [{image_id, category_id, bbox, score}]; image ids must come
// from the groundtruth ordering passed in.
std::vector<std::vector<DetectionInstance>> load_coco_detections(
    const std::string& path, const std::vector<int>& image_ids);
void write_coco_detections(
    const std::vector<std::vector<DetectionInstance>>& dets,
    const std::vector<int>& image_ids, const std::string& path);

// Groundtruth for a generated dataset in COCO layout, image ids 1..N.
CocoGroundtruth coco_from_scenes(const std::vector<Scene>& scenes,
                                 const std::vector<int>& classes);

}  // namespace detbench
