#include "detbench/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

#include "detbench/geometry.hpp"
#include "detbench/rng.hpp"

namespace detbench {

namespace {

using nlohmann::json;

// Object sizes are sampled as sqrt-area fractions of the image side. The band
// edges sit at 0.125 and 0.375 (the 32 px / 96 px split at a 256 px side);
// sampling keeps a small margin inside each band so rasterization cannot push
// a shape across an edge.
struct BandRange {
  double lo, hi;
};
constexpr BandRange kBands[3] = {{0.060, 0.119}, {0.135, 0.360}, {0.385, 0.580}};

constexpr double kClassColors[3][3] = {
    {0.85, 0.15, 0.15},  // rectangle: red
    {0.10, 0.75, 0.20},  // ellipse: green
    {0.15, 0.25, 0.85},  // triangle: blue
};

struct ShapeParams {
  int cls = 0;
  double cy, cx, h, w;  // normalized
  double color[3];
};

bool point_in_triangle(double px, double py, double ax, double ay, double bx,
                       double by, double cx, double cy) {
  auto side = [](double x1, double y1, double x2, double y2, double x, double y) {
    return (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
  };
  const double d1 = side(ax, ay, bx, by, px, py);
  const double d2 = side(bx, by, cx, cy, px, py);
  const double d3 = side(cx, cy, ax, ay, px, py);
  const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
  const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
  return !(has_neg && has_pos);
}

void validate_spec(const DatasetSpec& spec) {
  if (spec.image_size < 8) {
    throw std::invalid_argument("dataset: image_size too small");
  }
  if (spec.num_images < 0) {
    throw std::invalid_argument("dataset: negative image count");
  }
  if (spec.classes.empty()) {
    throw std::invalid_argument("dataset: empty class set");
  }
  for (int c : spec.classes) {
    if (c < kClassRectangle || c > kClassTriangle) {
      throw std::invalid_argument("dataset: unknown class id");
    }
  }
  double sum = 0.0;
  for (double w : spec.size_mix) {
    if (w < 0.0) throw std::invalid_argument("dataset: negative size weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("dataset: size_mix must sum to 1");
  }
  if (spec.noise_amplitude < 0.0 || spec.noise_amplitude > 0.5) {
    throw std::invalid_argument("dataset: noise amplitude out of range");
  }
  for (int b = 0; b < 3; ++b) {
    if (spec.size_mix[b] > 0.0 && kBands[b].lo * spec.image_size < 2.0) {
      throw std::invalid_argument(
          "dataset: image too small for the requested size band");
    }
  }
}

}  // namespace

Scene generate_scene(const DatasetSpec& spec, int index) {
  validate_spec(spec);
  const int m = spec.image_size;
  Rng rng(Rng::mix(spec.seed, static_cast<std::uint64_t>(index)));

  Scene scene;
  scene.seed = spec.seed;
  scene.index = index;
  scene.image = Tensor::constant(m, m, 3, 0.5);
  if (spec.noise_amplitude > 0.0) {
    for (double& v : scene.image.data) {
      v = std::clamp(v + rng.uniform(-spec.noise_amplitude, spec.noise_amplitude),
                     0.0, 1.0);
    }
  }

  const int num_shapes = static_cast<int>(rng.uniform_int(1, 6));
  std::vector<ShapeParams> shapes;
  std::vector<Box> placed;
  for (int s = 0; s < num_shapes; ++s) {
    ShapeParams p{};
    p.cls = spec.classes[rng.uniform_int(0, static_cast<int>(spec.classes.size()) - 1)];

    int band = 2;
    const double u = rng.uniform();
    if (u < spec.size_mix[0]) {
      band = 0;
    } else if (u < spec.size_mix[0] + spec.size_mix[1]) {
      band = 1;
    }
    // Placement with limited overlap; after a few failed tries the shape is
    // placed anyway to keep generation total.
    bool ok = false;
    for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
      const double sq = rng.uniform(kBands[band].lo, kBands[band].hi);
      const double aspect = rng.uniform(0.6, 1.6);
      p.w = std::min(sq * std::sqrt(aspect), 0.9);
      p.h = std::min(sq / std::sqrt(aspect), 0.9);
      p.cx = rng.uniform(p.w / 2, 1.0 - p.w / 2);
      p.cy = rng.uniform(p.h / 2, 1.0 - p.h / 2);
      const Box candidate{p.cy - p.h / 2, p.cx - p.w / 2, p.cy + p.h / 2,
                          p.cx + p.w / 2};
      ok = true;
      for (const Box& other : placed) {
        if (iou(candidate, other) > 0.3) {
          ok = false;
          break;
        }
      }
      if (ok || attempt == 19) {
        placed.push_back(candidate);
      }
    }
    for (int c = 0; c < 3; ++c) {
      p.color[c] = std::clamp(
          kClassColors[p.cls - 1][c] + rng.uniform(-0.08, 0.08), 0.05, 0.95);
    }
    shapes.push_back(p);
  }

  for (const ShapeParams& p : shapes) {
    const double x0 = (p.cx - p.w / 2) * m, x1 = (p.cx + p.w / 2) * m;
    const double y0 = (p.cy - p.h / 2) * m, y1 = (p.cy + p.h / 2) * m;
    const int py0 = std::max(0, static_cast<int>(std::floor(y0)));
    const int py1 = std::min(m - 1, static_cast<int>(std::ceil(y1)));
    const int px0 = std::max(0, static_cast<int>(std::floor(x0)));
    const int px1 = std::min(m - 1, static_cast<int>(std::ceil(x1)));

    int rymin = m, rymax = -1, rxmin = m, rxmax = -1;
    for (int y = py0; y <= py1; ++y) {
      const double cy = y + 0.5;
      for (int x = px0; x <= px1; ++x) {
        const double cx = x + 0.5;
        bool inside = false;
        switch (p.cls) {
          case kClassRectangle:
            inside = cx >= x0 && cx < x1 && cy >= y0 && cy < y1;
            break;
          case kClassEllipse: {
            const double nx = (cx - p.cx * m) / (0.5 * (x1 - x0));
            const double ny = (cy - p.cy * m) / (0.5 * (y1 - y0));
            inside = nx * nx + ny * ny <= 1.0;
            break;
          }
          case kClassTriangle:
            inside = point_in_triangle(cx, cy, p.cx * m, y0, x0, y1, x1, y1);
            break;
        }
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = p.color[c];
        rymin = std::min(rymin, y);
        rymax = std::max(rymax, y);
        rxmin = std::min(rxmin, x);
        rxmax = std::max(rxmax, x);
      }
    }
    if (rymax < 0) continue;  // nothing rendered, no groundtruth
    GroundtruthInstance gt;
    gt.box = Box{static_cast<double>(rymin), static_cast<double>(rxmin),
                 static_cast<double>(rymax + 1), static_cast<double>(rxmax + 1)};
    gt.category = p.cls;
    gt.area = gt.box.area();
    scene.gts.push_back(gt);
  }
  return scene;
}

std::vector<Scene> generate_dataset(const DatasetSpec& spec) {
  std::vector<Scene> scenes;
  scenes.reserve(spec.num_images);
  for (int i = 0; i < spec.num_images; ++i) {
    scenes.push_back(generate_scene(spec, i));
  }
  return scenes;
}

void write_ppm(const Tensor& image, const std::string& path) {
  if (image.channels != 3) {
    throw std::invalid_argument("write_ppm: image must have 3 channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw std::runtime_error("read_ppm: unsupported header");
  }
  in.get();  // single whitespace after header
  Tensor image(h, w, 3);
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error("read_ppm: truncated file");
  for (std::size_t i = 0; i < raw.size(); ++i) {
    image.data[i] = static_cast<double>(raw[i]) / 255.0;
  }
  return image;
}

namespace {

const json& require_field(const json& obj, const char* key,
                          const std::string& context) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    throw std::runtime_error("coco json: missing field '" + std::string(key) +
                             "' in " + context);
  }
  return *it;
}

Box box_from_bbox(const json& bbox) {
  if (!bbox.is_array() || bbox.size() != 4) {
    throw std::runtime_error("coco json: bbox must be [x, y, w, h]");
  }
  const double x = bbox[0].get<double>();
  const double y = bbox[1].get<double>();
  const double w = bbox[2].get<double>();
  const double h = bbox[3].get<double>();
  return Box{y, x, y + h, x + w};
}

json bbox_from_box(const Box& b) {
  return json::array({b.xmin, b.ymin, b.width(), b.height()});
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

void dump_json_file(const json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << "\n";
}

}  // namespace

CocoGroundtruth load_coco_groundtruth(const std::string& path) {
  const json j = load_json_file(path);
  CocoGroundtruth gt;

  std::map<int, int> image_index;
  for (const auto& img : require_field(j, "images", "document")) {
    const int id = require_field(img, "id", "images").get<int>();
    const int w = require_field(img, "width", "images").get<int>();
    const int h = require_field(img, "height", "images").get<int>();
    image_index[id] = static_cast<int>(gt.image_ids.size());
    gt.image_ids.push_back(id);
    gt.image_sizes.emplace_back(h, w);
    gt.file_names.push_back(img.contains("file_name")
                                ? img["file_name"].get<std::string>()
                                : std::string());
  }
  gt.per_image.resize(gt.image_ids.size());

  std::map<int, bool> known_cat;
  for (const auto& cat : require_field(j, "categories", "document")) {
    CocoCategory c;
    c.id = require_field(cat, "id", "categories").get<int>();
    c.name = require_field(cat, "name", "categories").get<std::string>();
    gt.categories.push_back(c);
    known_cat[c.id] = true;
  }

  for (const auto& ann : require_field(j, "annotations", "document")) {
    require_field(ann, "id", "annotations");
    const int image_id = require_field(ann, "image_id", "annotations").get<int>();
    const int cat_id = require_field(ann, "category_id", "annotations").get<int>();
    const auto img_it = image_index.find(image_id);
    if (img_it == image_index.end()) {
      throw std::runtime_error("coco json: annotation with unknown image_id");
    }
    if (!known_cat.count(cat_id)) {
      throw std::runtime_error("coco json: annotation with unknown category_id");
    }
    GroundtruthInstance inst;
    inst.box = box_from_bbox(require_field(ann, "bbox", "annotations"));
    inst.category = cat_id;
    inst.area = require_field(ann, "area", "annotations").get<double>();
    gt.per_image[img_it->second].push_back(inst);
  }
  return gt;
}

void write_coco_groundtruth(const CocoGroundtruth& gt, const std::string& path) {
  json j;
  j["images"] = json::array();
  for (std::size_t i = 0; i < gt.image_ids.size(); ++i) {
    json img;
    img["id"] = gt.image_ids[i];
    img["height"] = gt.image_sizes[i].first;
    img["width"] = gt.image_sizes[i].second;
    if (!gt.file_names[i].empty()) img["file_name"] = gt.file_names[i];
    j["images"].push_back(img);
  }
  j["annotations"] = json::array();
  int next_id = 1;
  for (std::size_t i = 0; i < gt.per_image.size(); ++i) {
    for (const auto& inst : gt.per_image[i]) {
      json ann;
      ann["id"] = next_id++;
      ann["image_id"] = gt.image_ids[i];
      ann["category_id"] = inst.category;
      ann["bbox"] = bbox_from_box(inst.box);
      ann["area"] = inst.area;
      j["annotations"].push_back(ann);
    }
  }
  j["categories"] = json::array();
  for (const auto& c : gt.categories) {
    j["categories"].push_back(json{{"id", c.id}, {"name", c.name}});
  }
  dump_json_file(j, path);
}

std::vector<std::vector<DetectionInstance>> load_coco_detections(
    const std::string& path, const std::vector<int>& image_ids) {
  const json j = load_json_file(path);
  if (!j.is_array()) {
    throw std::runtime_error("coco json: detections must be an array");
  }
  std::map<int, int> image_index;
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    image_index[image_ids[i]] = static_cast<int>(i);
  }
  std::vector<std::vector<DetectionInstance>> dets(image_ids.size());
  for (const auto& d : j) {
    const int image_id = require_field(d, "image_id", "detections").get<int>();
    const auto it = image_index.find(image_id);
    if (it == image_index.end()) {
      throw std::runtime_error("coco json: detection with unknown image_id");
    }
    DetectionInstance inst;
    inst.box = box_from_bbox(require_field(d, "bbox", "detections"));
    inst.category = require_field(d, "category_id", "detections").get<int>();
    inst.score = require_field(d, "score", "detections").get<double>();
    dets[it->second].push_back(inst);
  }
  return dets;
}

void write_coco_detections(
    const std::vector<std::vector<DetectionInstance>>& dets,
    const std::vector<int>& image_ids, const std::string& path) {
  if (dets.size() != image_ids.size()) {
    throw std::invalid_argument("write_coco_detections: id count mismatch");
  }
  json j = json::array();
  for (std::size_t i = 0; i < dets.size(); ++i) {
    for (const auto& d : dets[i]) {
      json entry;
      entry["image_id"] = image_ids[i];
      entry["category_id"] = d.category;
      entry["bbox"] = bbox_from_box(d.box);
      entry["score"] = d.score;
      j.push_back(entry);
    }
  }
  dump_json_file(j, path);
}

CocoGroundtruth coco_from_scenes(const std::vector<Scene>& scenes,
                                 const std::vector<int>& classes) {
  CocoGroundtruth gt;
  const char* names[] = {"rectangle", "ellipse", "triangle"};
  for (int c : classes) {
    gt.categories.push_back(CocoCategory{c, names[c - 1]});
  }
  char buf[64];
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    gt.image_ids.push_back(static_cast<int>(i) + 1);
    gt.image_sizes.emplace_back(scenes[i].image.height, scenes[i].image.width);
    std::snprintf(buf, sizeof(buf), "scene_%05zu.ppm", i);
    gt.file_names.emplace_back(buf);
    gt.per_image.push_back(scenes[i].gts);
  }
  return gt;
}

}  // namespace detbench
