#include "detbench/config_json.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace detbench {

namespace {

using nlohmann::json;

void require_known_keys(const json& obj, const std::set<std::string>& allowed,
                        const std::string& context) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw std::runtime_error("config: unknown key '" + key + "' in " + context);
    }
  }
}

MetaArchitecture parse_meta_arch(const std::string& s) {
  if (s == "ssd") return MetaArchitecture::SSD;
  if (s == "faster_rcnn") return MetaArchitecture::FasterRCNN;
  if (s == "rfcn") return MetaArchitecture::RFCN;
  throw std::runtime_error("config: unknown meta_arch '" + s + "'");
}

ExtractorKind parse_extractor(const std::string& s) {
  if (s == "dense_tiny") return ExtractorKind::DenseTiny;
  if (s == "separable_tiny") return ExtractorKind::SeparableTiny;
  throw std::runtime_error("config: unknown extractor '" + s + "'");
}

BoxEncodingScheme parse_encoding(const std::string& s) {
  if (s == "corner") return BoxEncodingScheme::Corner;
  if (s == "center_sqrt") return BoxEncodingScheme::CenterSqrt;
  if (s == "scaled_residual") return BoxEncodingScheme::ScaledResidual;
  throw std::runtime_error("config: unknown box_encoding '" + s + "'");
}

MatchStrategy parse_strategy(const std::string& s) {
  if (s == "argmax") return MatchStrategy::Argmax;
  if (s == "bipartite") return MatchStrategy::Bipartite;
  if (s == "box_center") return MatchStrategy::BoxCenter;
  throw std::runtime_error("config: unknown matcher strategy '" + s + "'");
}

LocationLossKind parse_location_loss(const std::string& s) {
  if (s == "smooth_l1") return LocationLossKind::SmoothL1;
  if (s == "l2") return LocationLossKind::L2;
  throw std::runtime_error("config: unknown location_loss '" + s + "'");
}

void apply_matcher(MatcherConfig& m, const json& obj, const std::string& ctx) {
  require_known_keys(obj,
                     {"strategy", "matched_threshold", "unmatched_threshold",
                      "force_match"},
                     ctx);
  if (obj.contains("strategy")) {
    m.strategy = parse_strategy(obj["strategy"].get<std::string>());
  }
  if (obj.contains("matched_threshold")) {
    m.matched_threshold = obj["matched_threshold"].get<double>();
  }
  if (obj.contains("unmatched_threshold")) {
    m.unmatched_threshold = obj["unmatched_threshold"].get<double>();
  }
  if (obj.contains("force_match")) {
    m.force_match_groundtruth = obj["force_match"].get<bool>();
  }
}

void apply_detector(DetectorConfig& cfg, const json& obj,
                    const std::string& ctx) {
  require_known_keys(
      obj, {"id",          "meta_arch",        "extractor",
            "input_size",  "output_stride",    "num_proposals",
            "num_classes", "box_encoding",     "crop_size",
            "ps_bins",     "ps_samples_per_bin", "aspect_ratios",
            "rpn_scales",  "rpn_base_fraction", "ssd_base_fractions",
            "rpn_nms_iou", "rpn_matcher",      "head_matcher",
            "stage2_matcher", "loss",          "weight_seed"},
      ctx);
  if (obj.contains("meta_arch")) {
    cfg.meta_arch = parse_meta_arch(obj["meta_arch"].get<std::string>());
  }
  if (obj.contains("extractor")) {
    cfg.extractor = parse_extractor(obj["extractor"].get<std::string>());
  }
  if (obj.contains("input_size")) cfg.input_size = obj["input_size"].get<int>();
  if (obj.contains("output_stride")) {
    cfg.output_stride = obj["output_stride"].get<int>();
  }
  if (obj.contains("num_proposals")) {
    cfg.num_proposals = obj["num_proposals"].get<int>();
  }
  if (obj.contains("num_classes")) cfg.num_classes = obj["num_classes"].get<int>();
  if (obj.contains("box_encoding")) {
    cfg.box_encoding = parse_encoding(obj["box_encoding"].get<std::string>());
  }
  if (obj.contains("crop_size")) cfg.crop_size = obj["crop_size"].get<int>();
  if (obj.contains("ps_bins")) cfg.ps_bins = obj["ps_bins"].get<int>();
  if (obj.contains("ps_samples_per_bin")) {
    cfg.ps_samples_per_bin = obj["ps_samples_per_bin"].get<int>();
  }
  if (obj.contains("aspect_ratios")) {
    cfg.aspect_ratios = obj["aspect_ratios"].get<std::vector<double>>();
  }
  if (obj.contains("rpn_scales")) {
    cfg.rpn_scales = obj["rpn_scales"].get<std::vector<double>>();
  }
  if (obj.contains("rpn_base_fraction")) {
    cfg.rpn_base_fraction = obj["rpn_base_fraction"].get<double>();
  }
  if (obj.contains("ssd_base_fractions")) {
    cfg.ssd_base_fractions = obj["ssd_base_fractions"].get<std::vector<double>>();
  }
  if (obj.contains("rpn_nms_iou")) {
    cfg.rpn_nms_iou = obj["rpn_nms_iou"].get<double>();
  }
  if (obj.contains("rpn_matcher")) {
    apply_matcher(cfg.rpn_matcher, obj["rpn_matcher"], ctx + ".rpn_matcher");
  }
  if (obj.contains("head_matcher")) {
    apply_matcher(cfg.head_matcher, obj["head_matcher"], ctx + ".head_matcher");
  }
  if (obj.contains("stage2_matcher")) {
    apply_matcher(cfg.stage2_matcher, obj["stage2_matcher"],
                  ctx + ".stage2_matcher");
  }
  if (obj.contains("loss")) {
    const json& l = obj["loss"];
    require_known_keys(l, {"alpha", "beta", "location_loss"}, ctx + ".loss");
    if (l.contains("alpha")) cfg.loss.alpha = l["alpha"].get<double>();
    if (l.contains("beta")) cfg.loss.beta = l["beta"].get<double>();
    if (l.contains("location_loss")) {
      cfg.loss.location_loss =
          parse_location_loss(l["location_loss"].get<std::string>());
    }
  }
  if (obj.contains("weight_seed")) {
    cfg.weight_seed = obj["weight_seed"].get<std::uint64_t>();
  }
}

void apply_train(TrainConfig& cfg, const json& obj) {
  require_known_keys(obj,
                     {"steps", "learning_rate", "momentum", "rpn_batch",
                      "rpn_positive_fraction", "stage2_batch",
                      "stage2_positive_fraction", "ssd_batch",
                      "ssd_positive_fraction", "seed"},
                     "train");
  if (obj.contains("steps")) cfg.steps = obj["steps"].get<int>();
  if (obj.contains("learning_rate")) {
    cfg.learning_rate = obj["learning_rate"].get<double>();
  }
  if (obj.contains("momentum")) cfg.momentum = obj["momentum"].get<double>();
  if (obj.contains("rpn_batch")) cfg.rpn_batch = obj["rpn_batch"].get<int>();
  if (obj.contains("rpn_positive_fraction")) {
    cfg.rpn_positive_fraction = obj["rpn_positive_fraction"].get<double>();
  }
  if (obj.contains("stage2_batch")) {
    cfg.stage2_batch = obj["stage2_batch"].get<int>();
  }
  if (obj.contains("stage2_positive_fraction")) {
    cfg.stage2_positive_fraction = obj["stage2_positive_fraction"].get<double>();
  }
  if (obj.contains("ssd_batch")) cfg.ssd_batch = obj["ssd_batch"].get<int>();
  if (obj.contains("ssd_positive_fraction")) {
    cfg.ssd_positive_fraction = obj["ssd_positive_fraction"].get<double>();
  }
  if (obj.contains("seed")) cfg.seed = obj["seed"].get<std::uint64_t>();
}

void apply_dataset(DatasetSpec& spec, const json& obj, const std::string& ctx) {
  require_known_keys(obj,
                     {"image_size", "num_images", "classes", "size_mix",
                      "noise_amplitude", "seed"},
                     ctx);
  if (obj.contains("image_size")) spec.image_size = obj["image_size"].get<int>();
  if (obj.contains("num_images")) spec.num_images = obj["num_images"].get<int>();
  if (obj.contains("classes")) {
    spec.classes = obj["classes"].get<std::vector<int>>();
  }
  if (obj.contains("size_mix")) {
    const auto mix = obj["size_mix"].get<std::vector<double>>();
    if (mix.size() != 3) {
      throw std::runtime_error("config: size_mix needs 3 weights in " + ctx);
    }
    spec.size_mix = {mix[0], mix[1], mix[2]};
  }
  if (obj.contains("noise_amplitude")) {
    spec.noise_amplitude = obj["noise_amplitude"].get<double>();
  }
  if (obj.contains("seed")) spec.seed = obj["seed"].get<std::uint64_t>();
}

std::string auto_config_id(const DetectorConfig& cfg) {
  std::string id = to_string(cfg.meta_arch) + "_" + to_string(cfg.extractor) +
                   "_m" + std::to_string(cfg.input_size) + "_s" +
                   std::to_string(cfg.output_stride);
  if (cfg.meta_arch != MetaArchitecture::SSD) {
    id += "_n" + std::to_string(cfg.num_proposals);
  }
  return id;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config: invalid JSON in " + path + ": " + e.what());
  }

  require_known_keys(j,
                     {"schema_version", "detector", "train", "dataset",
                      "eval_dataset", "postprocess", "eval", "bench", "sweep"},
                     "top level");
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1) {
    throw std::runtime_error("config: schema_version must be 1");
  }

  RunConfig cfg;
  if (j.contains("detector")) {
    apply_detector(cfg.detector, j["detector"], "detector");
    cfg.has_detector = true;
  }
  if (j.contains("train")) {
    apply_train(cfg.train, j["train"]);
    cfg.has_train = true;
  }
  if (j.contains("dataset")) {
    apply_dataset(cfg.dataset, j["dataset"], "dataset");
    cfg.has_dataset = true;
  }
  if (j.contains("eval_dataset")) {
    apply_dataset(cfg.eval_dataset, j["eval_dataset"], "eval_dataset");
    cfg.has_eval_dataset = true;
  }
  if (j.contains("postprocess")) {
    const json& p = j["postprocess"];
    require_known_keys(p, {"score_threshold", "iou_threshold", "max_detections"},
                       "postprocess");
    if (p.contains("score_threshold")) {
      cfg.postprocess.score_threshold = p["score_threshold"].get<double>();
    }
    if (p.contains("iou_threshold")) {
      cfg.postprocess.iou_threshold = p["iou_threshold"].get<double>();
    }
    if (p.contains("max_detections")) {
      cfg.postprocess.max_detections = p["max_detections"].get<int>();
    }
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    require_known_keys(e,
                       {"small_area_max", "medium_area_max",
                        "max_detections_per_image", "bands_from_image_size"},
                       "eval");
    if (e.contains("small_area_max")) {
      cfg.eval.area_small_max = e["small_area_max"].get<double>();
    }
    if (e.contains("medium_area_max")) {
      cfg.eval.area_medium_max = e["medium_area_max"].get<double>();
    }
    if (e.contains("max_detections_per_image")) {
      cfg.eval.max_detections_per_image =
          e["max_detections_per_image"].get<int>();
    }
    if (e.contains("bands_from_image_size")) {
      cfg.eval_bands_from_image_size = e["bands_from_image_size"].get<bool>();
    }
  }
  if (j.contains("bench")) {
    const json& b = j["bench"];
    require_known_keys(b, {"timing_images", "timing_warmup"}, "bench");
    if (b.contains("timing_images")) {
      cfg.timing_images = b["timing_images"].get<int>();
    }
    if (b.contains("timing_warmup")) {
      cfg.timing_warmup = b["timing_warmup"].get<int>();
    }
  }
  if (j.contains("sweep")) {
    if (!j["sweep"].is_array()) {
      throw std::runtime_error("config: sweep must be an array");
    }
    std::set<std::string> ids;
    int index = 0;
    for (const auto& entry : j["sweep"]) {
      DetectorConfig dc = cfg.detector;
      apply_detector(dc, entry, "sweep[" + std::to_string(index) + "]");
      std::string id = entry.contains("id") ? entry["id"].get<std::string>()
                                            : auto_config_id(dc);
      std::string unique = id;
      int suffix = 2;
      while (!ids.insert(unique).second) {
        unique = id + "_" + std::to_string(suffix++);
      }
      cfg.sweep.push_back(SweepItem{unique, dc});
      ++index;
    }
  }
  return cfg;
}

std::string run_config_defaults_json() {
  json j;
  j["schema_version"] = 1;
  j["detector"] = {
      {"meta_arch", "ssd"},
      {"extractor", "dense_tiny"},
      {"input_size", 64},
      {"output_stride", 16},
      {"num_proposals", 100},
      {"num_classes", 3},
      {"box_encoding", "scaled_residual"},
      {"crop_size", 7},
      {"ps_bins", 3},
      {"ps_samples_per_bin", 3},
      {"aspect_ratios", {0.5, 1.0, 2.0}},
      {"rpn_scales", {1.0, 2.0, 3.5}},
      {"rpn_base_fraction", 0.25},
      {"ssd_base_fractions", {0.2, 0.45, 0.7}},
      {"rpn_nms_iou", 0.7},
      {"rpn_matcher",
       {{"strategy", "argmax"},
        {"matched_threshold", 0.7},
        {"unmatched_threshold", 0.3},
        {"force_match", true}}},
      {"head_matcher",
       {{"strategy", "argmax"},
        {"matched_threshold", 0.5},
        {"unmatched_threshold", 0.5},
        {"force_match", true}}},
      {"stage2_matcher",
       {{"strategy", "argmax"},
        {"matched_threshold", 0.5},
        {"unmatched_threshold", 0.5},
        {"force_match", false}}},
      {"loss", {{"alpha", 1.0}, {"beta", 1.0}, {"location_loss", "smooth_l1"}}},
      {"weight_seed", 1},
  };
  j["train"] = {
      {"steps", 500},          {"learning_rate", 0.2},
      {"momentum", 0.9},       {"rpn_batch", 256},
      {"rpn_positive_fraction", 0.5},
      {"stage2_batch", 64},    {"stage2_positive_fraction", 0.25},
      {"ssd_batch", 64},       {"ssd_positive_fraction", 0.25},
      {"seed", 1},
  };
  j["dataset"] = {
      {"image_size", 64},
      {"num_images", 100},
      {"classes", {1, 2, 3}},
      {"size_mix", {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}},
      {"noise_amplitude", 0.05},
      {"seed", 1},
  };
  j["postprocess"] = {
      {"score_threshold", 0.05}, {"iou_threshold", 0.6}, {"max_detections", 100}};
  j["eval"] = {{"small_area_max", 1024.0},
               {"medium_area_max", 9216.0},
               {"max_detections_per_image", 100},
               {"bands_from_image_size", false}};
  j["bench"] = {{"timing_images", 50}, {"timing_warmup", 5}};
  j["sweep"] = json::array();
  return j.dump(2);
}

}  // namespace detbench
