// Command-line front end covering the full pipeline: synthetic data
// generation, head training, detection, evaluation, benchmarking, and
// analysis/report emission. Exit codes: 0 success, 1 usage error, 2 data or
// runtime error. Diagnostics go to standard error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "detbench/analysis.hpp"
#include "detbench/bench.hpp"
#include "detbench/checkpoint.hpp"
#include "detbench/config_json.hpp"
#include "detbench/data.hpp"
#include "detbench/eval.hpp"
#include "detbench/model.hpp"
#include "detbench/train.hpp"

namespace {

namespace fs = std::filesystem;
using namespace detbench;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_section(bool present, const char* section) {
  if (!present) {
    throw std::runtime_error(std::string("config: missing required section '") +
                             section + "'");
  }
}

char scene_name_buf[64];
std::string scene_file_name(std::size_t index) {
  std::snprintf(scene_name_buf, sizeof(scene_name_buf), "scene_%05zu.ppm", index);
  return scene_name_buf;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_run_config(config_path);
  require_section(cfg.has_dataset, "dataset");
  if (seed) cfg.dataset.seed = *seed;

  fs::create_directories(out_dir);
  const std::vector<Scene> scenes = generate_dataset(cfg.dataset);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    write_ppm(scenes[i].image, out_dir + "/" + scene_file_name(i));
  }
  write_coco_groundtruth(coco_from_scenes(scenes, cfg.dataset.classes),
                         out_dir + "/gt.json");
  std::cerr << "wrote " << scenes.size() << " scenes and gt.json to " << out_dir
            << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_path,
              std::string loss_csv, std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_run_config(config_path);
  require_section(cfg.has_detector, "detector");
  require_section(cfg.has_dataset, "dataset");
  if (seed) cfg.train.seed = *seed;
  if (loss_csv.empty()) loss_csv = out_path + ".loss.csv";

  cfg.dataset.image_size = cfg.detector.input_size;
  const std::vector<Scene> dataset = generate_dataset(cfg.dataset);
  const TrainResult result = train_head(cfg.detector, cfg.train, dataset);
  save_checkpoint(result.weights, out_path);
  write_loss_trace(result.loss_trace, loss_csv);
  std::cerr << "trained " << cfg.train.steps << " steps; checkpoint at "
            << out_path << ", loss trace at " << loss_csv << "\n";
  return 0;
}

int cmd_detect(const std::string& config_path, const std::string& checkpoint,
               const std::string& images_dir, const std::string& out_path) {
  const RunConfig cfg = load_run_config(config_path);
  require_section(cfg.has_detector, "detector");

  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (entry.path().extension() == ".ppm") {
      files.push_back(entry.path().string());
    }
  }
  if (files.empty()) {
    throw std::runtime_error("detect: no .ppm images in " + images_dir);
  }
  std::sort(files.begin(), files.end());

  const Detector detector(cfg.detector);
  const WeightStore weights = load_checkpoint(checkpoint);

  std::vector<std::vector<DetectionInstance>> dets;
  std::vector<int> image_ids;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const Tensor image = read_ppm(files[i]);
    dets.push_back(detect_scene(detector, weights, image, cfg.postprocess));
    image_ids.push_back(static_cast<int>(i) + 1);
  }
  write_coco_detections(dets, image_ids, out_path);
  std::cerr << "wrote detections for " << files.size() << " images to "
            << out_path << "\n";
  return 0;
}

nlohmann::json eval_result_to_json(const EvalResult& r) {
  nlohmann::json j;
  j["map"] = r.map;
  j["map50"] = r.map50;
  j["map75"] = r.map75;
  j["map_small"] = r.map_small;
  j["map_medium"] = r.map_medium;
  j["map_large"] = r.map_large;
  j["ar100"] = r.ar100;
  j["ar_small"] = r.ar_small;
  j["ar_medium"] = r.ar_medium;
  j["ar_large"] = r.ar_large;
  j["categories"] = r.categories;
  j["per_category_ap"] = r.per_category_ap;
  return j;
}

int cmd_evaluate(const std::string& gt_path, const std::string& dets_path,
                 const std::string& out_path, const std::string& config_path) {
  EvalConfig eval_cfg;
  bool bands_from_image = false;
  if (!config_path.empty()) {
    const RunConfig cfg = load_run_config(config_path);
    eval_cfg = cfg.eval;
    bands_from_image = cfg.eval_bands_from_image_size;
  }

  const CocoGroundtruth gt = load_coco_groundtruth(gt_path);
  const auto dets = load_coco_detections(dets_path, gt.image_ids);
  std::vector<int> categories;
  for (const auto& c : gt.categories) categories.push_back(c.id);
  if (bands_from_image && !gt.image_sizes.empty()) {
    const EvalConfig scaled =
        eval_config_for_image_size(gt.image_sizes[0].first);
    eval_cfg.area_small_max = scaled.area_small_max;
    eval_cfg.area_medium_max = scaled.area_medium_max;
  }

  const EvalResult result = evaluate(gt.per_image, dets, categories, eval_cfg);
  const nlohmann::json j = eval_result_to_json(result);
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("evaluate: cannot open " + out_path);
    out << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_bench(const std::string& config_path, const std::string& out_path,
              int jobs) {
  const RunConfig cfg = load_run_config(config_path);
  if (cfg.sweep.empty() && !cfg.has_detector) {
    throw std::runtime_error("config: bench needs a sweep list or a detector");
  }
  require_section(cfg.has_dataset, "dataset");

  SweepSettings settings;
  settings.train_dataset = cfg.dataset;
  settings.eval_dataset = cfg.has_eval_dataset ? cfg.eval_dataset : cfg.dataset;
  if (!cfg.has_eval_dataset) {
    // Keep held-out evaluation scenes distinct from the training stream.
    settings.eval_dataset.seed = cfg.dataset.seed + 1000003;
  }
  settings.train = cfg.train;
  if (!cfg.has_train) settings.train.steps = 0;
  settings.postprocess = cfg.postprocess;
  settings.timing_images = cfg.timing_images;
  settings.timing_warmup = cfg.timing_warmup;
  settings.jobs = jobs;

  std::vector<SweepItem> items = cfg.sweep;
  if (items.empty()) {
    items.push_back(SweepItem{"config_0", cfg.detector});
  }
  const auto records = sweep(items, settings, out_path);
  std::cerr << "benchmarked " << records.size() << " configs into " << out_path
            << "\n";
  return 0;
}

int cmd_analyze(const std::string& records_path, const std::string& out_dir,
                std::string ap_vectors_path, int ensemble_size,
                double similarity_threshold) {
  const auto records = read_records_csv(records_path);
  write_analysis_tables(records, out_dir);

  if (ap_vectors_path.empty() &&
      fs::exists(records_path + ".apvectors.json")) {
    ap_vectors_path = records_path + ".apvectors.json";
  }
  if (!ap_vectors_path.empty()) {
    const auto ap_records = read_ap_vectors(ap_vectors_path);
    if (!ap_records.empty()) {
      std::vector<ModelAPVector> candidates;
      for (const auto& r : ap_records) {
        candidates.push_back(ModelAPVector{r.id, r.map, r.per_category_ap});
      }
      const auto selected = select_diverse_ensemble(candidates, ensemble_size,
                                                    similarity_threshold);
      std::ofstream out(out_dir + "/ensemble.csv", std::ios::binary);
      if (!out) throw std::runtime_error("analyze: cannot open ensemble.csv");
      out << "rank,config_id\n";
      for (std::size_t i = 0; i < selected.size(); ++i) {
        out << i + 1 << "," << selected[i] << "\n";
      }
    }
  }
  std::cerr << "analysis tables written to " << out_dir << "\n";
  return 0;
}

int cmd_report(const std::string& records_path, const std::string& out_dir) {
  const auto records = read_records_csv(records_path);
  emit_report(records, out_dir);
  std::cerr << "report written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speed/accuracy benchmarking for miniature anchor-based detectors"};
  app.require_subcommand(1);

  std::string config_path, out_path, images_dir, checkpoint_path, gt_path;
  std::string dets_path, records_path, loss_csv, ap_vectors_path;
  std::uint64_t seed_value = 0;
  bool seed_given = false;
  int jobs = 1;
  int ensemble_size = 5;
  double similarity_threshold = 0.95;

  auto* defaults = app.add_subcommand(
      "print-defaults", "Print the config file schema with default values");

  auto* gen = app.add_subcommand("gen-data",
                                 "Generate synthetic scenes and COCO-style "
                                 "groundtruth JSON");
  gen->add_option("--config", config_path, "Run config JSON")->required();
  gen->add_option("--out", out_path, "Output directory")->required();
  gen->add_option("--seed", seed_value, "Override dataset seed (default: from config)")
      ->each([&](const std::string&) { seed_given = true; });

  auto* train_cmd = app.add_subcommand(
      "train", "Train predictor heads; writes a checkpoint and a loss CSV");
  train_cmd->add_option("--config", config_path, "Run config JSON")->required();
  train_cmd->add_option("--out", out_path, "Checkpoint path")->required();
  train_cmd->add_option("--loss-csv", loss_csv,
                        "Loss trace CSV (default: <out>.loss.csv)");
  train_cmd
      ->add_option("--seed", seed_value, "Override train seed (default: from config)")
      ->each([&](const std::string&) { seed_given = true; });

  auto* detect_cmd = app.add_subcommand(
      "detect", "Run a detector over PPM images; writes COCO detections JSON");
  detect_cmd->add_option("--config", config_path, "Run config JSON")->required();
  detect_cmd->add_option("--checkpoint", checkpoint_path, "Weight checkpoint")
      ->required();
  detect_cmd->add_option("--images", images_dir, "Directory of .ppm images")
      ->required();
  detect_cmd->add_option("--out", out_path, "Detections JSON path")->required();

  auto* eval_cmd = app.add_subcommand(
      "evaluate", "Evaluate COCO detections against groundtruth");
  eval_cmd->add_option("--gt", gt_path, "Groundtruth COCO JSON")->required();
  eval_cmd->add_option("--dets", dets_path, "Detections COCO JSON")->required();
  eval_cmd->add_option("--out", out_path, "Result JSON path (default: stdout)");
  eval_cmd->add_option("--config", config_path,
                       "Run config JSON with an eval section");

  auto* bench_cmd = app.add_subcommand(
      "bench", "Sweep configurations; appends records to a CSV (resumable)");
  bench_cmd->add_option("--config", config_path, "Run config JSON with sweep")
      ->required();
  bench_cmd->add_option("--out", out_path, "Records CSV path")->required();
  bench_cmd->add_option("--jobs", jobs, "Worker cap for per-image evaluation");

  auto* analyze_cmd = app.add_subcommand(
      "analyze", "Derive frontier/correlation/efficiency tables from records");
  analyze_cmd->add_option("--records", records_path, "Records CSV")->required();
  analyze_cmd->add_option("--out", out_path, "Output directory")->required();
  analyze_cmd->add_option("--ap-vectors", ap_vectors_path,
                          "AP vector JSON (default: <records>.apvectors.json)");
  analyze_cmd->add_option("--ensemble-size", ensemble_size,
                          "Diverse ensemble size (default 5)");
  analyze_cmd->add_option("--similarity-threshold", similarity_threshold,
                          "Cosine similarity pruning threshold (default 0.95)");

  auto* report_cmd = app.add_subcommand(
      "report", "Emit SVG scatter plots and companion CSV tables");
  report_cmd->add_option("--records", records_path, "Records CSV")->required();
  report_cmd->add_option("--out", out_path, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  const std::optional<std::uint64_t> seed =
      seed_given ? std::optional<std::uint64_t>(seed_value) : std::nullopt;

  try {
    if (defaults->parsed()) {
      std::cout << run_config_defaults_json() << "\n";
      return 0;
    }
    if (gen->parsed()) return cmd_gen_data(config_path, out_path, seed);
    if (train_cmd->parsed()) {
      return cmd_train(config_path, out_path, loss_csv, seed);
    }
    if (detect_cmd->parsed()) {
      return cmd_detect(config_path, checkpoint_path, images_dir, out_path);
    }
    if (eval_cmd->parsed()) {
      return cmd_evaluate(gt_path, dets_path, out_path, config_path);
    }
    if (bench_cmd->parsed()) return cmd_bench(config_path, out_path, jobs);
    if (analyze_cmd->parsed()) {
      return cmd_analyze(records_path, out_path, ap_vectors_path, ensemble_size,
                         similarity_threshold);
    }
    if (report_cmd->parsed()) return cmd_report(records_path, out_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
