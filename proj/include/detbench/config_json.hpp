#pragma once

#include <optional>
#include <string>
#include <vector>

#include "detbench/bench.hpp"
#include "detbench/data.hpp"
#include "detbench/eval.hpp"
#include "detbench/model.hpp"
#include "detbench/postprocess.hpp"
#include "detbench/train.hpp"

namespace detbench {

// Parsed form of the JSON run-configuration file. Every section is optional;
// subcommands check for the ones they need. Unknown keys are rejected at every
// level, and a top-level "schema_version": 1 is required.
struct RunConfig {
  DetectorConfig detector;
  bool has_detector = false;

  TrainConfig train;
  bool has_train = false;

  DatasetSpec dataset;
  bool has_dataset = false;

  DatasetSpec eval_dataset;
  bool has_eval_dataset = false;

  FinalizeConfig postprocess;

  EvalConfig eval;
  bool eval_bands_from_image_size = false;

  int timing_images = 50;
  int timing_warmup = 5;

  std::vector<SweepItem> sweep;
};

RunConfig load_run_config(const std::string& path);

// Documented defaults, printed by the CLI and mirrored in the README.
std::string run_config_defaults_json();

}  // namespace detbench
