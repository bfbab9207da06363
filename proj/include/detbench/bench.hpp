#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detbench/data.hpp"
#include "detbench/eval.hpp"
#include "detbench/model.hpp"
#include "detbench/postprocess.hpp"
#include "detbench/train.hpp"

namespace detbench {

// One row of the benchmark CSV. Column order is fixed:
//   config_id, meta_arch, extractor, resolution, stride, num_proposals,
//   map, map50, map75, map_s, map_m, map_l, ar100,
//   time_ms_mean, time_ms_std, flops, memory_bytes, params
struct BenchmarkRecord {
  std::string config_id;
  std::string meta_arch;
  std::string extractor;
  int resolution = 0;
  int stride = 0;
  int num_proposals = 0;
  double map = 0.0;
  double map50 = 0.0;
  double map75 = 0.0;
  double map_s = 0.0;
  double map_m = 0.0;
  double map_l = 0.0;
  double ar100 = 0.0;
  double time_ms_mean = 0.0;
  double time_ms_std = 0.0;
  std::int64_t flops = 0;
  std::int64_t memory_bytes = 0;
  std::int64_t params = 0;
};

extern const char* kBenchCsvHeader;

std::string format_record(const BenchmarkRecord& r);
BenchmarkRecord parse_record(const std::string& line);

// Reads a records CSV; a trailing partially-written row is dropped (and the
// file truncated) so an interrupted sweep can resume cleanly.
std::vector<BenchmarkRecord> read_records_csv(const std::string& path,
                                              bool repair = false);
void write_records_csv(const std::vector<BenchmarkRecord>& records,
                       const std::string& path);

struct TimingStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;  // sample standard deviation; 0 when n < 2
  int n = 0;
};

// Per-image wallclock latency of forward pass plus postprocessing, averaged
// over n images after discarding warmup runs. The measured region runs under
// a global lock so concurrent callers never time against each other.
TimingStats time_model(const Detector& detector, const WeightStore& weights,
                       const std::vector<Tensor>& images,
                       const FinalizeConfig& post, int warmup, int n);

struct SweepItem {
  std::string config_id;
  DetectorConfig detector;
};

struct SweepSettings {
  DatasetSpec train_dataset;  // image_size follows each config
  DatasetSpec eval_dataset;
  TrainConfig train;  // steps == 0 benchmarks freshly initialized weights
  FinalizeConfig postprocess;
  int timing_images = 50;
  int timing_warmup = 5;
  int jobs = 1;
};

struct ApVectorRecord {
  std::string id;
  double map = 0.0;
  std::vector<int> categories;
  std::vector<double> per_category_ap;
};

// Trains (optionally), evaluates, times, and cost-models each configuration,
// appending one CSV row per config as it completes. Config ids already present
// in the output file are skipped, making an interrupted sweep resumable
// without duplicate rows. Per-category AP vectors are kept alongside in
// out_csv + ".apvectors.json". Returns all records in the file.
std::vector<BenchmarkRecord> sweep(const std::vector<SweepItem>& items,
                                   const SweepSettings& settings,
                                   const std::string& out_csv);

// Raw-output conversion: one scored detection per (anchor/proposal,
// foreground class), scored by the class's softmax probability.
std::vector<ScoredDetection> to_scored_detections(const RawDetections& raw);

// Runs one detector over a scene and finalizes the detections.
std::vector<DetectionInstance> detect_scene(const Detector& detector,
                                            const WeightStore& weights,
                                            const Tensor& image,
                                            const FinalizeConfig& post);

void write_ap_vectors(const std::vector<ApVectorRecord>& records,
                      const std::string& path);
std::vector<ApVectorRecord> read_ap_vectors(const std::string& path);

}  // namespace detbench
