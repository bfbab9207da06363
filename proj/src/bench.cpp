#include "detbench/bench.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace detbench {

const char* kBenchCsvHeader =
    "config_id,meta_arch,extractor,resolution,stride,num_proposals,"
    "map,map50,map75,map_s,map_m,map_l,ar100,"
    "time_ms_mean,time_ms_std,flops,memory_bytes,params";

namespace {

constexpr int kBenchColumns = 18;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

// Runs fn(i) for i in [0, n) across up to `jobs` threads; every call is
// independent and results land by index, so thread count never changes output.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (int t = 0; t < jobs; ++t) {
    workers.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& w : workers) w.join();
}

std::mutex g_timing_mutex;

}  // namespace

std::string format_record(const BenchmarkRecord& r) {
  std::ostringstream out;
  out << r.config_id << ',' << r.meta_arch << ',' << r.extractor << ','
      << r.resolution << ',' << r.stride << ',' << r.num_proposals << ','
      << fmt(r.map) << ',' << fmt(r.map50) << ',' << fmt(r.map75) << ','
      << fmt(r.map_s) << ',' << fmt(r.map_m) << ',' << fmt(r.map_l) << ','
      << fmt(r.ar100) << ',' << fmt(r.time_ms_mean) << ',' << fmt(r.time_ms_std)
      << ',' << r.flops << ',' << r.memory_bytes << ',' << r.params;
  return out.str();
}

BenchmarkRecord parse_record(const std::string& line) {
  const std::vector<std::string> f = split_csv(line);
  if (f.size() != kBenchColumns) {
    throw std::runtime_error("records csv: expected 18 fields, got " +
                             std::to_string(f.size()));
  }
  BenchmarkRecord r;
  r.config_id = f[0];
  r.meta_arch = f[1];
  r.extractor = f[2];
  r.resolution = std::stoi(f[3]);
  r.stride = std::stoi(f[4]);
  r.num_proposals = std::stoi(f[5]);
  r.map = std::stod(f[6]);
  r.map50 = std::stod(f[7]);
  r.map75 = std::stod(f[8]);
  r.map_s = std::stod(f[9]);
  r.map_m = std::stod(f[10]);
  r.map_l = std::stod(f[11]);
  r.ar100 = std::stod(f[12]);
  r.time_ms_mean = std::stod(f[13]);
  r.time_ms_std = std::stod(f[14]);
  r.flops = std::stoll(f[15]);
  r.memory_bytes = std::stoll(f[16]);
  r.params = std::stoll(f[17]);
  return r;
}

std::vector<BenchmarkRecord> read_records_csv(const std::string& path,
                                              bool repair) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("records csv: cannot open " + path);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  in.close();

  std::vector<std::string> lines;
  std::string cur;
  bool last_complete = true;
  for (char c : content) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) {
    lines.push_back(cur);
    last_complete = false;
  }
  if (lines.empty() || lines[0] != kBenchCsvHeader) {
    throw std::runtime_error("records csv: missing or wrong header in " + path);
  }

  std::vector<BenchmarkRecord> records;
  bool truncated = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const bool is_last = i + 1 == lines.size();
    try {
      if (is_last && !last_complete) throw std::runtime_error("partial row");
      records.push_back(parse_record(lines[i]));
    } catch (const std::exception&) {
      if (!is_last) throw;  // corruption in the middle is not recoverable
      truncated = true;
    }
  }
  if (truncated && repair) {
    write_records_csv(records, path);
  }
  return records;
}

void write_records_csv(const std::vector<BenchmarkRecord>& records,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("records csv: cannot open " + path);
  out << kBenchCsvHeader << "\n";
  for (const auto& r : records) out << format_record(r) << "\n";
}

TimingStats time_model(const Detector& detector, const WeightStore& weights,
                       const std::vector<Tensor>& images,
                       const FinalizeConfig& post, int warmup, int n) {
  if (n < 1) throw std::invalid_argument("time_model: n must be >= 1");
  if (images.empty()) throw std::invalid_argument("time_model: no images");
  const double m = detector.config().input_size;
  const Box window{0.0, 0.0, m, m};

  std::lock_guard<std::mutex> lock(g_timing_mutex);
  using Clock = std::chrono::steady_clock;

  auto run_once = [&](const Tensor& image) {
    const DetectionOutput out = detector.run(image, weights);
    const auto scored = to_scored_detections(out.raw);
    volatile std::size_t sink = finalize(scored, window, post).size();
    (void)sink;
  };

  for (int i = 0; i < warmup; ++i) run_once(images[i % images.size()]);

  std::vector<double> samples;
  samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Tensor& image = images[i % images.size()];
    const auto t0 = Clock::now();
    run_once(image);
    const auto t1 = Clock::now();
    samples.push_back(
        std::chrono::duration<double, std::milli>(t1 - t0).count());
  }

  TimingStats stats;
  stats.n = n;
  double sum = 0.0;
  for (double s : samples) sum += s;
  stats.mean_ms = sum / n;
  if (n >= 2) {
    double var = 0.0;
    for (double s : samples) var += (s - stats.mean_ms) * (s - stats.mean_ms);
    stats.std_ms = std::sqrt(var / (n - 1));
  }
  return stats;
}

std::vector<ScoredDetection> to_scored_detections(const RawDetections& raw) {
  std::vector<ScoredDetection> out;
  for (std::size_t i = 0; i < raw.boxes.size(); ++i) {
    const auto& probs = raw.class_probs[i];
    for (std::size_t c = 1; c < probs.size(); ++c) {
      out.push_back(ScoredDetection{raw.boxes[i], static_cast<int>(c), probs[c]});
    }
  }
  return out;
}

std::vector<DetectionInstance> detect_scene(const Detector& detector,
                                            const WeightStore& weights,
                                            const Tensor& image,
                                            const FinalizeConfig& post) {
  const double m = detector.config().input_size;
  const Box window{0.0, 0.0, m, m};
  const DetectionOutput out = detector.run(image, weights);
  const auto final_dets = finalize(to_scored_detections(out.raw), window, post);
  std::vector<DetectionInstance> result;
  result.reserve(final_dets.size());
  for (const auto& d : final_dets) {
    result.push_back(DetectionInstance{d.box, d.class_id, d.score});
  }
  return result;
}

void write_ap_vectors(const std::vector<ApVectorRecord>& records,
                      const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : records) {
    j.push_back({{"id", r.id},
                 {"map", r.map},
                 {"categories", r.categories},
                 {"per_category_ap", r.per_category_ap}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("ap vectors: cannot open " + path);
  out << j.dump(2) << "\n";
}

std::vector<ApVectorRecord> read_ap_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ap vectors: cannot open " + path);
  nlohmann::json j;
  in >> j;
  std::vector<ApVectorRecord> records;
  for (const auto& e : j) {
    ApVectorRecord r;
    r.id = e.at("id").get<std::string>();
    r.map = e.at("map").get<double>();
    r.categories = e.at("categories").get<std::vector<int>>();
    r.per_category_ap = e.at("per_category_ap").get<std::vector<double>>();
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<BenchmarkRecord> sweep(const std::vector<SweepItem>& items,
                                   const SweepSettings& settings,
                                   const std::string& out_csv) {
  std::set<std::string> ids;
  for (const auto& item : items) {
    if (!ids.insert(item.config_id).second) {
      throw std::invalid_argument("sweep: duplicate config id " + item.config_id);
    }
  }

  std::vector<BenchmarkRecord> done;
  std::set<std::string> done_ids;
  if (std::filesystem::exists(out_csv)) {
    done = read_records_csv(out_csv, /*repair=*/true);
    for (const auto& r : done) done_ids.insert(r.config_id);
  } else {
    write_records_csv({}, out_csv);
  }

  const std::string ap_path = out_csv + ".apvectors.json";
  std::vector<ApVectorRecord> ap_records;
  if (std::filesystem::exists(ap_path)) {
    ap_records = read_ap_vectors(ap_path);
  }

  std::ofstream out(out_csv, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("sweep: cannot open " + out_csv);

  for (const auto& item : items) {
    if (done_ids.count(item.config_id)) continue;
    const DetectorConfig& cfg = item.detector;
    const Detector detector(cfg);

    // The dataset specs track each configuration's input resolution; shape
    // layouts depend only on the seed, so resolutions see the same scenes.
    DatasetSpec train_spec = settings.train_dataset;
    train_spec.image_size = cfg.input_size;
    DatasetSpec eval_spec = settings.eval_dataset;
    eval_spec.image_size = cfg.input_size;

    WeightStore weights;
    if (settings.train.steps > 0) {
      weights = train_head(cfg, settings.train, generate_dataset(train_spec)).weights;
    } else {
      weights = detector.init_weights(cfg.weight_seed);
    }

    const std::vector<Scene> eval_scenes = generate_dataset(eval_spec);
    std::vector<std::vector<GroundtruthInstance>> gts(eval_scenes.size());
    std::vector<std::vector<DetectionInstance>> dets(eval_scenes.size());
    parallel_for(static_cast<int>(eval_scenes.size()), settings.jobs, [&](int i) {
      gts[i] = eval_scenes[i].gts;
      dets[i] = detect_scene(detector, weights, eval_scenes[i].image,
                             settings.postprocess);
    });
    const EvalResult eval_result = evaluate(
        gts, dets, eval_spec.classes, eval_config_for_image_size(cfg.input_size));

    std::vector<Tensor> timing_images;
    const int t_imgs = std::max(1, std::min<int>(settings.timing_images,
                                                 static_cast<int>(eval_scenes.size())));
    for (int i = 0; i < t_imgs; ++i) timing_images.push_back(eval_scenes[i].image);
    const TimingStats timing =
        time_model(detector, weights, timing_images, settings.postprocess,
                   settings.timing_warmup, settings.timing_images);

    const CostReport cost = cost_model(cfg);

    BenchmarkRecord r;
    r.config_id = item.config_id;
    r.meta_arch = to_string(cfg.meta_arch);
    r.extractor = to_string(cfg.extractor);
    r.resolution = cfg.input_size;
    r.stride = cfg.output_stride;
    r.num_proposals =
        cfg.meta_arch == MetaArchitecture::SSD ? 0 : cfg.num_proposals;
    r.map = eval_result.map;
    r.map50 = eval_result.map50;
    r.map75 = eval_result.map75;
    r.map_s = eval_result.map_small;
    r.map_m = eval_result.map_medium;
    r.map_l = eval_result.map_large;
    r.ar100 = eval_result.ar100;
    r.time_ms_mean = timing.mean_ms;
    r.time_ms_std = timing.std_ms;
    r.flops = cost.total_flops;
    r.memory_bytes = cost.memory_bytes;
    r.params = cost.params;

    out << format_record(r) << "\n";
    out.flush();
    done.push_back(r);

    ApVectorRecord ap;
    ap.id = item.config_id;
    ap.map = eval_result.map;
    ap.categories = eval_result.categories;
    ap.per_category_ap = eval_result.per_category_ap;
    ap_records.push_back(std::move(ap));
    write_ap_vectors(ap_records, ap_path);
  }
  return done;
}

}  // namespace detbench
