#pragma once

#include <span>
#include <string>
#include <vector>

#include "detbench/bench.hpp"

namespace detbench {

// True for records not strictly dominated in (lower time, higher map):
// r is dominated iff some other record has time <= and map >= with at least
// one strict inequality.
std::vector<char> frontier_flags(std::span<const BenchmarkRecord> records);

// The non-dominated subset, sorted by time (map is then non-decreasing).
std::vector<BenchmarkRecord> pareto_frontier(
    std::span<const BenchmarkRecord> records);

// mAP percentage points per millisecond.
double bang_for_buck(double map, double time_ms);
double bang_for_buck(const BenchmarkRecord& r);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Least squares y = slope x + intercept. Requires at least two distinct xs.
// For constant ys, r2 is 1 when the residuals vanish and 0 otherwise.
LinearFit linear_fit_r2(std::span<const double> xs, std::span<const double> ys);

struct GroupRatio {
  std::string group;
  double mean_ratio = 0.0;
};

// Mean flops / (time_ms * 1e6) per extractor, groups ordered by first
// appearance in the records.
std::vector<GroupRatio> flops_time_ratio(std::span<const BenchmarkRecord> records);

struct ModelAPVector {
  std::string id;
  double map = 0.0;
  std::vector<double> per_category_ap;
};

// Greedy selection by validation map (ties toward the lower id): a candidate
// is pruned iff its per-category AP vector has cosine similarity above the
// threshold with any already selected model. Stops at k models or exhaustion.
std::vector<std::string> select_diverse_ensemble(
    std::vector<ModelAPVector> candidates, int k, double similarity_threshold);

// CSV tables derived from the records: derived.csv (records plus on_frontier
// and bang_for_buck), frontier.csv, bang_for_buck.csv, flops_time_ratio.csv,
// correlations.csv (map50/map75 against map).
void write_analysis_tables(std::span<const BenchmarkRecord> records,
                           const std::string& out_dir);

// Scatter plots (map/flops/memory vs time with the frontier polyline,
// map50/map75 vs map) as deterministic SVG, next to their companion CSVs.
void emit_report(std::span<const BenchmarkRecord> records,
                 const std::string& out_dir);

}  // namespace detbench
