#include "detbench/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace detbench {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("analysis: cannot open " + path);
  return out;
}

}  // namespace

std::vector<char> frontier_flags(std::span<const BenchmarkRecord> records) {
  std::vector<char> flags(records.size(), 1);
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t j = 0; j < records.size(); ++j) {
      if (i == j) continue;
      const bool leq = records[j].time_ms_mean <= records[i].time_ms_mean;
      const bool geq = records[j].map >= records[i].map;
      const bool strict = records[j].time_ms_mean < records[i].time_ms_mean ||
                          records[j].map > records[i].map;
      if (leq && geq && strict) {
        flags[i] = 0;
        break;
      }
    }
  }
  return flags;
}

std::vector<BenchmarkRecord> pareto_frontier(
    std::span<const BenchmarkRecord> records) {
  const std::vector<char> flags = frontier_flags(records);
  std::vector<BenchmarkRecord> frontier;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (flags[i]) frontier.push_back(records[i]);
  }
  std::stable_sort(frontier.begin(), frontier.end(),
                   [](const BenchmarkRecord& a, const BenchmarkRecord& b) {
                     if (a.time_ms_mean != b.time_ms_mean) {
                       return a.time_ms_mean < b.time_ms_mean;
                     }
                     if (a.map != b.map) return a.map < b.map;
                     return a.config_id < b.config_id;
                   });
  return frontier;
}

double bang_for_buck(double map, double time_ms) {
  if (time_ms <= 0.0) {
    throw std::invalid_argument("bang_for_buck: time must be positive");
  }
  return 100.0 * map / time_ms;
}

double bang_for_buck(const BenchmarkRecord& r) {
  return bang_for_buck(r.map, r.time_ms_mean);
}

LinearFit linear_fit_r2(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw std::invalid_argument("linear_fit: need >= 2 paired points");
  }
  const double n = static_cast<double>(xs.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0) {
    throw std::invalid_argument("linear_fit: xs must not be constant");
  }
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (fit.slope * xs[i] + fit.intercept);
    ss_res += r * r;
  }
  if (syy == 0.0) {
    fit.r2 = ss_res == 0.0 ? 1.0 : 0.0;
  } else {
    fit.r2 = 1.0 - ss_res / syy;
  }
  return fit;
}

std::vector<GroupRatio> flops_time_ratio(
    std::span<const BenchmarkRecord> records) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, int>> sums;
  for (const auto& r : records) {
    if (!sums.count(r.extractor)) order.push_back(r.extractor);
    auto& [sum, count] = sums[r.extractor];
    sum += static_cast<double>(r.flops) / (r.time_ms_mean * 1e6);
    count += 1;
  }
  std::vector<GroupRatio> out;
  for (const auto& g : order) {
    out.push_back(GroupRatio{g, sums[g].first / sums[g].second});
  }
  return out;
}

std::vector<std::string> select_diverse_ensemble(
    std::vector<ModelAPVector> candidates, int k, double similarity_threshold) {
  if (candidates.empty()) {
    throw std::invalid_argument("select_diverse_ensemble: no candidates");
  }
  if (k < 1) throw std::invalid_argument("select_diverse_ensemble: k >= 1");
  if (similarity_threshold <= 0.0 || similarity_threshold >= 1.0) {
    throw std::invalid_argument("select_diverse_ensemble: threshold in (0, 1)");
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const ModelAPVector& a, const ModelAPVector& b) {
              if (a.map != b.map) return a.map > b.map;
              return a.id < b.id;
            });

  auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    if (na == 0.0 && nb == 0.0) return 1.0;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
  };

  std::vector<std::string> selected_ids;
  std::vector<const ModelAPVector*> selected;
  for (const auto& cand : candidates) {
    if (static_cast<int>(selected.size()) >= k) break;
    bool pruned = false;
    for (const auto* s : selected) {
      if (cand.per_category_ap.size() != s->per_category_ap.size()) {
        throw std::invalid_argument(
            "select_diverse_ensemble: mismatched AP vector lengths");
      }
      if (cosine(cand.per_category_ap, s->per_category_ap) >
          similarity_threshold) {
        pruned = true;
        break;
      }
    }
    if (!pruned) {
      selected.push_back(&cand);
      selected_ids.push_back(cand.id);
    }
  }
  return selected_ids;
}

namespace {

struct PlotPoint {
  double x = 0.0;
  double y = 0.0;
  std::string marker;  // circle | square | triangle | diamond
  std::string color;
  std::string id;
};

std::string marker_for(const std::string& meta_arch) {
  if (meta_arch == "ssd") return "circle";
  if (meta_arch == "faster_rcnn") return "square";
  if (meta_arch == "rfcn") return "triangle";
  return "diamond";
}

std::string color_for(const std::string& extractor) {
  if (extractor == "dense_tiny") return "#1f77b4";
  if (extractor == "separable_tiny") return "#d62728";
  return "#7f7f7f";
}

void write_svg_scatter(const std::string& path, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       const std::vector<PlotPoint>& points,
                       const std::vector<std::pair<double, double>>& polyline,
                       const std::vector<std::pair<std::string, std::string>>&
                           legend) {  // (label, color)
  constexpr double kWidth = 760, kHeight = 560;
  constexpr double kLeft = 80, kRight = 24, kTop = 48, kBottom = 64;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;

  double x_max = 0.0, y_max = 0.0;
  for (const auto& p : points) {
    x_max = std::max(x_max, p.x);
    y_max = std::max(y_max, p.y);
  }
  for (const auto& [x, y] : polyline) {
    x_max = std::max(x_max, x);
    y_max = std::max(y_max, y);
  }
  if (x_max <= 0.0) x_max = 1.0;
  if (y_max <= 0.0) y_max = 1.0;
  x_max *= 1.05;
  y_max *= 1.05;

  auto px = [&](double x) { return kLeft + x / x_max * plot_w; };
  auto py = [&](double y) { return kTop + plot_h - y / y_max * plot_h; };

  std::ofstream out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " "
      << kHeight << "\">\n";
  out << "<rect width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" fill=\"#ffffff\"/>\n";
  out << "<text x=\"" << kWidth / 2
      << "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">"
      << title << "</text>\n";

  // Axes with five ticks each.
  for (int i = 0; i <= 4; ++i) {
    const double xv = x_max * i / 4.0;
    const double yv = y_max * i / 4.0;
    out << "<line x1=\"" << fmt2(px(xv)) << "\" y1=\"" << fmt2(kTop)
        << "\" x2=\"" << fmt2(px(xv)) << "\" y2=\"" << fmt2(kTop + plot_h)
        << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    out << "<line x1=\"" << fmt2(kLeft) << "\" y1=\"" << fmt2(py(yv))
        << "\" x2=\"" << fmt2(kLeft + plot_w) << "\" y2=\"" << fmt2(py(yv))
        << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fmt2(px(xv)) << "\" y=\"" << fmt2(kTop + plot_h + 20)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << fmt_tick(xv) << "</text>\n";
    out << "<text x=\"" << fmt2(kLeft - 8) << "\" y=\"" << fmt2(py(yv) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << fmt_tick(yv) << "</text>\n";
  }
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w
      << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"#404040\" stroke-width=\"1\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">"
      << x_label << "</text>\n";
  out << "<text x=\"20\" y=\"" << kTop + plot_h / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" transform=\"rotate(-90 20 "
      << kTop + plot_h / 2 << ")\">" << y_label << "</text>\n";

  if (!polyline.empty()) {
    out << "<polyline fill=\"none\" stroke=\"#888888\" stroke-width=\"1.5\" "
           "stroke-dasharray=\"6 3\" points=\"";
    for (std::size_t i = 0; i < polyline.size(); ++i) {
      if (i) out << " ";
      out << fmt2(px(polyline[i].first)) << "," << fmt2(py(polyline[i].second));
    }
    out << "\"/>\n";
  }

  for (const auto& p : points) {
    const double cx = px(p.x), cy = py(p.y);
    if (p.marker == "circle") {
      out << "<circle cx=\"" << fmt2(cx) << "\" cy=\"" << fmt2(cy)
          << "\" r=\"5\" fill=\"" << p.color << "\"/>\n";
    } else if (p.marker == "square") {
      out << "<rect x=\"" << fmt2(cx - 4.5) << "\" y=\"" << fmt2(cy - 4.5)
          << "\" width=\"9\" height=\"9\" fill=\"" << p.color << "\"/>\n";
    } else if (p.marker == "triangle") {
      out << "<polygon points=\"" << fmt2(cx) << "," << fmt2(cy - 5.5) << " "
          << fmt2(cx - 5) << "," << fmt2(cy + 4.5) << " " << fmt2(cx + 5) << ","
          << fmt2(cy + 4.5) << "\" fill=\"" << p.color << "\"/>\n";
    } else {
      out << "<polygon points=\"" << fmt2(cx) << "," << fmt2(cy - 5.5) << " "
          << fmt2(cx + 5.5) << "," << fmt2(cy) << " " << fmt2(cx) << ","
          << fmt2(cy + 5.5) << " " << fmt2(cx - 5.5) << "," << fmt2(cy)
          << "\" fill=\"" << p.color << "\"/>\n";
    }
  }

  double ly = kTop + 14;
  for (const auto& [label, color] : legend) {
    out << "<circle cx=\"" << fmt2(kLeft + 12) << "\" cy=\"" << fmt2(ly - 4)
        << "\" r=\"5\" fill=\"" << color << "\"/>\n";
    out << "<text x=\"" << fmt2(kLeft + 24) << "\" y=\"" << fmt2(ly)
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << label
        << "</text>\n";
    ly += 16;
  }
  out << "</svg>\n";
}

void write_plot_csv(const std::string& path,
                    const std::vector<PlotPoint>& points, const char* x_name,
                    const char* y_name) {
  std::ofstream out = open_out(path);
  out << "config_id," << x_name << "," << y_name << "\n";
  for (const auto& p : points) {
    out << p.id << "," << fmt(p.x) << "," << fmt(p.y) << "\n";
  }
}

std::vector<std::pair<std::string, std::string>> legend_for(
    std::span<const BenchmarkRecord> records) {
  std::vector<std::pair<std::string, std::string>> legend;
  std::vector<std::string> seen;
  for (const auto& r : records) {
    const std::string label = r.meta_arch + " / " + r.extractor;
    if (std::find(seen.begin(), seen.end(), label) == seen.end()) {
      seen.push_back(label);
      legend.emplace_back(label, color_for(r.extractor));
    }
  }
  return legend;
}

}  // namespace

void write_analysis_tables(std::span<const BenchmarkRecord> records,
                           const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::vector<char> flags = frontier_flags(records);

  {
    auto out = open_out(out_dir + "/derived.csv");
    out << kBenchCsvHeader << ",on_frontier,bang_for_buck\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
      out << format_record(records[i]) << "," << (flags[i] ? 1 : 0) << ","
          << fmt(bang_for_buck(records[i])) << "\n";
    }
  }
  {
    auto out = open_out(out_dir + "/frontier.csv");
    out << kBenchCsvHeader << "\n";
    for (const auto& r : pareto_frontier(records)) {
      out << format_record(r) << "\n";
    }
  }
  {
    auto out = open_out(out_dir + "/bang_for_buck.csv");
    out << "config_id,map,time_ms_mean,bang_for_buck\n";
    for (const auto& r : records) {
      out << r.config_id << "," << fmt(r.map) << "," << fmt(r.time_ms_mean)
          << "," << fmt(bang_for_buck(r)) << "\n";
    }
  }
  {
    auto out = open_out(out_dir + "/flops_time_ratio.csv");
    out << "extractor,mean_flops_per_ns\n";
    for (const auto& g : flops_time_ratio(records)) {
      out << g.group << "," << fmt(g.mean_ratio) << "\n";
    }
  }
  {
    auto out = open_out(out_dir + "/correlations.csv");
    out << "metric,slope,intercept,r2\n";
    std::vector<double> xs, y50, y75;
    for (const auto& r : records) {
      xs.push_back(r.map);
      y50.push_back(r.map50);
      y75.push_back(r.map75);
    }
    const bool distinct =
        xs.size() >= 2 &&
        *std::max_element(xs.begin(), xs.end()) >
            *std::min_element(xs.begin(), xs.end());
    if (distinct) {
      const LinearFit f50 = linear_fit_r2(xs, y50);
      const LinearFit f75 = linear_fit_r2(xs, y75);
      out << "map50_vs_map," << fmt(f50.slope) << "," << fmt(f50.intercept)
          << "," << fmt(f50.r2) << "\n";
      out << "map75_vs_map," << fmt(f75.slope) << "," << fmt(f75.intercept)
          << "," << fmt(f75.r2) << "\n";
    }
  }
}

void emit_report(std::span<const BenchmarkRecord> records,
                 const std::string& out_dir) {
  if (records.empty()) {
    throw std::invalid_argument("emit_report: no records");
  }
  std::filesystem::create_directories(out_dir);
  write_analysis_tables(records, out_dir);

  const auto legend = legend_for(records);
  const std::vector<BenchmarkRecord> frontier = pareto_frontier(records);
  std::vector<std::pair<double, double>> frontier_line;
  for (const auto& r : frontier) {
    frontier_line.emplace_back(r.time_ms_mean, r.map);
  }

  auto points_of = [&](auto x_of, auto y_of) {
    std::vector<PlotPoint> pts;
    for (const auto& r : records) {
      pts.push_back(PlotPoint{x_of(r), y_of(r), marker_for(r.meta_arch),
                              color_for(r.extractor), r.config_id});
    }
    return pts;
  };

  {
    const auto pts = points_of(
        [](const BenchmarkRecord& r) { return r.time_ms_mean; },
        [](const BenchmarkRecord& r) { return r.map; });
    write_svg_scatter(out_dir + "/map_vs_time.svg", "Accuracy vs time",
                      "time (ms)", "mAP", pts, frontier_line, legend);
    write_plot_csv(out_dir + "/map_vs_time.csv", pts, "time_ms_mean", "map");
  }
  {
    const auto pts = points_of(
        [](const BenchmarkRecord& r) { return r.time_ms_mean; },
        [](const BenchmarkRecord& r) { return static_cast<double>(r.flops); });
    write_svg_scatter(out_dir + "/flops_vs_time.svg", "FLOPs vs time",
                      "time (ms)", "multiply-adds", pts, {}, legend);
    write_plot_csv(out_dir + "/flops_vs_time.csv", pts, "time_ms_mean", "flops");
  }
  {
    const auto pts = points_of(
        [](const BenchmarkRecord& r) { return r.time_ms_mean; },
        [](const BenchmarkRecord& r) {
          return static_cast<double>(r.memory_bytes);
        });
    write_svg_scatter(out_dir + "/memory_vs_time.svg", "Memory vs time",
                      "time (ms)", "memory (bytes)", pts, {}, legend);
    write_plot_csv(out_dir + "/memory_vs_time.csv", pts, "time_ms_mean",
                   "memory_bytes");
  }
  {
    std::vector<PlotPoint> pts;
    for (const auto& r : records) {
      pts.push_back(PlotPoint{r.map, r.map50, "circle", "#1f77b4", r.config_id});
      pts.push_back(PlotPoint{r.map, r.map75, "square", "#d62728", r.config_id});
    }
    write_svg_scatter(out_dir + "/map50_75_vs_map.svg",
                      "mAP at fixed IOU vs overall mAP", "mAP", "mAP at IOU",
                      pts, {},
                      {{"mAP@.5", "#1f77b4"}, {"mAP@.75", "#d62728"}});
    write_plot_csv(out_dir + "/map50_75_vs_map.csv", pts, "map", "map_at_iou");
  }
}

}  // namespace detbench
