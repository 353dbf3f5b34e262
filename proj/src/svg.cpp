#include "vardecomp/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <vector>

#include "vardecomp/math.hpp"

namespace vardecomp {

namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 500.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 780.0;
constexpr double kTop = 60.0;
constexpr double kBottom = 440.0;

const char* kBarFills[4] = {"#bfbfbf", "#ffffff", "#9ecae1", "#e8d9a0"};
const char* kLineColors[4] = {"#1f77b4", "#d62728", "#2ca02c", "#7f7f7f"};

std::string fmt(const char* pattern, double a) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), pattern, a);
  return buf;
}

std::string fmt2(const char* pattern, double a, double b) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), pattern, a, b);
  return buf;
}

struct Canvas {
  std::ostringstream out;

  explicit Canvas(const std::string& title) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kWidth << " " << kHeight
        << "\" font-family=\"Helvetica, Arial, sans-serif\">\n";
    out << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    out << "<text x=\"400\" y=\"28\" font-size=\"16\" text-anchor=\"middle\">" << title
        << "</text>\n";
  }

  void axes(double y_max, const std::string& y_label) {
    out << "<line x1=\"" << kLeft << "\" y1=\"" << kBottom << "\" x2=\"" << kRight << "\" y2=\""
        << kBottom << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
        << kBottom << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
      const double value = y_max * t / 5.0;
      const double y = kBottom - (kBottom - kTop) * t / 5.0;
      out << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << fmt("%.2f", y) << "\" x2=\"" << kLeft
          << "\" y2=\"" << fmt("%.2f", y) << "\" stroke=\"black\"/>\n";
      out << "<text x=\"" << kLeft - 9 << "\" y=\"" << fmt("%.2f", y + 4)
          << "\" font-size=\"11\" text-anchor=\"end\">" << fmt("%.3f", value) << "</text>\n";
    }
    out << "<text x=\"18\" y=\"250\" font-size=\"12\" transform=\"rotate(-90 18 250)\" "
           "text-anchor=\"middle\">"
        << y_label << "</text>\n";
  }

  std::string str() {
    out << "</svg>\n";
    return out.str();
  }
};

double nice_max(double v) { return v <= 0.0 ? 1.0 : v * 1.15; }

}  // namespace

std::string components_bar_svg(const ReplicationResult& result, const std::string& title) {
  // Methods present, in first-seen order; components 0..2 (residual left out).
  std::vector<DecompositionMethod> methods;
  for (const ComponentSummary& s : result.summaries) {
    if (std::find(methods.begin(), methods.end(), s.method) == methods.end()) {
      methods.push_back(s.method);
    }
  }
  auto summary_of = [&](DecompositionMethod method, int comp) -> const ComponentSummary* {
    for (const ComponentSummary& s : result.summaries) {
      if (s.method == method && s.component == comp) return &s;
    }
    return nullptr;
  };

  double y_max = 0.0;
  for (const ComponentSummary& s : result.summaries) {
    if (s.component < 3) y_max = std::max(y_max, s.q975);
  }
  if (result.truth) {
    for (int j = 0; j < 3; ++j) y_max = std::max(y_max, result.truth->value[j]);
  }
  y_max = nice_max(y_max);

  Canvas canvas(title);
  canvas.axes(y_max, "variance component");
  auto y_of = [&](double v) { return kBottom - (kBottom - kTop) * (v / y_max); };

  const double group_width = (kRight - kLeft) / 3.0;
  const double n_bars = static_cast<double>(methods.size());
  const double bar_width = std::min(60.0, group_width * 0.6 / std::max(1.0, n_bars));

  for (int j = 0; j < 3; ++j) {
    const double group_center = kLeft + group_width * (j + 0.5);
    const double total_span = bar_width * n_bars;
    for (std::size_t k = 0; k < methods.size(); ++k) {
      const ComponentSummary* s = summary_of(methods[k], j);
      if (s == nullptr) continue;
      const double x0 = group_center - total_span / 2.0 + bar_width * k;
      const double y_top = y_of(std::max(s->mean, 0.0));
      canvas.out << "<rect x=\"" << fmt("%.2f", x0) << "\" y=\"" << fmt("%.2f", y_top)
                 << "\" width=\"" << fmt("%.2f", bar_width) << "\" height=\""
                 << fmt("%.2f", std::max(0.0, kBottom - y_top)) << "\" fill=\""
                 << kBarFills[k % 4] << "\" stroke=\"black\"/>\n";
      const double xc = x0 + bar_width / 2.0;
      // 95% sampling quantile interval (black) and MC CI of the mean (blue).
      canvas.out << "<line x1=\"" << fmt("%.2f", xc) << "\" y1=\"" << fmt("%.2f", y_of(s->q025))
                 << "\" x2=\"" << fmt("%.2f", xc) << "\" y2=\"" << fmt("%.2f", y_of(s->q975))
                 << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
      for (double qv : {s->q025, s->q975}) {
        canvas.out << "<line x1=\"" << fmt("%.2f", xc - 6) << "\" y1=\"" << fmt("%.2f", y_of(qv))
                   << "\" x2=\"" << fmt("%.2f", xc + 6) << "\" y2=\"" << fmt("%.2f", y_of(qv))
                   << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
      }
      canvas.out << "<line x1=\"" << fmt("%.2f", xc) << "\" y1=\""
                 << fmt("%.2f", y_of(s->mean_ci_low)) << "\" x2=\"" << fmt("%.2f", xc)
                 << "\" y2=\"" << fmt("%.2f", y_of(s->mean_ci_high))
                 << "\" stroke=\"#1f77b4\" stroke-width=\"4\" opacity=\"0.8\"/>\n";
    }
    if (result.truth) {
      const double tv = result.truth->value[j];
      canvas.out << "<circle cx=\"" << fmt("%.2f", group_center) << "\" cy=\""
                 << fmt("%.2f", y_of(tv)) << "\" r=\"5\" fill=\"#d62728\"/>\n";
      canvas.out << "<text x=\"" << fmt("%.2f", group_center + 9) << "\" y=\""
                 << fmt("%.2f", y_of(tv) - 6) << "\" font-size=\"11\" fill=\"#d62728\">"
                 << fmt("%.3f", tv) << "</text>\n";
    }
    canvas.out << "<text x=\"" << fmt("%.2f", group_center) << "\" y=\"" << kBottom + 22
               << "\" font-size=\"12\" text-anchor=\"middle\">" << kComponentNames[j]
               << "</text>\n";
  }

  double legend_x = kLeft + 10;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    canvas.out << "<rect x=\"" << fmt("%.2f", legend_x) << "\" y=\"" << kTop - 24
               << "\" width=\"14\" height=\"14\" fill=\"" << kBarFills[k % 4]
               << "\" stroke=\"black\"/>\n";
    canvas.out << "<text x=\"" << fmt("%.2f", legend_x + 19) << "\" y=\"" << kTop - 12
               << "\" font-size=\"12\">" << to_string(methods[k]) << "</text>\n";
    legend_x += 110;
  }
  return canvas.str();
}

std::string density_svg(const ReplicationResult& result, DecompositionMethod method,
                        const std::string& title) {
  std::vector<std::vector<double>> samples(3);
  for (const ReplicationRow& row : result.rows) {
    if (row.method == method && row.component < 3) samples[row.component].push_back(row.estimate);
  }

  double x_min = 0.0, x_max = 1.0, y_peak = 0.0;
  bool have_range = false;
  struct Curve {
    std::vector<double> grid, density;
  };
  std::vector<Curve> curves(3);
  for (int j = 0; j < 3; ++j) {
    const std::vector<double>& v = samples[j];
    if (v.size() < 5) continue;
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const double sd = std::sqrt(sample_variance(sorted));
    const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    double bw = 0.9 * std::min(sd, iqr / 1.34) * std::pow(static_cast<double>(v.size()), -0.2);
    if (!(bw > 0.0)) bw = std::max(sd, 1e-6);
    const double lo = sorted.front() - 3.0 * bw;
    const double hi = sorted.back() + 3.0 * bw;
    if (!have_range) {
      x_min = lo;
      x_max = hi;
      have_range = true;
    } else {
      x_min = std::min(x_min, lo);
      x_max = std::max(x_max, hi);
    }
    Curve& cur = curves[j];
    const int grid_n = 200;
    cur.grid.resize(grid_n);
    cur.density.resize(grid_n);
    for (int t = 0; t < grid_n; ++t) {
      const double g = lo + (hi - lo) * t / (grid_n - 1);
      double dens = 0.0;
      for (double s : v) {
        const double u = (g - s) / bw;
        dens += std::exp(-0.5 * u * u);
      }
      dens /= v.size() * bw * std::sqrt(2.0 * M_PI);
      cur.grid[t] = g;
      cur.density[t] = dens;
      y_peak = std::max(y_peak, dens);
    }
  }
  y_peak = nice_max(y_peak);
  if (x_max <= x_min) x_max = x_min + 1.0;

  Canvas canvas(title);
  canvas.axes(y_peak, "density");
  auto x_of = [&](double v) { return kLeft + (kRight - kLeft) * (v - x_min) / (x_max - x_min); };
  auto y_of = [&](double v) { return kBottom - (kBottom - kTop) * (v / y_peak); };

  for (int t = 0; t <= 5; ++t) {
    const double value = x_min + (x_max - x_min) * t / 5.0;
    canvas.out << "<text x=\"" << fmt("%.2f", x_of(value)) << "\" y=\"" << kBottom + 18
               << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt("%.3f", value)
               << "</text>\n";
  }

  for (int j = 0; j < 3; ++j) {
    if (curves[j].grid.empty()) continue;
    canvas.out << "<polyline fill=\"none\" stroke=\"" << kLineColors[j]
               << "\" stroke-width=\"2\" points=\"";
    for (std::size_t t = 0; t < curves[j].grid.size(); ++t) {
      canvas.out << fmt2("%.2f,%.2f ", x_of(curves[j].grid[t]), y_of(curves[j].density[t]));
    }
    canvas.out << "\"/>\n";
    canvas.out << "<text x=\"" << kRight - 150 << "\" y=\"" << kTop + 18 * (j + 1)
               << "\" font-size=\"12\" fill=\"" << kLineColors[j] << "\">" << kComponentNames[j]
               << "</text>\n";
  }
  return canvas.str();
}

std::string threeway_comparison_svg(const ReplicationResult& result, const std::string& title) {
  // Per replicate: three-way values vs the same quantities assembled from the
  // four-way rows (residual = between_surgeon + residual).
  struct Triple {
    double v[3] = {0, 0, 0};
    int seen = 0;
  };
  std::map<int, Triple> three, four;
  for (const ReplicationRow& row : result.rows) {
    if (row.method == DecompositionMethod::three_way) {
      Triple& t = three[row.replicate];
      if (row.component == 0) t.v[0] = row.estimate;
      if (row.component == 1) t.v[1] = row.estimate;
      if (row.component == 3) t.v[2] = row.estimate;
      ++t.seen;
    } else if (row.method == DecompositionMethod::model_based) {
      Triple& t = four[row.replicate];
      if (row.component == 0) t.v[0] = row.estimate;
      if (row.component == 1) t.v[1] = row.estimate;
      if (row.component >= 2) t.v[2] += row.estimate;
      ++t.seen;
    }
  }

  const char* labels[3] = {"case_mix", "between_hospital", "residual"};
  std::vector<std::vector<double>> series(6);
  for (const auto& [rep, t] : three) {
    for (int j = 0; j < 3; ++j) series[j].push_back(t.v[j]);
  }
  for (const auto& [rep, t] : four) {
    for (int j = 0; j < 3; ++j) series[3 + j].push_back(t.v[j]);
  }

  double y_max = 0.0;
  std::vector<double> means(6, 0.0), q_lo(6, 0.0), q_hi(6, 0.0);
  for (int k = 0; k < 6; ++k) {
    if (series[k].empty()) continue;
    means[k] = pairwise_mean(series[k]);
    std::sort(series[k].begin(), series[k].end());
    q_lo[k] = quantile_sorted(series[k], 0.025);
    q_hi[k] = quantile_sorted(series[k], 0.975);
    y_max = std::max(y_max, q_hi[k]);
  }
  if (result.truth) {
    y_max = std::max({y_max, result.truth->value[0], result.truth->value[1],
                      result.truth->value[2] + result.truth->value[3]});
  }
  y_max = nice_max(y_max);

  Canvas canvas(title);
  canvas.axes(y_max, "variance component");
  auto y_of = [&](double v) { return kBottom - (kBottom - kTop) * (v / y_max); };

  const double group_width = (kRight - kLeft) / 3.0;
  const double bar_width = 52.0;
  for (int j = 0; j < 3; ++j) {
    const double center = kLeft + group_width * (j + 0.5);
    for (int variant = 0; variant < 2; ++variant) {
      const int k = variant * 3 + j;
      if (series[k].empty()) continue;
      const double x0 = center - bar_width + variant * bar_width;
      const double y_top = y_of(std::max(means[k], 0.0));
      canvas.out << "<rect x=\"" << fmt("%.2f", x0) << "\" y=\"" << fmt("%.2f", y_top)
                 << "\" width=\"" << bar_width << "\" height=\""
                 << fmt("%.2f", std::max(0.0, kBottom - y_top)) << "\" fill=\""
                 << (variant == 0 ? "#bfbfbf" : "#ffffff") << "\" stroke=\"black\"/>\n";
      const double xc = x0 + bar_width / 2.0;
      canvas.out << "<line x1=\"" << fmt("%.2f", xc) << "\" y1=\"" << fmt("%.2f", y_of(q_lo[k]))
                 << "\" x2=\"" << fmt("%.2f", xc) << "\" y2=\"" << fmt("%.2f", y_of(q_hi[k]))
                 << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    }
    if (result.truth) {
      const double tv = j < 2 ? result.truth->value[j]
                              : result.truth->value[2] + result.truth->value[3];
      canvas.out << "<circle cx=\"" << fmt("%.2f", center) << "\" cy=\"" << fmt("%.2f", y_of(tv))
                 << "\" r=\"5\" fill=\"#d62728\"/>\n";
      canvas.out << "<text x=\"" << fmt("%.2f", center + 9) << "\" y=\""
                 << fmt("%.2f", y_of(tv) - 6) << "\" font-size=\"11\" fill=\"#d62728\">"
                 << fmt("%.3f", tv) << "</text>\n";
    }
    canvas.out << "<text x=\"" << fmt("%.2f", center) << "\" y=\"" << kBottom + 22
               << "\" font-size=\"12\" text-anchor=\"middle\">" << labels[j] << "</text>\n";
  }
  canvas.out << "<rect x=\"" << kLeft + 10 << "\" y=\"" << kTop - 24
             << "\" width=\"14\" height=\"14\" fill=\"#bfbfbf\" stroke=\"black\"/>\n";
  canvas.out << "<text x=\"" << kLeft + 29 << "\" y=\"" << kTop - 12
             << "\" font-size=\"12\">three-way</text>\n";
  canvas.out << "<rect x=\"" << kLeft + 130 << "\" y=\"" << kTop - 24
             << "\" width=\"14\" height=\"14\" fill=\"#ffffff\" stroke=\"black\"/>\n";
  canvas.out << "<text x=\"" << kLeft + 149 << "\" y=\"" << kTop - 12
             << "\" font-size=\"12\">from four-way</text>\n";
  return canvas.str();
}

}  // namespace vardecomp
