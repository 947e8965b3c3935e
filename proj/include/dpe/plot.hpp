#ifndef DPE_PLOT_HPP
#define DPE_PLOT_HPP

#include <algorithm>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace dpe {

namespace detail {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> values;
};

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", x);
  return buf;
}

// One line panel at vertical offset `top`.
inline std::string svg_panel(const std::string& title, const std::vector<Series>& series, double top) {
  const double left = 60, width = 520, height = 180;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  std::size_t n = 0;
  for (const auto& s : series) {
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    n = std::max(n, s.values.size());
  }
  std::string out = "<text x=\"" + fmt(left) + "\" y=\"" + fmt(top - 8) + "\" font-size=\"13\">" + title + "</text>\n";
  out += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(top) + "\" width=\"" + fmt(width) + "\" height=\"" +
         fmt(height) + "\" fill=\"none\" stroke=\"#888\"/>\n";
  if (n == 0) return out;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  out += "<text x=\"4\" y=\"" + fmt(top + 10) + "\" font-size=\"10\">" + fmt(hi) + "</text>\n";
  out += "<text x=\"4\" y=\"" + fmt(top + height) + "\" font-size=\"10\">" + fmt(lo) + "</text>\n";
  auto px = [&](std::size_t i) { return left + (n == 1 ? width / 2 : width * static_cast<double>(i) / (n - 1)); };
  auto py = [&](double v) { return top + height - height * (v - lo) / (hi - lo); };
  double legend_y = top + 14;
  for (const auto& s : series) {
    std::string pts;
    for (std::size_t i = 0; i < s.values.size(); ++i) pts += fmt(px(i)) + "," + fmt(py(s.values[i])) + " ";
    out += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    out += "<text x=\"" + fmt(left + width + 8) + "\" y=\"" + fmt(legend_y) + "\" font-size=\"11\" fill=\"" +
           s.color + "\">" + s.label + "</text>\n";
    legend_y += 14;
  }
  return out;
}

}  // namespace detail

/// Static SVG of windowed accuracy and per-window mean losses from a run report.
inline std::string render_report_svg(const nlohmann::ordered_json& report) {
  detail::Series acc{"accuracy", "#1f77b4", {}};
  detail::Series aug{"mean L_aug", "#d62728", {}};
  detail::Series align{"mean L_align", "#2ca02c", {}};
  for (const auto& w : report.at("windows")) {
    if (!w.at("accuracy").is_null()) acc.values.push_back(w.at("accuracy").get<double>());
    aug.values.push_back(w.at("mean_l_aug").get<double>());
    align.values.push_back(w.at("mean_l_align").get<double>());
  }
  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"480\" font-family=\"sans-serif\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += detail::svg_panel("Windowed accuracy", {acc}, 30);
  svg += detail::svg_panel("Per-window mean losses", {aug, align}, 260);
  svg += "</svg>\n";
  return svg;
}

}  // namespace dpe

#endif  // DPE_PLOT_HPP
