#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "abrlab/types.hpp"

namespace abrlab {

// Minimal static SVG emission: aligned timeline panels and bar summaries.
// No styling knobs; these are lab plots, not publication figures.

namespace svg {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
};

struct Panel {
  std::string title;
  std::vector<Series> series;
};

inline void write_timeline(const std::string& path, const std::vector<Panel>& panels) {
  if (panels.empty()) throw DataError("svg: no panels");
  const int width = 900, panel_h = 180, margin = 50, gap = 30;
  const int height = margin + static_cast<int>(panels.size()) * (panel_h + gap);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("svg: cannot write '" + path + "'");
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
      << "' font-family='sans-serif' font-size='11'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  int top = margin / 2;
  for (const auto& panel : panels) {
    double xmin = std::numeric_limits<double>::max(), xmax = std::numeric_limits<double>::lowest();
    double ymin = 0.0, ymax = std::numeric_limits<double>::lowest();
    for (const auto& s : panel.series) {
      for (double v : s.x) {
        xmin = std::min(xmin, v);
        xmax = std::max(xmax, v);
      }
      for (double v : s.y) ymax = std::max(ymax, v);
    }
    if (!(xmax > xmin)) xmax = xmin + 1.0;
    if (!(ymax > ymin)) ymax = ymin + 1.0;
    ymax *= 1.05;
    const int plot_w = width - 2 * margin;
    auto px = [&](double v) { return margin + (v - xmin) / (xmax - xmin) * plot_w; };
    auto py = [&](double v) { return top + panel_h - (v - ymin) / (ymax - ymin) * panel_h; };
    out << "<text x='" << margin << "' y='" << top - 6 << "' font-weight='bold'>" << panel.title
        << "</text>\n";
    out << "<rect x='" << margin << "' y='" << top << "' width='" << plot_w << "' height='"
        << panel_h << "' fill='none' stroke='#999'/>\n";
    out << "<text x='" << margin - 8 << "' y='" << top + 10 << "' text-anchor='end'>"
        << ymax / 1.05 << "</text>\n";
    out << "<text x='" << margin - 8 << "' y='" << top + panel_h << "' text-anchor='end'>0</text>\n";
    int legend_x = margin + 10;
    for (const auto& s : panel.series) {
      if (s.x.empty()) continue;
      out << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.2' points='";
      for (std::size_t i = 0; i < s.x.size(); ++i)
        out << px(s.x[i]) << "," << py(std::max(s.y[i], 0.0)) << " ";
      out << "'/>\n";
      out << "<text x='" << legend_x << "' y='" << top + 14 << "' fill='" << s.color << "'>"
          << s.label << "</text>\n";
      legend_x += static_cast<int>(s.label.size()) * 7 + 20;
    }
    top += panel_h + gap;
  }
  out << "</svg>\n";
}

struct Bar {
  std::string label;
  double value = 0.0;
};

inline void write_bars(const std::string& path, const std::string& title,
                       const std::vector<Bar>& bars) {
  if (bars.empty()) throw DataError("svg: no bars");
  const int width = 600, height = 320, margin = 60;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("svg: cannot write '" + path + "'");
  double vmax = 0.0, vmin = 0.0;
  for (const auto& b : bars) {
    vmax = std::max(vmax, b.value);
    vmin = std::min(vmin, b.value);
  }
  if (!(vmax > vmin)) vmax = vmin + 1.0;
  const int plot_w = width - 2 * margin, plot_h = height - 2 * margin;
  const double span = vmax - vmin;
  auto py = [&](double v) { return margin + plot_h - (v - vmin) / span * plot_h; };
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
      << "' font-family='sans-serif' font-size='12'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << margin << "' y='" << margin - 20 << "' font-weight='bold'>" << title
      << "</text>\n";
  const double slot = static_cast<double>(plot_w) / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double x = margin + slot * static_cast<double>(i) + slot * 0.15;
    const double w = slot * 0.7;
    const double y0 = py(std::max(bars[i].value, 0.0));
    const double y1 = py(std::min(bars[i].value, 0.0));
    out << "<rect x='" << x << "' y='" << y0 << "' width='" << w << "' height='"
        << std::max(y1 - y0, 1.0) << "' fill='#4477aa'/>\n";
    out << "<text x='" << x + w / 2 << "' y='" << height - margin + 16
        << "' text-anchor='middle'>" << bars[i].label << "</text>\n";
    out << "<text x='" << x + w / 2 << "' y='" << y0 - 4 << "' text-anchor='middle'>"
        << bars[i].value << "</text>\n";
  }
  out << "<line x1='" << margin << "' y1='" << py(0.0) << "' x2='" << width - margin << "' y2='"
      << py(0.0) << "' stroke='#333'/>\n";
  out << "</svg>\n";
}

}  // namespace svg
}  // namespace abrlab
