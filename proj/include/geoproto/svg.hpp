#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "geoproto/error.hpp"
#include "geoproto/trainer.hpp"

namespace geoproto {

/// Minimal bar chart, emitted as plain SVG text (no plotting dependency).
inline void write_bar_chart_svg(const std::string& path, const std::string& title,
                                const std::vector<double>& values) {
  if (values.empty()) throw ContractError("write_bar_chart_svg: no values");
  const int bar_w = 28, gap = 6, chart_h = 160, margin = 24, label_h = 30;
  int width = margin * 2 + static_cast<int>(values.size()) * (bar_w + gap);
  int height = margin + chart_h + label_h;
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;

  std::ofstream out(path);
  if (!out) throw FormatError("write_bar_chart_svg: cannot open " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n";
  out << "<text x=\"" << margin << "\" y=\"16\" font-size=\"13\" font-family=\"sans-serif\">"
      << title << "</text>\n";
  for (size_t i = 0; i < values.size(); ++i) {
    int h = static_cast<int>(values[i] / vmax * chart_h);
    int x = margin + static_cast<int>(i) * (bar_w + gap);
    int y = margin + chart_h - h;
    out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w << "\" height=\"" << h
        << "\" fill=\"#4878a8\"/>\n";
    out << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << margin + chart_h + 14
        << "\" font-size=\"10\" text-anchor=\"middle\" font-family=\"sans-serif\">" << i
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace geoproto
