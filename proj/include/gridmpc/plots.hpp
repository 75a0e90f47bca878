#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gridmpc/error.hpp"

namespace gridmpc::plot {

struct Series {
  std::string label;
  std::vector<double> x, y;
  bool markers = false;
};

struct Chart {
  std::string title, x_label, y_label;
  std::vector<Series> series;
  std::vector<std::pair<std::string, double>> hlines;  ///< labelled horizontal limits
  bool log_x = false;
};

namespace detail {

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return palette[i % 8];
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

}  // namespace detail

inline std::string render_svg(const Chart& c) {
  const double w = 800, h = 450, ml = 70, mr = 160, mt = 40, mb = 55;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  auto tx = [&](double x) { return c.log_x ? std::log10(x) : x; };
  for (const auto& s : c.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || !std::isfinite(tx(s.x[i]))) continue;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  for (const auto& [_, v] : c.hlines) {
    y0 = std::min(y0, v);
    y1 = std::max(y1, v);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  const double pad = std::max(1e-9, 0.05 * (y1 - y0));
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return ml + (tx(x) - x0) / (x1 - x0) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << detail::escape(c.title) << "</text>\n";
  o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << w - ml - mr << "\" height=\""
    << h - mt - mb << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double yv = y0 + (y1 - y0) * k / 5.0;
    const double xv = x0 + (x1 - x0) * k / 5.0;
    o << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
      << detail::num(yv) << "</text>\n";
    const double xlab = c.log_x ? std::pow(10.0, xv) : xv;
    o << "<text x=\"" << ml + (xv - x0) / (x1 - x0) * (w - ml - mr) << "\" y=\"" << h - mb + 18
      << "\" text-anchor=\"middle\">" << detail::num(xlab) << "</text>\n";
  }
  o << "<text x=\"" << (w - mr + ml) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">"
    << detail::escape(c.x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << (h - mb + mt) / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << detail::escape(c.y_label) << "</text>\n";
  for (const auto& [label, v] : c.hlines) {
    o << "<line x1=\"" << ml << "\" x2=\"" << w - mr << "\" y1=\"" << py(v) << "\" y2=\"" << py(v)
      << "\" stroke=\"red\" stroke-dasharray=\"6,4\"/>\n";
    o << "<text x=\"" << w - mr + 4 << "\" y=\"" << py(v) + 4 << "\" fill=\"red\">"
      << detail::escape(label) << "</text>\n";
  }
  for (std::size_t si = 0; si < c.series.size(); ++si) {
    const Series& s = c.series[si];
    std::ostringstream pts;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i])) pts << detail::num(px(s.x[i])) << "," << detail::num(py(s.y[i])) << " ";
    o << "<polyline fill=\"none\" stroke=\"" << detail::color(si) << "\" stroke-width=\"1.5\" points=\""
      << pts.str() << "\"/>\n";
    if (s.markers)
      for (std::size_t i = 0; i < s.x.size(); ++i)
        if (std::isfinite(s.y[i]))
          o << "<circle cx=\"" << detail::num(px(s.x[i])) << "\" cy=\"" << detail::num(py(s.y[i]))
            << "\" r=\"3\" fill=\"" << detail::color(si) << "\"/>\n";
    const double ly = mt + 16 + 16 * static_cast<double>(si);
    o << "<line x1=\"" << w - mr + 8 << "\" x2=\"" << w - mr + 28 << "\" y1=\"" << ly - 4
      << "\" y2=\"" << ly - 4 << "\" stroke=\"" << detail::color(si) << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << w - mr + 32 << "\" y=\"" << ly << "\">" << detail::escape(s.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_svg(const std::filesystem::path& path, const Chart& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write plot " + path.string());
  os << render_svg(c);
  if (!os) throw IoError("error writing plot " + path.string());
}

}  // namespace gridmpc::plot
