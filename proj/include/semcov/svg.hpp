#pragma once

// Minimal SVG emitters: line chart for CDI trajectories, heatmap for coverage.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "semcov/coverage.hpp"
#include "semcov/errors.hpp"
#include "semcov/io.hpp"

namespace semcov::svg {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* palette(size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return colors[i % 6];
}

inline std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                              const std::string& ylabel) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = 0, y1 = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ArgumentError("series x/y length mismatch");
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (!std::isfinite(y1) || y1 <= y0) y1 = y0 + 1;
  const double W = 640, H = 400, L = 70, R = 160, Tm = 40, B = 50;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - Tm - B); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << Tm << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0, xv = x0 + (x1 - x0) * k / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << io::fmt_fixed(yv, 3) << "</text>\n";
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << io::fmt_fixed(xv, 1) << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (Tm + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (Tm + H - B) / 2 << ")\">" << escape(ylabel) << "</text>\n";
  for (size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    o << "<polyline fill=\"none\" stroke=\"" << palette(i) << "\" stroke-width=\"2\" points=\"";
    for (size_t k = 0; k < s.x.size(); ++k) o << (k ? " " : "") << io::fmt_fixed(px(s.x[k]), 2) << "," << io::fmt_fixed(py(s.y[k]), 2);
    o << "\"/>\n";
    const double ly = Tm + 10 + 18.0 * static_cast<double>(i);
    o << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly << "\" stroke=\""
      << palette(i) << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// Rows x columns grid shaded white (low) to dark blue (high) over [lo, hi].
inline std::string heatmap(const std::vector<std::vector<double>>& m, const std::vector<std::string>& row_labels,
                           const std::vector<std::string>& col_labels, const std::string& title, double lo = 0.0,
                           double hi = 1.0) {
  const size_t rows = m.size(), cols = rows ? m[0].size() : 0;
  if (row_labels.size() != rows || col_labels.size() != cols) throw ArgumentError("heatmap label count mismatch");
  const double cell = 36, L = 60, Tm = 40, B = 70;
  const double W = L + cell * static_cast<double>(cols) + 20, H = Tm + cell * static_cast<double>(rows) + B;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  for (size_t r = 0; r < rows; ++r) {
    if (m[r].size() != cols) throw ArgumentError("heatmap rows differ in length");
    o << "<text x=\"" << L - 6 << "\" y=\"" << Tm + cell * (r + 0.5) + 4 << "\" text-anchor=\"end\">" << escape(row_labels[r])
      << "</text>\n";
    for (size_t c = 0; c < cols; ++c) {
      const double t = std::clamp(hi > lo ? (m[r][c] - lo) / (hi - lo) : 0.0, 0.0, 1.0);
      const int red = static_cast<int>(std::lround(255 - 225 * t)), green = static_cast<int>(std::lround(255 - 175 * t));
      o << "<rect class=\"cell\" x=\"" << L + cell * c << "\" y=\"" << Tm + cell * r << "\" width=\"" << cell
        << "\" height=\"" << cell << "\" fill=\"rgb(" << red << "," << green << ",255)\" stroke=\"#ccc\"><title>"
        << io::fmt_fixed(m[r][c], 4) << "</title></rect>\n";
    }
  }
  for (size_t c = 0; c < cols; ++c) {
    const double x = L + cell * (c + 0.5), y = Tm + cell * rows + 10;
    o << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"end\" transform=\"rotate(-60 " << x << " " << y << ")\">"
      << escape(col_labels[c]) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// Descriptor rows by (class, subgroup) columns.
inline std::string coverage_heatmap(const LongTailReport& r, const ScgDims& dims) {
  std::vector<std::string> rows, cols;
  for (int d = 0; d < dims.K; ++d) rows.push_back("d_" + std::to_string(d + 1));
  for (int c = 0; c < dims.T; ++c)
    for (int s = 0; s < dims.S; ++s) cols.push_back("c" + std::to_string(c) + "/s" + std::to_string(s));
  return heatmap(r.heatmap, rows, cols, "SCG coverage", 0.0, std::max(1e-12, r.max));
}

}  // namespace semcov::svg
