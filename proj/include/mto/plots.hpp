#pragma once

#include "mto/harness.hpp"
#include "mto/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace mto {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

inline std::string svg_line_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& xlabel,
                                 const std::string& ylabel) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  const double W = 640, H = 400, ml = 70, mr = 160, mt = 40, mb = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };

  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << W - ml - mr << "\" height=\"" << H - mt - mb
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0;
    const double yv = y0 + (y1 - y0) * k / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - mb + 16 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
  }
  os << "<text x=\"" << ml + (W - ml - mr) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  os << "<text transform=\"translate(16," << mt + (H - mt - mb) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << ylabel
     << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* col = palette[s % 8];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) os << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    os << "\"/>\n";
    const double ly = mt + 14 + 18.0 * static_cast<double>(s);
    os << "<line x1=\"" << W - mr + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - mr + 30 << "\" y2=\"" << ly - 4
       << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - mr + 36 << "\" y=\"" << ly << "\">" << series[s].label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text, std::vector<std::string>& written) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw IoError("cannot write '" + path.string() + "'");
  written.push_back(path.string());
}

inline PlotSeries curve_series(const RunRecord& r, const std::string& label) {
  PlotSeries s{label, {}, {}};
  for (const auto& c : r.curve.samples) {
    s.x.push_back(c.epoch);
    s.y.push_back(c.score);
  }
  return s;
}

inline PlotSeries profile_series(const HeterogeneityProfile& p, const std::string& label) {
  PlotSeries s{label, {}, p.values};
  for (Index d : p.depths) s.x.push_back(static_cast<double>(d));
  return s;
}

}  // namespace detail

inline std::string record_label(const RunRecord& r, std::size_t i) {
  if (!r.run_dir.empty()) {
    const std::string base = std::filesystem::path(r.run_dir).filename().string();
    if (!base.empty()) return base;
  }
  return "run" + std::to_string(i) + "_" + r.curve.method_name;
}

// Per record: a curve plot, a profile plot and one quadrant image (PNG + CSV)
// per traced depth. Two or more records add overlay plots. Returns written paths.
inline std::vector<std::string> emit_plots(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (records.empty()) throw ArgumentError("emit_plots: no run records");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create plot directory '" + out_dir.string() + "'");
  std::vector<std::string> written;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::string label = record_label(records[i], i);
    if (std::find(labels.begin(), labels.end(), label) != labels.end()) label += "_" + std::to_string(i);
    labels.push_back(label);
  }

  for (std::size_t i = 0; i < records.size(); ++i) {
    const RunRecord& r = records[i];
    const std::string& label = labels[i];
    detail::write_text(out_dir / (label + "_curve.svg"),
                       svg_line_plot({detail::curve_series(r, r.curve.method_name)}, label + ": held-out score", "epoch", "score"),
                       written);
    if (!r.profiles.empty()) {
      std::vector<PlotSeries> ps;
      for (const auto& p : r.profiles) ps.push_back(detail::profile_series(p.profile, "step " + std::to_string(p.step)));
      detail::write_text(out_dir / (label + "_profiles.svg"), svg_line_plot(ps, label + ": heterogeneity by depth", "depth", "H"),
                         written);
    }
    for (std::size_t d = 0; d < r.quadrants.size(); ++d) {
      const QuadrantMap& q = r.quadrants[d];
      const fs::path png = out_dir / (label + "_quadrant_d" + std::to_string(d) + ".png");
      write_gray_png(q.matrix, png.string());
      written.push_back(png.string());
      std::ostringstream csv;
      csv.precision(9);
      for (Index y = 0; y < q.matrix.rows(); ++y)
        for (Index x = 0; x < q.matrix.cols(); ++x) csv << q.matrix(y, x) << (x + 1 == q.matrix.cols() ? '\n' : ',');
      detail::write_text(out_dir / (label + "_quadrant_d" + std::to_string(d) + ".csv"), csv.str(), written);
    }
  }

  if (records.size() >= 2) {
    std::vector<PlotSeries> curves;
    std::vector<PlotSeries> finals;
    for (std::size_t i = 0; i < records.size(); ++i) {
      curves.push_back(detail::curve_series(records[i], labels[i]));
      if (!records[i].profiles.empty()) finals.push_back(detail::profile_series(records[i].profiles.back().profile, labels[i]));
    }
    detail::write_text(out_dir / "overlay_curves.svg", svg_line_plot(curves, "held-out score", "epoch", "score"), written);
    if (!finals.empty())
      detail::write_text(out_dir / "overlay_profiles.svg", svg_line_plot(finals, "final heterogeneity by depth", "depth", "H"),
                         written);
  }
  return written;
}

}  // namespace mto
