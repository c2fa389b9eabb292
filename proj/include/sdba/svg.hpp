#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sdba {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label = "round";
  std::string y_label;
  double y_min = 0.0;
  double y_max = 1.0;
  /// Optional shaded interval on the x axis (e.g. the attack window).
  double band_from = 0.0;
  double band_to = 0.0;
};

/// Self-contained SVG line chart: axes, ticks, legend, one polyline per series.
std::string render_line_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series);
void write_line_plot(const std::filesystem::path& path, const PlotSpec& spec, const std::vector<PlotSeries>& series);

}  // namespace sdba
