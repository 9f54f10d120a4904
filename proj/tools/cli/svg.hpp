#pragma once

#include <string>
#include <vector>

namespace ict::cli {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;  // NaN entries break the line
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;
};

/// Line chart with markers, ticks and a legend.
std::string line_chart(const Axes& axes, const std::vector<Series>& series);

/// Vertical bars, one per category, with an optional value label above each.
std::string bar_chart(const Axes& axes, const std::vector<std::string>& categories,
                      const std::vector<double>& values);

/// Grid of cells shaded from white (lo) to dark blue (hi); NaN cells are grey.
/// values is row-major rows x cols; row 0 is drawn at the top.
std::string heatmap(const std::string& title, const std::vector<std::string>& row_names,
                    const std::vector<std::string>& col_names, const std::vector<double>& values,
                    double lo, double hi);

/// Places several SVG documents side by side in one document.
std::string hstack(const std::vector<std::string>& panels);

}  // namespace ict::cli
