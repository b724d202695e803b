#pragma once

#include <string>
#include <utility>
#include <vector>

namespace mufasa::pipeline {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Line chart; `log_y` plots log10 of positive values.
std::string line_chart_svg(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label, bool log_y);

/// Grouped bars: one group per label, one bar per series value.
std::string bar_chart_svg(const std::vector<std::string>& labels,
                          const std::vector<Series>& series, const std::string& title);

/// Header row plus data rows, as named string columns.
std::vector<std::pair<std::string, std::vector<std::string>>> read_csv_columns(const std::string& text);

}  // namespace mufasa::pipeline
