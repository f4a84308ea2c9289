#pragma once

#include <string>
#include <vector>

namespace parauni::svg {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

// One <polyline> per series, with axes, min/max tick labels and a legend.
std::string line_chart(const std::vector<Series>& series, const std::string& title);
// rows×cols cells, row-major values, blue (low) to red (high).
std::string heatmap(const std::vector<double>& values, std::size_t rows, std::size_t cols, const std::string& title);

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
// Comma-separated, no quoting. Throws FormatError for ragged rows.
Csv parse_csv(const std::string& text);

// Heatmap for an i,j,value table; otherwise a line chart of every numeric
// column against the first column when it is an increasing index, else the
// row number. Throws FormatError when nothing is plottable.
std::string plot_csv(const std::string& text, const std::string& title);

}  // namespace parauni::svg
