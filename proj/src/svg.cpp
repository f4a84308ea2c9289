#include "parauni/svg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include "parauni/errors.hpp"

namespace parauni::svg {

namespace {

constexpr double kWidth = 640, kHeight = 400, kMargin = 60;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

std::string open_svg(const std::string& title) {
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
    << escape(title) << "</text>\n";
  return o.str();
}

}  // namespace

std::string line_chart(const std::vector<Series>& series, const std::string& title) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = kWidth - 2 * kMargin, ph = kHeight - 2 * kMargin;
  auto px = [&](double x) { return kMargin + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kHeight - kMargin - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  o << open_svg(title);
  o << "<g stroke=\"black\" stroke-width=\"1\">"
    << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin << "\" y2=\""
    << kHeight - kMargin << "\"/>"
    << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\"" << kHeight - kMargin
    << "\"/></g>\n";
  o << "<g font-family=\"sans-serif\" font-size=\"11\">"
    << "<text x=\"" << kMargin << "\" y=\"" << kHeight - kMargin + 16 << "\">" << num(x0) << "</text>"
    << "<text x=\"" << kWidth - kMargin << "\" y=\"" << kHeight - kMargin + 16 << "\" text-anchor=\"end\">" << num(x1)
    << "</text>"
    << "<text x=\"" << kMargin - 4 << "\" y=\"" << kHeight - kMargin << "\" text-anchor=\"end\">" << num(y0) << "</text>"
    << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + 4 << "\" text-anchor=\"end\">" << num(y1) << "</text>"
    << "</g>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
    o << "\"/>\n";
    o << "<text x=\"" << kWidth - kMargin + 4 << "\" y=\"" << kMargin + 14 * double(k) << "\" fill=\"" << color
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string heatmap(const std::vector<double>& values, std::size_t rows, std::size_t cols, const std::string& title) {
  if (values.size() != rows * cols) throw ShapeError("heatmap: value count does not match rows×cols");
  double lo = INFINITY, hi = -INFINITY;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) hi = lo + 1;
  const double cw = (kWidth - 2 * kMargin) / double(std::max<std::size_t>(cols, 1));
  const double ch = (kHeight - 2 * kMargin) / double(std::max<std::size_t>(rows, 1));
  std::ostringstream o;
  o << open_svg(title);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double u = (values[r * cols + c] - lo) / (hi - lo);
      const int red = static_cast<int>(std::lround(255 * u)), blue = 255 - red;
      o << "<rect x=\"" << num(kMargin + double(c) * cw) << "\" y=\"" << num(kMargin + double(r) * ch) << "\" width=\""
        << num(cw) << "\" height=\"" << num(ch) << "\" fill=\"rgb(" << red << ",64," << blue << ")\"/>\n";
    }
  o << "<text x=\"" << kMargin << "\" y=\"" << kHeight - kMargin + 16
    << "\" font-family=\"sans-serif\" font-size=\"11\">min " << num(lo) << ", max " << num(hi) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

Csv parse_csv(const std::string& text) {
  Csv csv;
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  while (std::getline(in, line)) {
    const std::size_t at = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (csv.header.empty()) {
      csv.header = std::move(cells);
    } else {
      if (cells.size() != csv.header.size()) throw FormatError("ragged CSV row", at);
      csv.rows.push_back(std::move(cells));
    }
  }
  if (csv.header.empty()) throw FormatError("empty CSV", 0);
  return csv;
}

std::string plot_csv(const std::string& text, const std::string& title) {
  const Csv csv = parse_csv(text);
  if (csv.header == std::vector<std::string>{"i", "j", "value"}) {
    std::map<std::pair<long, long>, double> cells;
    long n = 0;
    for (const auto& row : csv.rows) {
      double i, j, v;
      if (!parse_double(row[0], i) || !parse_double(row[1], j) || !parse_double(row[2], v))
        throw FormatError("non-numeric similarity cell", 0);
      cells[{long(i), long(j)}] = v;
      n = std::max({n, long(i), long(j)});
    }
    std::vector<double> values(static_cast<std::size_t>(n * n), 0.0);
    for (const auto& [ij, v] : cells)
      if (ij.first >= 1 && ij.second >= 1)
        values[static_cast<std::size_t>((ij.first - 1) * n + ij.second - 1)] = v;
    return heatmap(values, static_cast<std::size_t>(n), static_cast<std::size_t>(n), title);
  }

  auto column = [&](std::size_t c, std::vector<double>& out) {
    out.clear();
    for (const auto& row : csv.rows) {
      double v;
      if (!parse_double(row[c], v)) return false;
      out.push_back(v);
    }
    return !out.empty();
  };
  std::vector<double> xs;
  bool index_x = column(0, xs) && std::is_sorted(xs.begin(), xs.end()) &&
                 std::adjacent_find(xs.begin(), xs.end()) == xs.end();
  if (!index_x) {
    xs.clear();
    for (std::size_t i = 0; i < csv.rows.size(); ++i) xs.push_back(double(i + 1));
  }
  std::vector<Series> series;
  for (std::size_t c = index_x ? 1 : 0; c < csv.header.size(); ++c) {
    // numeric cells only; blanks and labels are skipped
    Series s{csv.header[c], {}, {}};
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
      double v;
      if (parse_double(csv.rows[r][c], v)) {
        s.x.push_back(xs[r]);
        s.y.push_back(v);
      }
    }
    const bool index_name = s.name == "stage" || s.name == "epoch" || s.name == "layer";
    if (!index_name && !s.y.empty() && s.y.size() * 2 >= csv.rows.size()) series.push_back(std::move(s));
  }
  if (series.empty()) throw FormatError("no numeric columns to plot", 0);
  return line_chart(series, title);
}

}  // namespace parauni::svg
