#include "mufasa/pipeline/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace mufasa::pipeline {

namespace {

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
const char* const kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void header(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title)
     << "</text>\n";
}

}  // namespace

std::string line_chart_svg(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label, bool log_y) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto ty = [log_y](double y) { return log_y ? std::log10(y) : y; };
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      if (!std::isfinite(y) || (log_y && y <= 0)) continue;
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, ty(y)), y1 = std::max(y1, ty(y));
    }
  if (!(x1 >= x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1 - (ty(y) - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  header(os, title);
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0, xv = x0 + (x1 - x0) * k / 4.0;
    const double yy = kTop + (1 - k / 4.0) * ph, xx = kLeft + k / 4.0 * pw;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << yy + 4 << "\" text-anchor=\"end\">"
       << num(log_y ? std::pow(10.0, yv) : yv) << "</text>\n";
    os << "<text x=\"" << xx << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">" << num(xv)
       << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">"
     << esc(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" transform=\"rotate(-90 16 " << kTop + ph / 2
     << ")\" text-anchor=\"middle\">" << esc(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* colour = kColours[i % 6];
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (auto [x, y] : series[i].points)
      if (std::isfinite(y) && (!log_y || y > 0)) os << num(px(x)) << ',' << num(py(y)) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << kLeft + pw - 8 << "\" y=\"" << kTop + 16 + 14 * i << "\" text-anchor=\"end\" fill=\""
       << colour << "\">" << esc(series[i].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart_svg(const std::vector<std::string>& labels, const std::vector<Series>& series,
                          const std::string& title) {
  double top = 0;
  for (const auto& s : series)
    for (auto [x, y] : s.points)
      if (std::isfinite(y)) top = std::max(top, y);
  if (top <= 0) top = 1;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const double group = pw / std::max<std::size_t>(1, labels.size());
  const double bar = group * 0.8 / std::max<std::size_t>(1, series.size());
  std::ostringstream os;
  header(os, title);
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\""
     << kTop + ph << "\" stroke=\"#444\"/>\n";
  for (std::size_t g = 0; g < labels.size(); ++g) {
    os << "<text x=\"" << kLeft + group * (g + 0.5) << "\" y=\"" << kTop + ph + 18
       << "\" text-anchor=\"middle\" font-size=\"10\">" << esc(labels[g]) << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
      if (g >= series[s].points.size()) continue;
      const double v = series[s].points[g].second;
      if (!std::isfinite(v)) continue;
      const double h = v / top * ph;
      os << "<rect x=\"" << num(kLeft + group * g + group * 0.1 + bar * s) << "\" y=\"" << num(kTop + ph - h)
         << "\" width=\"" << num(bar) << "\" height=\"" << num(h) << "\" fill=\"" << kColours[s % 6]
         << "\"><title>" << esc(series[s].name) << ' ' << num(v) << "</title></rect>\n";
    }
  }
  for (std::size_t s = 0; s < series.size(); ++s)
    os << "<text x=\"" << kLeft + pw - 8 << "\" y=\"" << kTop + 16 + 14 * s << "\" text-anchor=\"end\" fill=\""
       << kColours[s % 6] << "\">" << esc(series[s].name) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::vector<std::pair<std::string, std::vector<std::string>>> read_csv_columns(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::pair<std::string, std::vector<std::string>>> cols;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    return cells;
  };
  if (!std::getline(in, line)) return cols;
  for (auto& h : split(line)) cols.push_back({h, {}});
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    for (std::size_t i = 0; i < cols.size(); ++i) cols[i].second.push_back(i < cells.size() ? cells[i] : "");
  }
  return cols;
}

}  // namespace mufasa::pipeline
