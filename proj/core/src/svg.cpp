#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "neurodecode/csv.hpp"

namespace neurodecode::svg {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 60, kRight = 20, kTop = 24, kBottom = 48;

std::string num(double v) { return format_double(std::round(v * 100.0) / 100.0); }

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

struct Canvas {
  std::ostringstream body;
  double x0, x1, y0, y1;  // data ranges

  double px(double x) const {
    const double span = x1 > x0 ? x1 - x0 : 1.0;
    return kLeft + (x - x0) / span * (kWidth - kLeft - kRight);
  }
  double py(double y) const {
    const double span = y1 > y0 ? y1 - y0 : 1.0;
    return kHeight - kBottom - (y - y0) / span * (kHeight - kTop - kBottom);
  }

  void rect(double x, double y, double w, double h, const char* fill) {
    body << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
         << "\" height=\"" << num(h) << "\" fill=\"" << fill << "\"/>\n";
  }
  void line(double ax, double ay, double bx, double by, const char* stroke,
            const char* dash = nullptr) {
    body << "<line x1=\"" << num(ax) << "\" y1=\"" << num(ay) << "\" x2=\"" << num(bx)
         << "\" y2=\"" << num(by) << "\" stroke=\"" << stroke << "\"";
    if (dash) body << " stroke-dasharray=\"" << dash << "\"";
    body << "/>\n";
  }
  void circle(double x, double y, double r, const char* fill) {
    body << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"" << num(r)
         << "\" fill=\"" << fill << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, const char* anchor = "middle",
            int size = 11) {
    body << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\""
         << " font-size=\"" << size << "\" text-anchor=\"" << anchor << "\">"
         << xml_escape(s) << "</text>\n";
  }
  void axes(const std::string& xlabel, const std::string& ylabel) {
    line(kLeft, kHeight - kBottom, kWidth - kRight, kHeight - kBottom, "black");
    line(kLeft, kTop, kLeft, kHeight - kBottom, "black");
    text((kLeft + kWidth - kRight) / 2, kHeight - 12, xlabel);
    text(14, kTop - 8, ylabel, "start");
    // y ticks at the range ends and midpoint
    for (double f : {0.0, 0.5, 1.0}) {
      const double yv = y0 + f * (y1 - y0);
      text(kLeft - 6, py(yv) + 4, num(yv), "end", 10);
      line(kLeft - 3, py(yv), kLeft, py(yv), "black");
    }
  }
  std::string finish(const std::string& title) {
    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth
        << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight
        << "\">\n<title>" << xml_escape(title) << "</title>\n"
        << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" fill=\"white\"/>\n"
        << body.str() << "</svg>\n";
    return out.str();
  }
};

}  // namespace

std::string session_bars(const std::vector<std::string>& labels,
                         const std::vector<double>& values) {
  Canvas c;
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  c.x0 = 0;
  c.x1 = static_cast<double>(std::max<size_t>(values.size(), 1));
  c.y0 = 0;
  c.y1 = vmax > 0 ? vmax * 1.1 : 1.0;
  c.axes("session", "mean CER");
  for (size_t i = 0; i < values.size(); ++i) {
    const double xl = c.px(static_cast<double>(i) + 0.15);
    const double xr = c.px(static_cast<double>(i) + 0.85);
    const double yt = c.py(values[i]);
    c.rect(xl, yt, xr - xl, c.py(0) - yt, "#4878a8");
    c.text((xl + xr) / 2, kHeight - kBottom + 14, labels[i], "middle", 10);
  }
  return c.finish("Mean CER per recording session");
}

std::string cer_histogram(const std::vector<double>& values, int bins) {
  Canvas c;
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  if (vmax <= 0) vmax = 1.0;
  std::vector<int64_t> counts(static_cast<size_t>(std::max(bins, 1)), 0);
  const double width = vmax / static_cast<double>(counts.size());
  for (double v : values) {
    size_t b = width > 0 ? static_cast<size_t>(v / width) : 0;
    if (b >= counts.size()) b = counts.size() - 1;
    counts[b]++;
  }
  int64_t cmax = 1;
  for (int64_t n : counts) cmax = std::max(cmax, n);
  c.x0 = 0;
  c.x1 = vmax;
  c.y0 = 0;
  c.y1 = static_cast<double>(cmax) * 1.1;
  c.axes("CER", "utterances");
  for (size_t i = 0; i < counts.size(); ++i) {
    const double xl = c.px(static_cast<double>(i) * width);
    const double xr = c.px(static_cast<double>(i + 1) * width);
    const double yt = c.py(static_cast<double>(counts[i]));
    c.rect(xl + 1, yt, std::max(1.0, xr - xl - 2), c.py(0) - yt, "#6aa84f");
  }
  return c.finish("Distribution of CER across utterances");
}

std::string length_vs_cer(const LengthChartInput& input) {
  Canvas c;
  double xmax = 1.0, ymax = 0.0;
  for (double x : input.lengths) xmax = std::max(xmax, x);
  for (double y : input.cers) ymax = std::max(ymax, y);
  c.x0 = 0;
  c.x1 = xmax * 1.05;
  c.y0 = 0;
  c.y1 = ymax > 0 ? ymax * 1.1 : 1.0;
  c.axes("reference length (characters)", "CER");

  // +/- one std band around per-bin means.
  for (size_t i = 0; i < input.bin_centers.size(); ++i) {
    const double lo = std::max(0.0, input.bin_means[i] - input.bin_stds[i]);
    const double hi = input.bin_means[i] + input.bin_stds[i];
    const double x = c.px(input.bin_centers[i]);
    c.line(x, c.py(lo), x, c.py(hi), "#d0b0a0");
    c.circle(x, c.py(input.bin_means[i]), 3.5, "#c05020");
  }
  for (size_t i = 0; i < input.lengths.size(); ++i) {
    c.circle(c.px(input.lengths[i]), c.py(input.cers[i]), 2, "#707070");
  }
  if (input.has_fit) {
    const double y_at0 = input.intercept;
    const double y_atmax = input.intercept + input.slope * c.x1;
    c.line(c.px(0), c.py(std::clamp(y_at0, c.y0, c.y1)), c.px(c.x1),
           c.py(std::clamp(y_atmax, c.y0, c.y1)), "#202020", "6,4");
  }
  return c.finish("Mean CER as a function of utterance length");
}

}  // namespace neurodecode::svg
