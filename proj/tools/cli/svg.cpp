#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ict::cli {

namespace {

constexpr double kWidth = 480, kHeight = 320;
constexpr double kLeft = 60, kRight = 20, kTop = 36, kBottom = 48;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
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

std::string open_svg(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle",
                 const std::string& extra = {}) {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\"" + extra + ">" +
         escape(s) + "</text>\n";
}

struct Frame {
  const Axes& axes;
  double px(double x) const {
    const double span = axes.x_max - axes.x_min;
    return kLeft + (span > 0 ? (x - axes.x_min) / span : 0.5) * (kWidth - kLeft - kRight);
  }
  double py(double y) const {
    const double span = axes.y_max - axes.y_min;
    return kHeight - kBottom - (span > 0 ? (y - axes.y_min) / span : 0.5) * (kHeight - kTop - kBottom);
  }
};

std::string frame(const Axes& axes, bool x_ticks) {
  const Frame f{axes};
  std::ostringstream o;
  o << text(kWidth / 2, 20, axes.title, "middle", " font-size=\"13\"");
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kHeight - kBottom) << "\" x2=\"" << num(kWidth - kRight)
    << "\" y2=\"" << num(kHeight - kBottom) << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft) << "\" y2=\""
    << num(kHeight - kBottom) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = axes.y_min + (axes.y_max - axes.y_min) * i / 5.0;
    const double y = f.py(v);
    o << "<line x1=\"" << num(kLeft - 4) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kLeft) << "\" y2=\""
      << num(y) << "\" stroke=\"black\"/>\n";
    o << text(kLeft - 6, y + 4, tick_label(v), "end");
  }
  if (x_ticks) {
    for (int i = 0; i <= 5; ++i) {
      const double v = axes.x_min + (axes.x_max - axes.x_min) * i / 5.0;
      const double x = f.px(v);
      o << "<line x1=\"" << num(x) << "\" y1=\"" << num(kHeight - kBottom) << "\" x2=\"" << num(x) << "\" y2=\""
        << num(kHeight - kBottom + 4) << "\" stroke=\"black\"/>\n";
      o << text(x, kHeight - kBottom + 16, tick_label(v));
    }
  }
  o << text(kWidth / 2, kHeight - 10, axes.x_label);
  o << text(16, kHeight / 2, axes.y_label, "middle",
            " transform=\"rotate(-90 16 " + num(kHeight / 2) + ")\"");
  return o.str();
}

}  // namespace

std::string line_chart(const Axes& axes, const std::vector<Series>& series) {
  const Frame f{axes};
  std::ostringstream o;
  o << open_svg(kWidth, kHeight) << frame(axes, true);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    const auto& sr = series[s];
    std::string path;
    bool pen_down = false;
    for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
      if (!std::isfinite(sr.y[i])) {
        pen_down = false;
        continue;
      }
      path += (pen_down ? " L" : " M") + num(f.px(sr.x[i])) + " " + num(f.py(sr.y[i]));
      pen_down = true;
      o << "<circle cx=\"" << num(f.px(sr.x[i])) << "\" cy=\"" << num(f.py(sr.y[i])) << "\" r=\"2.5\" fill=\""
        << color << "\"/>\n";
    }
    if (!path.empty()) {
      o << "<path d=\"" << path.substr(1) << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\"/>\n";
    }
    const double ly = kTop + 4 + 14.0 * static_cast<double>(s);
    o << "<line x1=\"" << num(kWidth - kRight - 110) << "\" y1=\"" << num(ly) << "\" x2=\""
      << num(kWidth - kRight - 94) << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
      << "\" stroke-width=\"2\"/>\n";
    o << text(kWidth - kRight - 90, ly + 4, sr.name, "start");
  }
  o << "</svg>\n";
  return o.str();
}

std::string bar_chart(const Axes& axes, const std::vector<std::string>& categories,
                      const std::vector<double>& values) {
  const Frame f{axes};
  std::ostringstream o;
  o << open_svg(kWidth, kHeight) << frame(axes, false);
  const double n = static_cast<double>(std::max<std::size_t>(1, categories.size()));
  const double slot = (kWidth - kLeft - kRight) / n;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const double v = i < values.size() ? values[i] : 0.0;
    const double x = kLeft + slot * (static_cast<double>(i) + 0.15);
    const double y = f.py(std::clamp(v, axes.y_min, axes.y_max));
    o << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(slot * 0.7) << "\" height=\""
      << num(kHeight - kBottom - y) << "\" fill=\"" << kPalette[0] << "\"/>\n";
    o << text(x + slot * 0.35, kHeight - kBottom + 16, categories[i]);
  }
  o << "</svg>\n";
  return o.str();
}

std::string heatmap(const std::string& title, const std::vector<std::string>& row_names,
                    const std::vector<std::string>& col_names, const std::vector<double>& values,
                    double lo, double hi) {
  constexpr double cell = 36, left = 70, top = 40;
  const double w = left + cell * static_cast<double>(col_names.size()) + 20;
  const double h = top + cell * static_cast<double>(row_names.size()) + 40;
  std::ostringstream o;
  o << open_svg(w, h) << text(w / 2, 20, title, "middle", " font-size=\"13\"");
  for (std::size_t r = 0; r < row_names.size(); ++r) {
    const double y = top + cell * static_cast<double>(r);
    o << text(left - 6, y + cell / 2 + 4, row_names[r], "end");
    for (std::size_t c = 0; c < col_names.size(); ++c) {
      const double x = left + cell * static_cast<double>(c);
      const double v = values[r * col_names.size() + c];
      std::string fill = "#cccccc";
      std::string label = "NA";
      if (std::isfinite(v)) {
        const double t = hi > lo ? std::clamp((v - lo) / (hi - lo), 0.0, 1.0) : 0.5;
        char buf[16];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(255 - 225 * t)),
                      static_cast<int>(std::lround(255 - 175 * t)), static_cast<int>(std::lround(255 - 80 * t)));
        fill = buf;
        std::snprintf(buf, sizeof buf, "%.2f", v);
        label = buf;
      }
      o << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cell) << "\" height=\""
        << num(cell) << "\" fill=\"" << fill << "\" stroke=\"white\"/>\n";
      o << text(x + cell / 2, y + cell / 2 + 4, label, "middle", " font-size=\"9\"");
    }
  }
  const double label_y = top + cell * static_cast<double>(row_names.size()) + 16;
  for (std::size_t c = 0; c < col_names.size(); ++c) {
    o << text(left + cell * (static_cast<double>(c) + 0.5), label_y, col_names[c]);
  }
  o << "</svg>\n";
  return o.str();
}

std::string hstack(const std::vector<std::string>& panels) {
  std::ostringstream body;
  double x = 0, height = 0;
  for (const auto& p : panels) {
    // Every panel from this file opens with width/height attributes on the first line.
    const auto attr = [&](const char* key) {
      const auto at = p.find(key);
      return at == std::string::npos ? 0.0 : std::stod(p.substr(at + std::char_traits<char>::length(key)));
    };
    const double w = attr("width=\""), h = attr("height=\"");
    const auto inner_begin = p.find('\n') + 1;
    const auto inner_end = p.rfind("</svg>");
    body << "<g transform=\"translate(" << num(x) << " 0)\">\n"
         << p.substr(inner_begin, inner_end - inner_begin) << "</g>\n";
    x += w;
    height = std::max(height, h);
  }
  return open_svg(x, height) + body.str() + "</svg>\n";
}

}  // namespace ict::cli
