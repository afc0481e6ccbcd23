#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "diec/errors.hpp"
#include "diec/tensor.hpp"

namespace diec {

namespace svgdetail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Rgb {
  int r, g, b;
};

inline std::string hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

inline Rgb lerp(Rgb a, Rgb b, double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {static_cast<int>(std::lround(a.r + (b.r - a.r) * t)),
          static_cast<int>(std::lround(a.g + (b.g - a.g) * t)),
          static_cast<int>(std::lround(a.b + (b.b - a.b) * t))};
}

}  // namespace svgdetail

struct SvgSeries {
  std::string label;
  std::vector<double> x, y;
  std::string color = "#d95f02";
};

// Minimal hand-emitted line chart; no external assets, no timestamps.
inline std::string svg_line_chart(const std::string& title, const std::string& xlabel,
                                  const std::string& ylabel,
                                  const std::vector<SvgSeries>& series, int width = 720,
                                  int height = 420) {
  const double ml = 64, mr = 16, mt = 40, mb = 48;
  const double pw = width - ml - mr, ph = height - mt - mb;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!any) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        any = true;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  const double yr = ymax - ymin;
  ymin -= 0.05 * yr;
  ymax += 0.05 * yr;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
       "\" height=\"" + std::to_string(height) + "\" font-family=\"sans-serif\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + svgdetail::num(width / 2.0) +
       "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + title + "</text>\n";
  // axes
  s += "<line x1=\"" + svgdetail::num(ml) + "\" y1=\"" + svgdetail::num(mt + ph) + "\" x2=\"" +
       svgdetail::num(ml + pw) + "\" y2=\"" + svgdetail::num(mt + ph) +
       "\" stroke=\"#444\"/>\n";
  s += "<line x1=\"" + svgdetail::num(ml) + "\" y1=\"" + svgdetail::num(mt) + "\" x2=\"" +
       svgdetail::num(ml) + "\" y2=\"" + svgdetail::num(mt + ph) + "\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    double xv = xmin + (xmax - xmin) * i / 5.0;
    double yv = ymin + (ymax - ymin) * i / 5.0;
    s += "<text x=\"" + svgdetail::num(px(xv)) + "\" y=\"" + svgdetail::num(mt + ph + 18) +
         "\" text-anchor=\"middle\" font-size=\"11\">" + svgdetail::short_num(xv) +
         "</text>\n";
    s += "<text x=\"" + svgdetail::num(ml - 6) + "\" y=\"" + svgdetail::num(py(yv) + 4) +
         "\" text-anchor=\"end\" font-size=\"11\">" + svgdetail::short_num(yv) + "</text>\n";
    s += "<line x1=\"" + svgdetail::num(ml) + "\" y1=\"" + svgdetail::num(py(yv)) +
         "\" x2=\"" + svgdetail::num(ml + pw) + "\" y2=\"" + svgdetail::num(py(yv)) +
         "\" stroke=\"#eee\"/>\n";
  }
  s += "<text x=\"" + svgdetail::num(ml + pw / 2) + "\" y=\"" +
       svgdetail::num(height - 10.0) + "\" text-anchor=\"middle\" font-size=\"12\">" + xlabel +
       "</text>\n";
  s += "<text x=\"16\" y=\"" + svgdetail::num(mt + ph / 2) +
       "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
       svgdetail::num(mt + ph / 2) + ")\">" + ylabel + "</text>\n";

  double ly = mt + 8;
  for (const auto& ser : series) {
    std::string pts;
    for (size_t i = 0; i < ser.x.size(); ++i) {
      if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i])) continue;
      pts += svgdetail::num(px(ser.x[i])) + "," + svgdetail::num(py(ser.y[i])) + " ";
    }
    s += "<polyline fill=\"none\" stroke=\"" + ser.color + "\" stroke-width=\"1.8\" points=\"" +
         pts + "\"/>\n";
    s += "<rect x=\"" + svgdetail::num(ml + pw - 150) + "\" y=\"" + svgdetail::num(ly - 8) +
         "\" width=\"12\" height=\"4\" fill=\"" + ser.color + "\"/>\n";
    s += "<text x=\"" + svgdetail::num(ml + pw - 132) + "\" y=\"" + svgdetail::num(ly - 2) +
         "\" font-size=\"11\">" + ser.label + "</text>\n";
    ly += 16;
  }
  s += "</svg>\n";
  return s;
}

// Heatmap over (row label, column value) cells with a two-color ramp.
// NaN cells render grey.
inline std::string svg_heatmap(const std::string& title, const std::vector<std::string>& rows,
                               const std::vector<int>& cols, const Tensord& vals,
                               svgdetail::Rgb lo = {255, 255, 255},
                               svgdetail::Rgb hi = {230, 97, 1}) {
  if (vals.rank() != 2 || vals.dim(0) != rows.size() || vals.dim(1) != cols.size())
    throw shape_error("svg_heatmap: value grid does not match labels");
  const double cell = std::max(6.0, std::min(22.0, 640.0 / std::max<size_t>(1, cols.size())));
  const double ml = 64, mt = 40, mb = 60, mr = 16;
  const int width = static_cast<int>(ml + cell * cols.size() + mr);
  const int height = static_cast<int>(mt + cell * rows.size() + mb);

  double vmin = 0, vmax = 1;
  bool any = false;
  for (size_t i = 0; i < vals.numel(); ++i) {
    if (!std::isfinite(vals[i])) continue;
    if (!any) {
      vmin = vmax = vals[i];
      any = true;
    }
    vmin = std::min(vmin, vals[i]);
    vmax = std::max(vmax, vals[i]);
  }
  if (vmax <= vmin) vmax = vmin + 1;

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
       "\" height=\"" + std::to_string(height) + "\" font-family=\"sans-serif\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + svgdetail::num(width / 2.0) +
       "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + title + "</text>\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    s += "<text x=\"" + svgdetail::num(ml - 6) + "\" y=\"" +
         svgdetail::num(mt + cell * r + cell * 0.7) +
         "\" text-anchor=\"end\" font-size=\"11\">" + rows[r] + "</text>\n";
    for (size_t c = 0; c < cols.size(); ++c) {
      double v = vals.at2(r, c);
      std::string fill = std::isfinite(v)
                             ? svgdetail::hex(svgdetail::lerp(lo, hi, (v - vmin) / (vmax - vmin)))
                             : "#bbbbbb";
      s += "<rect x=\"" + svgdetail::num(ml + cell * c) + "\" y=\"" +
           svgdetail::num(mt + cell * r) + "\" width=\"" + svgdetail::num(cell) +
           "\" height=\"" + svgdetail::num(cell) + "\" fill=\"" + fill + "\"/>\n";
    }
  }
  const size_t step = std::max<size_t>(1, cols.size() / 10);
  for (size_t c = 0; c < cols.size(); c += step)
    s += "<text x=\"" + svgdetail::num(ml + cell * c + cell / 2) + "\" y=\"" +
         svgdetail::num(mt + cell * rows.size() + 16) +
         "\" text-anchor=\"middle\" font-size=\"10\">" + std::to_string(cols[c]) + "</text>\n";
  s += "<text x=\"" + svgdetail::num(ml) + "\" y=\"" +
       svgdetail::num(mt + cell * rows.size() + 40) + "\" font-size=\"11\">min " +
       svgdetail::short_num(vmin) + "</text>\n";
  s += "<text x=\"" + svgdetail::num(ml + 120) + "\" y=\"" +
       svgdetail::num(mt + cell * rows.size() + 40) + "\" font-size=\"11\">max " +
       svgdetail::short_num(vmax) + "</text>\n";
  s += "</svg>\n";
  return s;
}

// Binary PGM (P5) grid of [-1, 1] grayscale images with a mid-grey separator.
inline std::string pgm_grid(const Tensorf& images, int cols) {
  if (images.rank() != 4 || images.dim(1) != 1) throw shape_error("pgm_grid: expects N x 1 x H x W");
  if (cols < 1) throw param_error("pgm_grid: cols must be >= 1");
  const int N = static_cast<int>(images.dim(0));
  const int H = static_cast<int>(images.dim(2)), W = static_cast<int>(images.dim(3));
  const int rows = (N + cols - 1) / cols;
  const int gw = cols * (W + 1) + 1, gh = rows * (H + 1) + 1;
  std::vector<unsigned char> canvas(static_cast<size_t>(gw) * gh, 128);
  for (int n = 0; n < N; ++n) {
    const int gy = (n / cols) * (H + 1) + 1, gx = (n % cols) * (W + 1) + 1;
    const float* src = images.data() + static_cast<size_t>(n) * H * W;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double v = (std::clamp<double>(src[y * W + x], -1.0, 1.0) + 1.0) * 0.5 * 255.0;
        canvas[static_cast<size_t>(gy + y) * gw + gx + x] =
            static_cast<unsigned char>(std::lround(v));
      }
  }
  std::string out = "P5\n" + std::to_string(gw) + " " + std::to_string(gh) + "\n255\n";
  out.append(reinterpret_cast<const char*>(canvas.data()), canvas.size());
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open for write: " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw data_error("write failed: " + path);
}

}  // namespace diec
