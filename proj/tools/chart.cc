#include "chart.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "featgen/netpbm.h"

namespace featgen::cli {

namespace {

constexpr int kMargin = 24;

struct Canvas {
  int w, h;
  std::vector<uint8_t> px;

  Canvas(int width, int height) : w(width), h(height), px(static_cast<size_t>(width) * height * 3, 255) {}

  void set(int x, int y, std::array<uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::copy(c.begin(), c.end(), px.begin() + (static_cast<size_t>(y) * w + x) * 3);
  }

  void line(int x0, int y0, int x1, int y1, std::array<uint8_t, 3> c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
};

struct Frame {
  double x_lo, x_hi, y_lo, y_hi;
  int w, h;
  int px(double x) const {
    return kMargin + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (w - 2 * kMargin)));
  }
  int py(double y) const {
    return h - kMargin - static_cast<int>(std::lround((y - y_lo) / (y_hi - y_lo) * (h - 2 * kMargin)));
  }
};

Frame frame_for(const std::vector<Series>& series, int w, int h) {
  Frame f{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), w, h};
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      f.x_lo = std::min(f.x_lo, x);
      f.x_hi = std::max(f.x_hi, x);
      f.y_lo = std::min(f.y_lo, y);
      f.y_hi = std::max(f.y_hi, y);
    }
  if (!std::isfinite(f.x_lo)) f = {0, 1, 0, 1, w, h};
  if (f.x_hi == f.x_lo) f.x_hi = f.x_lo + 1;
  if (f.y_hi == f.y_lo) f.y_hi = f.y_lo + 1e-3;
  const double pad = 0.05 * (f.y_hi - f.y_lo);
  f.y_lo -= pad;
  f.y_hi += pad;
  return f;
}

Canvas axes(const Frame& f) {
  Canvas c(f.w, f.h);
  const std::array<uint8_t, 3> black{0, 0, 0}, grey{190, 190, 190};
  c.line(kMargin, kMargin, kMargin, f.h - kMargin, black);
  c.line(kMargin, f.h - kMargin, f.w - kMargin, f.h - kMargin, black);
  if (f.y_lo < 0.0 && f.y_hi > 0.0) c.line(kMargin, f.py(0.0), f.w - kMargin, f.py(0.0), grey);
  return c;
}

void save(const std::filesystem::path& path, Canvas& c) { write_netpbm(path, RawImage{c.w, c.h, 3, c.px}); }

}  // namespace

std::array<uint8_t, 3> series_color(size_t i) {
  static const std::array<std::array<uint8_t, 3>, 6> palette = {
      {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75}}};
  return palette[i % palette.size()];
}

void render_line_chart(const std::filesystem::path& path, const std::vector<Series>& series, int width, int height) {
  const Frame f = frame_for(series, width, height);
  Canvas c = axes(f);
  for (size_t i = 0; i < series.size(); ++i) {
    const auto& p = series[i].points;
    for (size_t j = 1; j < p.size(); ++j)
      c.line(f.px(p[j - 1].first), f.py(p[j - 1].second), f.px(p[j].first), f.py(p[j].second), series_color(i));
  }
  save(path, c);
}

void render_scatter(const std::filesystem::path& path, const std::vector<Series>& series, int width, int height) {
  const Frame f = frame_for(series, width, height);
  Canvas c = axes(f);
  for (size_t i = 0; i < series.size(); ++i)
    for (const auto& [x, y] : series[i].points) {
      const int cx = f.px(x), cy = f.py(y);
      for (int d = -3; d <= 3; ++d) {
        c.line(cx - 3, cy + d, cx + 3, cy + d, series_color(i));
      }
    }
  save(path, c);
}

}  // namespace featgen::cli
