#include "davr/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "davr/image.hpp"

namespace davr {

namespace {

struct Color {
  uint8_t r, g, b;
};

const Color kSeries[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                         {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {127, 127, 127}};

// 5x7 glyphs for axis labels, one bit per pixel, row-major from the top.
struct Glyph {
  char ch;
  uint8_t rows[7];
};
const Glyph kFont[] = {
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
    {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
};

const Glyph* find_glyph(char c) {
  for (const Glyph& g : kFont)
    if (g.ch == c) return &g;
  return nullptr;
}

struct Canvas {
  ImageU8 img;

  Canvas(int w, int h) {
    img.width = w;
    img.height = h;
    img.pixels.assign(static_cast<size_t>(w) * h * 3, 255);
  }

  void set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    img.at(y, x, 0) = c.r;
    img.at(y, x, 1) = c.g;
    img.at(y, x, 2) = c.b;
  }

  void line(int x0, int y0, int x1, int y1, Color c) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
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

  void thick_point(int x, int y, Color c) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) set(x + dx, y + dy, c);
  }

  void text(int x, int y, const std::string& s, Color c) {
    for (char ch : s) {
      if (const Glyph* g = find_glyph(ch)) {
        for (int ry = 0; ry < 7; ++ry)
          for (int rx = 0; rx < 5; ++rx)
            if (g->rows[ry] & (1 << (4 - rx))) set(x + rx, y + ry, c);
      }
      x += 6;
    }
  }
};

std::string fmt1(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

void plot_cmc(const std::vector<metrics::EvalReport>& reports,
              const std::filesystem::path& out_dir, const std::vector<std::string>& labels) {
  if (reports.empty()) throw std::invalid_argument("plot_cmc: no reports to plot");
  std::filesystem::create_directories(out_dir);

  size_t k_max = 0;
  for (const auto& r : reports) k_max = std::max(k_max, r.cmc.size());
  if (k_max == 0) throw std::invalid_argument("plot_cmc: reports carry empty CMC curves");

  // CSV twin first: one row per (report, rank)
  {
    std::ofstream csv(out_dir / "cmc.csv");
    if (!csv) throw std::runtime_error("plot_cmc: cannot write cmc.csv");
    csv << "report,rank,match_rate\n";
    for (size_t ri = 0; ri < reports.size(); ++ri) {
      std::string name = ri < labels.size() ? labels[ri] : std::to_string(ri);
      for (size_t k = 0; k < reports[ri].cmc.size(); ++k)
        csv << name << "," << (k + 1) << "," << reports[ri].cmc[k] << "\n";
    }
  }

  const int width = 640, height = 480;
  const int left = 56, right = 20, top = 20, bottom = 44;
  const int plot_w = width - left - right, plot_h = height - top - bottom;
  Canvas canvas(width, height);
  Color axis{40, 40, 40}, grid{220, 220, 220};

  auto px = [&](double rank) {
    double t = k_max > 1 ? (rank - 1.0) / (static_cast<double>(k_max) - 1.0) : 0.0;
    return left + static_cast<int>(std::lround(t * plot_w));
  };
  auto py = [&](double rate) {
    return top + static_cast<int>(std::lround((1.0 - rate) * plot_h));
  };

  for (int i = 0; i <= 5; ++i) {
    double rate = i / 5.0;
    canvas.line(left, py(rate), left + plot_w, py(rate), grid);
    canvas.text(left - 30, py(rate) - 3, fmt1(rate), axis);
  }
  int rank_step = std::max<int>(1, static_cast<int>(k_max) / 10);
  for (size_t k = 1; k <= k_max; k += static_cast<size_t>(rank_step)) {
    canvas.line(px(static_cast<double>(k)), top, px(static_cast<double>(k)), top + plot_h, grid);
    canvas.text(px(static_cast<double>(k)) - 3, top + plot_h + 8, std::to_string(k), axis);
  }
  canvas.line(left, top, left, top + plot_h, axis);
  canvas.line(left, top + plot_h, left + plot_w, top + plot_h, axis);
  canvas.text(left + plot_w / 2 - 12, height - 14, "rk", axis);

  for (size_t ri = 0; ri < reports.size(); ++ri) {
    Color c = kSeries[ri % (sizeof(kSeries) / sizeof(kSeries[0]))];
    const auto& cmc = reports[ri].cmc;
    for (size_t k = 0; k + 1 < cmc.size(); ++k)
      canvas.line(px(static_cast<double>(k + 1)), py(cmc[k]), px(static_cast<double>(k + 2)),
                  py(cmc[k + 1]), c);
    for (size_t k = 0; k < cmc.size(); ++k)
      canvas.thick_point(px(static_cast<double>(k + 1)), py(cmc[k]), c);
    // legend swatch
    int ly = top + 10 + static_cast<int>(ri) * 12;
    canvas.line(left + plot_w - 60, ly, left + plot_w - 40, ly, c);
    canvas.text(left + plot_w - 34, ly - 3, std::to_string(ri), axis);
  }

  write_png(out_dir / "cmc.png", canvas.img);
}

}  // namespace davr
