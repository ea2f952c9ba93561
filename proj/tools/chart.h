#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace featgen::cli {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Minimal raster charts written as P6 files: a framed plot area with a zero
// line when the y range spans 0, one color per series, no text.
void render_line_chart(const std::filesystem::path& path, const std::vector<Series>& series, int width = 480,
                       int height = 320);
void render_scatter(const std::filesystem::path& path, const std::vector<Series>& series, int width = 480,
                    int height = 320);

// Color used for the i-th series, so legends in the TSV output can name it.
std::array<uint8_t, 3> series_color(size_t i);

}  // namespace featgen::cli
