#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "featgen/types.h"

namespace featgen {

// Binary portable graymap / pixmap (P5 / P6) with maxval 255.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 for P5, 3 for P6
  std::vector<uint8_t> pixels;  // interleaved, row-major
};

RawImage read_netpbm(const std::filesystem::path& path);
void write_netpbm(const std::filesystem::path& path, const RawImage& image);

// Mask files: P5, pixel value = class id, 255 = ignore.
LabelMask read_mask_pgm(const std::filesystem::path& path, int num_classes);
void write_mask_pgm(const std::filesystem::path& path, const LabelMask& mask);

// Image files: P6, channel values scaled by 255 and rounded.
ImageTensor read_image_ppm(const std::filesystem::path& path);
void write_image_ppm(const std::filesystem::path& path, const ImageTensor& image);

}  // namespace featgen
