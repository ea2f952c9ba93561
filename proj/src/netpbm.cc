#include "featgen/netpbm.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "featgen/errors.h"

namespace featgen {

namespace {

int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) throw IoError("malformed netpbm header: " + path.string());
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    if (v > (1 << 20)) throw IoError("netpbm dimension too large: " + path.string());
    c = in.get();
  }
  // exactly one whitespace byte separates the header from the raster
  if (c == EOF || !std::isspace(c)) throw IoError("malformed netpbm header: " + path.string());
  return v;
}

}  // namespace

RawImage read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2];
  if (!in.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw IoError("not a binary P5/P6 file: " + path.string());
  RawImage img;
  img.channels = magic[1] == '5' ? 1 : 3;
  img.width = read_header_int(in, path);
  img.height = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (maxval != 255) throw IoError("unsupported maxval " + std::to_string(maxval) + " in " + path.string());
  if (img.width <= 0 || img.height <= 0) throw IoError("empty image: " + path.string());
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size())))
    throw IoError("truncated raster: " + path.string());
  return img;
}

void write_netpbm(const std::filesystem::path& path, const RawImage& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

LabelMask read_mask_pgm(const std::filesystem::path& path, int num_classes) {
  RawImage raw = read_netpbm(path);
  if (raw.channels != 1) throw IoError("mask file must be P5: " + path.string());
  LabelMask mask(raw.height, raw.width, num_classes);
  mask.labels() = std::move(raw.pixels);
  mask.validate();
  return mask;
}

void write_mask_pgm(const std::filesystem::path& path, const LabelMask& mask) {
  write_netpbm(path, RawImage{mask.width(), mask.height(), 1, mask.labels()});
}

ImageTensor read_image_ppm(const std::filesystem::path& path) {
  const RawImage raw = read_netpbm(path);
  if (raw.channels != 3) throw IoError("image file must be P6: " + path.string());
  Tensor t(3, raw.height, raw.width);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(c, y, x) = raw.pixels[(static_cast<size_t>(y) * raw.width + x) * 3 + c] / 255.0;
  return ImageTensor(std::move(t));
}

void write_image_ppm(const std::filesystem::path& path, const ImageTensor& image) {
  const Tensor& t = image.data;
  RawImage raw{t.w, t.h, 3, std::vector<uint8_t>(static_cast<size_t>(t.w) * t.h * 3)};
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int c = 0; c < 3; ++c)
        raw.pixels[(static_cast<size_t>(y) * t.w + x) * 3 + c] =
            static_cast<uint8_t>(std::lround(std::clamp(t.at(c, y, x), 0.0, 1.0) * 255.0));
  write_netpbm(path, raw);
}

}  // namespace featgen
