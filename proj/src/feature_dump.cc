#include "featgen/feature_dump.h"

#include <fstream>

#include "featgen/binary_io.h"
#include "featgen/errors.h"
#include "featgen/runtime.h"

namespace featgen {

void write_feature_dump(const std::filesystem::path& path, std::span<const GanSample> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("FDMP", 4);
  out.put(static_cast<char>(kFeatureDumpVersion));
  write_u32(out, static_cast<uint32_t>(records.size()));
  for (const auto& r : records) {
    const Tensor& f = r.feature.data;
    write_u32(out, f.c);
    write_u32(out, f.h);
    write_u32(out, f.w);
    write_u32(out, r.mask.height());
    write_u32(out, r.mask.width());
    out.write(reinterpret_cast<const char*>(r.mask.labels().data()), static_cast<std::streamsize>(r.mask.size()));
    for (double v : f.data) write_f32(out, static_cast<float>(v));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<GanSample> read_feature_dump(const std::filesystem::path& path, int num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "FDMP") throw IoError("not a feature dump: " + path.string());
  const int version = in.get();
  if (version != kFeatureDumpVersion)
    throw IoError("unsupported feature dump version " + std::to_string(version) + " in " + path.string());
  const uint32_t count = read_u32(in);
  std::vector<GanSample> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t c = read_u32(in), h = read_u32(in), w = read_u32(in);
    const uint32_t H = read_u32(in), W = read_u32(in);
    if (c == 0 || h == 0 || w == 0 || H % h != 0 || W % w != 0 || H / h != W / w || c > 4096 || H > 8192 || W > 8192)
      throw IoError("corrupt record " + std::to_string(i) + " in " + path.string());
    GanSample s;
    s.mask = LabelMask(static_cast<int>(H), static_cast<int>(W), num_classes);
    if (!in.read(reinterpret_cast<char*>(s.mask.labels().data()), static_cast<std::streamsize>(s.mask.size())))
      throw IoError("truncated feature dump: " + path.string());
    s.mask.validate();
    s.feature = FeatureTensor{Tensor(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)),
                              static_cast<int>(H / h), "cut"};
    for (double& v : s.feature.data.data) v = read_f32(in);
    out.push_back(std::move(s));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in " + path.string());
  return out;
}

std::vector<GanSample> extract_feature_pool(const SegModel& model, std::span<const Sample> samples, int count,
                                            int crop, std::mt19937_64& rng) {
  if (samples.empty()) throw EmptySourceError("extract_feature_pool: no samples");
  if (count < 0) throw RangeError("extract_feature_pool: negative count");
  if (crop <= 0 || crop % model.config().stride != 0)
    throw ConfigError("patch size must be a positive multiple of the stride");
  struct Draw {
    size_t index;
    int y0, x0;
    bool flip;
  };
  std::vector<Draw> draws(count);
  std::uniform_int_distribution<size_t> pick(0, samples.size() - 1);
  std::bernoulli_distribution coin(0.5);
  for (auto& d : draws) {
    d.index = pick(rng);
    const Sample& s = samples[d.index];
    if (s.mask.height() < crop || s.mask.width() < crop) throw ShapeError("sample smaller than patch size");
    d.y0 = std::uniform_int_distribution<int>(0, s.mask.height() - crop)(rng);
    d.x0 = std::uniform_int_distribution<int>(0, s.mask.width() - crop)(rng);
    d.flip = coin(rng);
  }
  std::vector<GanSample> pool(count);
  parallel_for(draws.size(), [&](size_t i) {
    const Draw& d = draws[i];
    const Sample& s = samples[d.index];
    Tensor img(3, crop, crop);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) img.at(c, y, x) = s.image.data.at(c, d.y0 + y, d.x0 + x);
    LabelMask mask = s.mask.crop(d.y0, d.x0, crop, crop);
    if (d.flip) {
      img = hflip(img);
      mask = mask.hflip();
    }
    FeatureTensor f = model.encode(ImageTensor(std::move(img)));
    for (double& v : f.data.data) v = static_cast<float>(v);
    pool[i] = GanSample{std::move(mask), std::move(f)};
  });
  return pool;
}

}  // namespace featgen
