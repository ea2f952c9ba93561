#include "featgen/toy_scenes.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "featgen/errors.h"
#include "featgen/netpbm.h"

namespace featgen {

namespace {

const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::kRectangle: return "rectangle";
    case ShapeKind::kEllipse: return "ellipse";
    case ShapeKind::kBar: return "bar";
  }
  return "?";
}

ShapeKind shape_from_name(const std::string& n) {
  if (n == "rectangle") return ShapeKind::kRectangle;
  if (n == "ellipse") return ShapeKind::kEllipse;
  if (n == "bar") return ShapeKind::kBar;
  throw ConfigError("unknown shape '" + n + "'");
}

std::string index_name(uint64_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

void paint(LabelMask& mask, std::vector<int>& owner, int k, auto&& inside) {
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (inside(y, x)) {
        mask.at(y, x) = static_cast<uint8_t>(k);
        owner[static_cast<size_t>(y) * mask.width() + x] = k;
      }
}

}  // namespace

void SceneConfig::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("dataset grid size must be positive");
  if (num_classes < 2 || num_classes >= kIgnoreLabel) throw ConfigError("dataset.num_classes out of range");
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("dataset object range invalid");
  if (static_cast<int>(object_class_weights.size()) != num_classes - 1)
    throw ConfigError("dataset.object_class_weights must have num_classes - 1 entries");
  for (double w : object_class_weights)
    if (!(w > 0.0)) throw ConfigError("dataset.object_class_weights must be positive");
  if (shapes.empty()) throw ConfigError("dataset.shapes must not be empty");
  if (noise_sigma < 0.0 || texture_amplitude < 0.0) throw ConfigError("dataset noise/texture must be >= 0");
}

nlohmann::json SceneConfig::to_json() const {
  std::vector<std::string> shape_names;
  for (auto s : shapes) shape_names.emplace_back(shape_name(s));
  return {{"height", height},
          {"width", width},
          {"num_classes", num_classes},
          {"min_objects", min_objects},
          {"max_objects", max_objects},
          {"object_class_weights", object_class_weights},
          {"shapes", shape_names},
          {"noise_sigma", noise_sigma},
          {"texture_amplitude", texture_amplitude},
          {"seed", seed}};
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
  SceneConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.object_class_weights = j.value("object_class_weights", c.object_class_weights);
  if (j.contains("shapes")) {
    c.shapes.clear();
    for (const auto& s : j.at("shapes")) c.shapes.push_back(shape_from_name(s.get<std::string>()));
  }
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.texture_amplitude = j.value("texture_amplitude", c.texture_amplitude);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::array<double, 3> SceneConfig::class_color(int k) const {
  if (k == 0) return {0.45, 0.45, 0.45};
  // HSV with S = 0.55, V = 0.8 and evenly spaced hues.
  const double hue = 6.0 * static_cast<double>(k - 1) / static_cast<double>(num_classes - 1);
  const double v = 0.8, s = 0.55;
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(hue, 2.0) - 1.0));
  const double m = v - c;
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hue)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

double SceneConfig::texture_frequency(int k) const { return 2.0 + 1.5 * k; }

Scene generate_scene(const SceneConfig& config, uint64_t index) {
  config.validate();
  std::seed_seq seq{static_cast<uint32_t>(config.seed), static_cast<uint32_t>(config.seed >> 32),
                    static_cast<uint32_t>(index), static_cast<uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  const int H = config.height, W = config.width;

  Scene scene;
  scene.mask = LabelMask(H, W, config.num_classes, 0);
  std::vector<int> owner(static_cast<size_t>(H) * W, 0);

  std::uniform_int_distribution<int> n_objects(config.min_objects, config.max_objects);
  std::discrete_distribution<int> pick_class(config.object_class_weights.begin(), config.object_class_weights.end());
  std::uniform_int_distribution<size_t> pick_shape(0, config.shapes.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int count = n_objects(rng);
  for (int o = 0; o < count; ++o) {
    const int k = pick_class(rng) + 1;
    scene.object_classes.push_back(k);
    switch (config.shapes[pick_shape(rng)]) {
      case ShapeKind::kRectangle: {
        const int rh = std::min(H, 14 + static_cast<int>(unit(rng) * 21));
        const int rw = std::min(W, 14 + static_cast<int>(unit(rng) * 21));
        const int y0 = static_cast<int>(unit(rng) * (H - rh + 1));
        const int x0 = static_cast<int>(unit(rng) * (W - rw + 1));
        paint(scene.mask, owner, k, [&](int y, int x) { return y >= y0 && y < y0 + rh && x >= x0 && x < x0 + rw; });
        break;
      }
      case ShapeKind::kEllipse: {
        const double ry = 7.0 + 10.0 * unit(rng), rx = 7.0 + 10.0 * unit(rng);
        const double cy = unit(rng) * H, cx = unit(rng) * W;
        paint(scene.mask, owner, k, [&](int y, int x) {
          const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
          return dy * dy + dx * dx <= 1.0;
        });
        break;
      }
      case ShapeKind::kBar: {
        const int thick = 5 + static_cast<int>(unit(rng) * 5);
        const bool horizontal = unit(rng) < 0.5;
        const int along = horizontal ? W : H, across = horizontal ? H : W;
        const int len = std::min(along, 24 + static_cast<int>(unit(rng) * 33));
        const int a0 = static_cast<int>(unit(rng) * (along - len + 1));
        const int c0 = static_cast<int>(unit(rng) * (across - thick + 1));
        paint(scene.mask, owner, k, [&](int y, int x) {
          const int a = horizontal ? x : y, c = horizontal ? y : x;
          return a >= a0 && a < a0 + len && c >= c0 && c < c0 + thick;
        });
        break;
      }
    }
  }

  Tensor img(3, H, W);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int k = owner[static_cast<size_t>(y) * W + x];
      const auto base = config.class_color(k);
      const double theta = std::numbers::pi * k / config.num_classes;
      const double phase = 2.0 * std::numbers::pi * config.texture_frequency(k) *
                           (x * std::cos(theta) + y * std::sin(theta)) / W;
      const double tex = config.texture_amplitude * std::sin(phase);
      for (int c = 0; c < 3; ++c) {
        double v = base[c] + tex;
        if (config.noise_sigma > 0.0) v += config.noise_sigma * noise(rng);
        img.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  scene.image = ImageTensor(std::move(img));
  return scene;
}

nlohmann::json build_split(const SceneConfig& config, const SplitSizes& sizes, const std::filesystem::path& out) {
  config.validate();
  if (sizes.train < 0 || sizes.val < 0 || sizes.extra < 0) throw ConfigError("split sizes must be >= 0");
  nlohmann::json manifest{{"seed", config.seed}, {"config", config.to_json()}, {"splits", nlohmann::json::object()}};
  struct Part {
    const char* name;
    int count;
  };
  uint64_t next = 0;
  for (const Part& part : {Part{"train", sizes.train}, Part{"val", sizes.val}, Part{"extra", sizes.extra}}) {
    std::vector<int64_t> pixel_hist(config.num_classes, 0);
    std::vector<int64_t> object_hist(config.num_classes, 0);
    const auto dir = out / part.name;
    if (part.count > 0) {
      std::filesystem::create_directories(dir / "images");
      std::filesystem::create_directories(dir / "masks");
    }
    for (int i = 0; i < part.count; ++i) {
      const uint64_t index = next + static_cast<uint64_t>(i);
      const Scene scene = generate_scene(config, index);
      write_image_ppm(dir / "images" / (index_name(index) + ".ppm"), scene.image);
      write_mask_pgm(dir / "masks" / (index_name(index) + ".pgm"), scene.mask);
      for (uint8_t v : scene.mask.labels()) ++pixel_hist[v];
      for (int k : scene.object_classes) ++object_hist[k];
    }
    manifest["splits"][part.name] = {{"count", part.count},
                                     {"first_index", next},
                                     {"class_pixel_histogram", pixel_hist},
                                     {"object_class_counts", object_hist}};
    next += static_cast<uint64_t>(part.count);
  }
  std::filesystem::create_directories(out);
  std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
  return manifest;
}

std::vector<Sample> load_split(const std::filesystem::path& split_dir, int num_classes) {
  const auto image_dir = split_dir / "images";
  const auto mask_dir = split_dir / "masks";
  if (!std::filesystem::is_directory(image_dir) || !std::filesystem::is_directory(mask_dir))
    throw MissingArtifactError("dataset split not found: " + split_dir.string());
  std::vector<std::filesystem::path> images;
  for (const auto& e : std::filesystem::directory_iterator(image_dir))
    if (e.path().extension() == ".ppm") images.push_back(e.path());
  std::sort(images.begin(), images.end());
  std::vector<Sample> out;
  out.reserve(images.size());
  for (const auto& p : images) {
    const auto mask_path = mask_dir / (p.stem().string() + ".pgm");
    if (!std::filesystem::exists(mask_path)) throw MissingArtifactError("missing mask for " + p.string());
    Sample s{read_image_ppm(p), read_mask_pgm(mask_path, num_classes), p.stem().string()};
    if (s.image.height() != s.mask.height() || s.image.width() != s.mask.width())
      throw ShapeError("image/mask size mismatch for " + p.stem().string());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace featgen
