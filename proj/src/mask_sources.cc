#include "featgen/mask_sources.h"

#include <algorithm>
#include <limits>

#include "featgen/errors.h"
#include "featgen/netpbm.h"

namespace featgen {

MaskProvider::MaskProvider(std::string name, std::vector<LabelMask> masks)
    : name_(std::move(name)), masks_(std::move(masks)) {}

nlohmann::json IngestReport::to_json() const {
  nlohmann::json rej = nlohmann::json::array();
  for (const auto& r : rejected) rej.push_back({{"file", r.file}, {"reason", r.reason}});
  return {{"accepted", accepted}, {"rejected", rej}};
}

MaskProvider ingest_mask_dir(const std::filesystem::path& dir, int num_classes, IngestReport* report) {
  if (!std::filesystem::is_directory(dir)) throw MissingArtifactError("mask directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  IngestReport local;
  IngestReport& rep = report ? *report : local;
  std::vector<LabelMask> masks;
  for (const auto& f : files) {
    try {
      masks.push_back(read_mask_pgm(f, num_classes));
      ++rep.accepted;
    } catch (const Error& e) {
      rep.rejected.push_back({f.filename().string(), e.what()});
    }
  }
  return MaskProvider(dir.filename().string(), std::move(masks));
}

void MaskSourceConfig::validate() const {
  if (primary_parts <= 0 || additional_parts < 0) throw ConfigError("mask source ratio parts must be positive");
  if (crop_height <= 0 || crop_width <= 0) throw ConfigError("mask crop size must be positive");
  for (const auto& a : additional)
    if (!(a.weight > 0.0)) throw ConfigError("mask source '" + a.provider.name() + "' weight must be positive");
}

bool MaskSourceConfig::has_additional() const { return additional_parts > 0 && !additional.empty(); }

int additional_count(const MaskSourceConfig& config, int count) {
  if (!config.has_additional()) return 0;
  return count * config.additional_parts / (config.primary_parts + config.additional_parts);
}

namespace {

LabelMask random_crop(const LabelMask& m, int ch, int cw, std::mt19937_64& rng) {
  if (m.height() < ch || m.width() < cw)
    throw ShapeError("mask " + std::to_string(m.height()) + "x" + std::to_string(m.width()) +
                     " smaller than crop " + std::to_string(ch) + "x" + std::to_string(cw));
  std::uniform_int_distribution<int> dy(0, m.height() - ch), dx(0, m.width() - cw);
  const int y0 = dy(rng);
  const int x0 = dx(rng);
  return m.crop(y0, x0, ch, cw);
}

}  // namespace

std::vector<SampledMask> sample_masks(const MaskSourceConfig& config, int count, std::mt19937_64& rng) {
  config.validate();
  if (count < 0) throw RangeError("sample_masks: negative count");
  const int n_add = additional_count(config, count);
  const int n_primary = count - n_add;
  if (n_primary > 0 && config.primary.empty())
    throw EmptySourceError("primary mask source '" + config.primary.name() + "' is empty");

  std::vector<SampledMask> out;
  out.reserve(count);
  for (int i = 0; i < n_primary; ++i) {
    std::uniform_int_distribution<size_t> pick(0, config.primary.size() - 1);
    out.push_back({random_crop(config.primary[pick(rng)], config.crop_height, config.crop_width, rng), 0});
  }
  if (n_add == 0) return out;

  std::vector<double> weights;
  for (const auto& a : config.additional) weights.push_back(a.weight);
  std::discrete_distribution<int> pick_source(weights.begin(), weights.end());
  for (int i = 0; i < n_add; ++i) {
    const int s = pick_source(rng);
    const MaskProvider& p = config.additional[s].provider;
    if (p.empty()) throw EmptySourceError("additional mask source '" + p.name() + "' is empty");
    std::uniform_int_distribution<size_t> pick(0, p.size() - 1);
    out.push_back({random_crop(p[pick(rng)], config.crop_height, config.crop_width, rng), s + 1});
  }
  return out;
}

void PseudoGtParams::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("pseudo-GT threshold must be in (0, 1)");
}

LabelMask pseudo_gt(const Tensor& probs, const PseudoGtParams& params) {
  params.validate();
  const int K = probs.c, H = probs.h, W = probs.w;
  if (K < 2 || K >= kIgnoreLabel) throw RangeError("pseudo_gt: class count out of range");
  LabelMask out(H, W, K, kIgnoreLabel);
  std::vector<int> confident;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int best = 0;
      for (int k = 1; k < K; ++k)
        if (probs.at(k, y, x) > probs.at(best, y, x)) best = k;
      if (probs.at(best, y, x) > params.threshold) {
        out.at(y, x) = static_cast<uint8_t>(best);
        confident.push_back(y * W + x);
      }
    }
  if (confident.empty()) throw NoConfidentPixelError("pseudo_gt: no pixel has max posterior above threshold");
  if (confident.size() == static_cast<size_t>(H) * W) return out;

  const LabelMask seeds = out;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (seeds.at(y, x) != kIgnoreLabel) continue;
      // Grow square rings until no unseen pixel can be closer than the best.
      long best_d2 = std::numeric_limits<long>::max();
      int best_idx = -1;
      for (int r = 1; r < std::max(H, W); ++r) {
        for (int yy = std::max(0, y - r); yy <= std::min(H - 1, y + r); ++yy)
          for (int xx = std::max(0, x - r); xx <= std::min(W - 1, x + r); ++xx) {
            if (std::max(std::abs(yy - y), std::abs(xx - x)) != r || seeds.at(yy, xx) == kIgnoreLabel) continue;
            const long d2 = static_cast<long>(yy - y) * (yy - y) + static_cast<long>(xx - x) * (xx - x);
            const int idx = yy * W + xx;
            if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
              best_d2 = d2;
              best_idx = idx;
            }
          }
        if (best_idx >= 0 && best_d2 <= static_cast<long>(r + 1) * (r + 1) - 1) break;
      }
      out.at(y, x) = seeds.at(best_idx / W, best_idx % W);
    }
  return out;
}

}  // namespace featgen
