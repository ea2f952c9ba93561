#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "featgen/feature_gan.h"
#include "featgen/seg_model.h"
#include "featgen/toy_scenes.h"

namespace featgen {

// Patch pool file:
//   "FDMP", u8 version (1), u32 count, then per record
//   u32 C, u32 h, u32 w,
//   mask: u32 H, u32 W, H*W u8 labels (row-major),
//   feature: C*h*w f32, channel-major.
// All integers little-endian. The stride is H / h.
inline constexpr uint8_t kFeatureDumpVersion = 1;

void write_feature_dump(const std::filesystem::path& path, std::span<const GanSample> records);
std::vector<GanSample> read_feature_dump(const std::filesystem::path& path, int num_classes);

// Draws `count` random crop x crop windows (with a random horizontal flip)
// from `samples` and pairs each mask crop with the encoder feature of the
// image crop. Features are rounded to f32 so a dump round-trips exactly.
std::vector<GanSample> extract_feature_pool(const SegModel& model, std::span<const Sample> samples, int count,
                                            int crop, std::mt19937_64& rng);

}  // namespace featgen
