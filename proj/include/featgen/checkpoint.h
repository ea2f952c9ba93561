#pragma once

#include <filesystem>
#include <json.hpp>
#include <span>

#include "featgen/params.h"

namespace featgen {

class SegModel;

// Binary model container:
//   bytes 0..7   magic "FGSMODL1"
//   u32 LE       metadata length n
//   n bytes      UTF-8 JSON metadata (config echo plus "param_layout")
//   f32 LE...    every parameter of every ParamSet, in registration order
//
// "param_layout" lists [set index, name, shape] for each blob and is checked on load.
inline constexpr char kCheckpointMagic[9] = "FGSMODL1";

void save_checkpoint(const std::filesystem::path& path, nlohmann::json metadata,
                     std::span<const ParamSet* const> sets);
nlohmann::json read_checkpoint_metadata(const std::filesystem::path& path);
// Fills `sets` (which must already have the layout recorded in the file).
void load_checkpoint_params(const std::filesystem::path& path, std::span<ParamSet* const> sets);

void save_seg_model(const std::filesystem::path& path, const SegModel& model);
SegModel load_seg_model(const std::filesystem::path& path);

}  // namespace featgen
