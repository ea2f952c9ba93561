#include "featgen/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "featgen/binary_io.h"
#include "featgen/errors.h"
#include "featgen/seg_model.h"

namespace featgen {

namespace {

nlohmann::json layout_of(std::span<const ParamSet* const> sets) {
  nlohmann::json layout = nlohmann::json::array();
  for (size_t s = 0; s < sets.size(); ++s)
    for (const auto& p : *sets[s]) layout.push_back({s, p.name, p.shape});
  return layout;
}

struct Header {
  nlohmann::json metadata;
  std::streamoff payload_offset = 0;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("not a model checkpoint (bad magic): " + path.string());
  const uint32_t n = read_u32(in);
  std::string text(n, '\0');
  if (!in.read(text.data(), n)) throw IoError("truncated checkpoint metadata: " + path.string());
  Header h;
  try {
    h.metadata = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("corrupt checkpoint metadata in " + path.string() + ": " + e.what());
  }
  h.payload_offset = in.tellg();
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, nlohmann::json metadata,
                     std::span<const ParamSet* const> sets) {
  metadata["param_layout"] = layout_of(sets);
  const std::string text = metadata.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 8);
  write_u32(out, static_cast<uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const ParamSet* ps : sets)
    for (const auto& p : *ps)
      for (double v : p.value) write_f32(out, static_cast<float>(v));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

nlohmann::json read_checkpoint_metadata(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
  return read_header(in, path).metadata;
}

void load_checkpoint_params(const std::filesystem::path& path, std::span<ParamSet* const> sets) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
  const Header h = read_header(in, path);
  std::vector<const ParamSet*> view(sets.begin(), sets.end());
  if (h.metadata.value("param_layout", nlohmann::json()) != layout_of(view))
    throw IoError("checkpoint parameter layout does not match the model: " + path.string());
  for (ParamSet* ps : sets)
    for (auto& p : *ps)
      for (double& v : p.value) v = static_cast<double>(read_f32(in));
  in.peek();
  if (!in.eof()) throw IoError("trailing bytes in checkpoint " + path.string());
}

void save_seg_model(const std::filesystem::path& path, const SegModel& model) {
  const ParamSet* sets[] = {&model.params()};
  save_checkpoint(path, {{"kind", "seg_model"}, {"config", model.config().to_json()}}, sets);
}

SegModel load_seg_model(const std::filesystem::path& path) {
  const auto meta = read_checkpoint_metadata(path);
  if (meta.value("kind", "") != "seg_model") throw IoError(path.string() + " is not a segmentation checkpoint");
  SegModel model(SegModelConfig::from_json(meta.at("config")));
  ParamSet* sets[] = {&model.params()};
  load_checkpoint_params(path, sets);
  return model;
}

}  // namespace featgen
