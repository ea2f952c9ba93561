#include "run_context.h"

#include <iostream>

#include "featgen/errors.h"

#ifndef FEATGEN_GIT_DESCRIBE
#define FEATGEN_GIT_DESCRIBE "unknown"
#endif

namespace featgen::cli {

EventLog::EventLog(const std::filesystem::path& path, bool quiet) : quiet_(quiet) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path);
  if (!out_) throw IoError("cannot write " + path.string());
}

void EventLog::operator()(const nlohmann::json& event) {
  out_ << event.dump() << '\n';
  out_.flush();
  if (quiet_) return;
  nlohmann::json brief = event;
  if (brief.contains("metrics")) {
    const auto m = brief["metrics"];
    brief["metrics"] = {{"miou", m["miou"]}, {"class_acc", m["class_acc"]}, {"pixel_acc", m["pixel_acc"]}};
  }
  std::cerr << brief.dump() << '\n';
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("corrupt JSON in " + path.string() + ": " + e.what());
  }
}

void require_artifact(const std::filesystem::path& path, const std::string& producer) {
  if (!std::filesystem::exists(path))
    throw MissingArtifactError("missing " + path.string() + " (run '" + producer + "' first)");
}

void finish_run(const RunContext& ctx, const std::filesystem::path& dir, const std::string& command,
                const std::vector<std::filesystem::path>& artifacts) {
  const nlohmann::json resolved = ctx.config.to_json();
  write_json(dir / "config.json", resolved);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& a : artifacts) files.push_back(std::filesystem::relative(a, ctx.out).generic_string());
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
  write_json(dir / "run_manifest.json", {{"command", command},
                                         {"argv", ctx.argv},
                                         {"config_hash", config_hash(resolved)},
                                         {"git_describe", FEATGEN_GIT_DESCRIBE},
                                         {"seed", ctx.config.seed},
                                         {"wall_time_s", wall},
                                         {"artifacts", files}});
}

void note(const RunContext& ctx, const std::string& message) {
  if (!ctx.quiet) std::cerr << message << '\n';
}

}  // namespace featgen::cli
