#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "featgen/experiment.h"

namespace featgen::cli {

struct RunContext {
  ExperimentConfig config;
  std::filesystem::path out = "run";
  bool quiet = false;
  std::vector<std::string> argv;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  std::filesystem::path data_dir() const { return out / "data"; }
  std::filesystem::path baseline_model() const { return out / "baseline" / "model.fgs"; }
  std::filesystem::path generator_model() const { return out / "generator" / "model.fgs"; }
};

// Appends one JSON object per line to a file and echoes a short form to stderr.
class EventLog {
 public:
  EventLog(const std::filesystem::path& path, bool quiet);
  void operator()(const nlohmann::json& event);

 private:
  std::ofstream out_;
  bool quiet_;
};

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);
// Throws MissingArtifactError naming the command that produces the file.
void require_artifact(const std::filesystem::path& path, const std::string& producer);
// Writes <dir>/config.json (the resolved config) and <dir>/run_manifest.json.
void finish_run(const RunContext& ctx, const std::filesystem::path& dir, const std::string& command,
                const std::vector<std::filesystem::path>& artifacts);
void note(const RunContext& ctx, const std::string& message);

}  // namespace featgen::cli
