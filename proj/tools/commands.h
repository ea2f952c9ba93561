#pragma once

#include <optional>
#include <string>

#include "run_context.h"

namespace featgen::cli {

struct AugmentedOptions {
  std::optional<double> real_fraction;
  std::optional<bool> ohnm;
  std::optional<int> max_iter;
  std::string name = "augmented";
};

void cmd_make_dataset(const RunContext& ctx);
// Trains from scratch, or fine-tunes `init` with the augmented schedule on real data only.
void cmd_train_baseline(const RunContext& ctx, const std::string& init, const std::string& name);
void cmd_train_generator(const RunContext& ctx);
void cmd_train_augmented(const RunContext& ctx, const AugmentedOptions& options);
void cmd_eval(const RunContext& ctx, const std::string& model, const std::string& split, const std::string& name);
void cmd_stats(const RunContext& ctx);
void cmd_pseudo_gt(const RunContext& ctx, const std::string& split);
void cmd_plot(const RunContext& ctx);
void cmd_sweep(const RunContext& ctx, std::optional<int> max_iter);

}  // namespace featgen::cli
