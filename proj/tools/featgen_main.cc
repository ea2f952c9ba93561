// featgen: experiment runner.
//
// Exit codes:
//   0  success
//   1  usage error (bad flags or subcommand)
//   2  config error (schema violation, unknown key, invalid value)
//   3  missing artifact (a prerequisite file or directory is absent)
//   4  non-finite loss during training
//   5  I/O error (unreadable or corrupt file, write failure)
//   6  validation error (shape, range, empty source, no confident pixel)
//   7  unexpected internal error

#include <CLI11.hpp>
#include <iostream>

#include "commands.h"
#include "featgen/errors.h"

namespace {

using featgen::cli::RunContext;

int run(int argc, char** argv) {
  CLI::App app{"Feature synthesis for semantic segmentation: toy-scale experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out = "run";
  bool quiet = false;
  app.add_option("--config", config_path, "Experiment config (JSON)");
  app.add_option("--seed", seed, "Overrides the config seed");
  app.add_option("--out", out, "Run directory");
  app.add_flag("--quiet", quiet, "Suppress progress output");

  auto* make = app.add_subcommand("make-dataset", "Render the toy train/val/extra splits");
  auto* base = app.add_subcommand("train-baseline", "Train the segmentation model on real data");
  std::string init, base_name;
  base->add_option("--init", init, "Fine-tune this checkpoint with the augmented schedule");
  base->add_option("--name", base_name, "Output subdirectory");
  auto* gen = app.add_subcommand("train-generator", "Extract feature patches and train the feature generator");
  auto* aug = app.add_subcommand("train-augmented", "Fine-tune with real and synthetic features");
  featgen::cli::AugmentedOptions aug_opts;
  std::string ohnm;
  aug->add_option("--real-fraction", aug_opts.real_fraction, "Real share of each batch")->check(CLI::Range(0.0, 1.0));
  aug->add_option("--ohnm", ohnm, "Override online hard mining")->check(CLI::IsMember({"on", "off"}));
  aug->add_option("--max-iter", aug_opts.max_iter, "Override the iteration count")->check(CLI::PositiveNumber);
  aug->add_option("--name", aug_opts.name, "Output subdirectory");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string model = "augmented/model.fgs", split, eval_name = "eval";
  eval->add_option("--model", model, "Checkpoint (relative to --out unless absolute)");
  eval->add_option("--split", split, "Dataset split");
  eval->add_option("--name", eval_name, "Output subdirectory");
  auto* stats = app.add_subcommand("stats", "Feature statistics and frozen-head scores");
  auto* pseudo = app.add_subcommand("pseudo-gt", "Build pseudo-GT masks from baseline posteriors");
  std::string pseudo_split;
  pseudo->add_option("--split", pseudo_split, "Dataset split to label");
  auto* plot = app.add_subcommand("plot", "Per-class deltas and metric curves");
  auto* sweep = app.add_subcommand("sweep", "Real-fraction and hard-mining ablations");
  std::optional<int> sweep_iters;
  sweep->add_option("--max-iter", sweep_iters, "Override the iteration count")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  RunContext ctx;
  if (!config_path.empty()) ctx.config = featgen::load_experiment_config(config_path);
  if (seed) {
    ctx.config.seed = *seed;
    ctx.config.resolve();
  }
  ctx.out = out;
  ctx.quiet = quiet;
  for (int i = 0; i < argc; ++i) ctx.argv.emplace_back(argv[i]);
  if (!ohnm.empty()) aug_opts.ohnm = ohnm == "on";

  if (*make) featgen::cli::cmd_make_dataset(ctx);
  if (*base) featgen::cli::cmd_train_baseline(ctx, init, base_name);
  if (*gen) featgen::cli::cmd_train_generator(ctx);
  if (*aug) featgen::cli::cmd_train_augmented(ctx, aug_opts);
  if (*eval) featgen::cli::cmd_eval(ctx, model, split, eval_name);
  if (*stats) featgen::cli::cmd_stats(ctx);
  if (*pseudo) featgen::cli::cmd_pseudo_gt(ctx, pseudo_split);
  if (*plot) featgen::cli::cmd_plot(ctx);
  if (*sweep) featgen::cli::cmd_sweep(ctx, sweep_iters);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const featgen::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const featgen::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return 3;
  } catch (const featgen::NonFiniteLossError& e) {
    std::cerr << "non-finite loss: " << e.what() << '\n';
    return 4;
  } catch (const featgen::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 5;
  } catch (const featgen::Error& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return 6;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 7;
  }
}
