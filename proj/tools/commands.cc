#include "commands.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "chart.h"
#include "featgen/checkpoint.h"
#include "featgen/errors.h"
#include "featgen/feature_dump.h"
#include "featgen/feature_stats.h"
#include "featgen/mask_sources.h"
#include "featgen/netpbm.h"
#include "featgen/runtime.h"
#include "featgen/training.h"

namespace featgen::cli {

namespace fs = std::filesystem;

namespace {

std::vector<Sample> load_samples(const RunContext& ctx, const std::string& split) {
  require_artifact(ctx.data_dir() / "manifest.json", "make-dataset");
  return load_split(ctx.data_dir() / split, ctx.config.model.num_classes);
}

SegModel load_baseline(const RunContext& ctx) {
  require_artifact(ctx.baseline_model(), "train-baseline");
  return load_seg_model(ctx.baseline_model());
}

FeatureGan load_generator(const RunContext& ctx) {
  require_artifact(ctx.generator_model(), "train-generator");
  return FeatureGan::load(ctx.generator_model());
}

nlohmann::json training_report(const TrainResult& r) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : r.history) history.push_back({{"iter", e.iter}, {"metrics", e.metrics.to_json()}});
  return {{"history", history}, {"final", r.final_metrics.to_json()}};
}

std::vector<LabelMask> masks_of(std::span<const Sample> samples) {
  std::vector<LabelMask> out;
  for (const auto& s : samples) out.push_back(s.mask);
  return out;
}

MaskSourceConfig build_mask_sources(const RunContext& ctx, std::span<const Sample> train, nlohmann::json* report) {
  const auto& spec = ctx.config.mask_sources;
  MaskSourceConfig m;
  m.primary = MaskProvider("train", masks_of(train));
  m.primary_parts = spec.primary_parts;
  m.additional_parts = spec.additional_parts;
  m.crop_height = m.crop_width = spec.crop;
  for (const auto& s : spec.additional) {
    fs::path dir;
    if (!s.split.empty()) {
      require_artifact(ctx.data_dir() / "manifest.json", "make-dataset");
      dir = ctx.data_dir() / s.split / "masks";
    } else {
      dir = fs::path(s.dir).is_absolute() ? fs::path(s.dir) : ctx.out / s.dir;
    }
    IngestReport rep;
    MaskProvider p = ingest_mask_dir(dir, ctx.config.model.num_classes, &rep);
    if (report) (*report)[s.name] = rep.to_json();
    for (const auto& r : rep.rejected) note(ctx, "rejected mask " + r.file + ": " + r.reason);
    m.additional.push_back({MaskProvider(s.name, p.masks()), s.weight});
  }
  return m;
}

nlohmann::json optional_delta(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_null() || b.is_null()) return nullptr;
  return b.get<double>() - a.get<double>();
}

nlohmann::json compare_metrics(const nlohmann::json& base, const nlohmann::json& aug) {
  nlohmann::json iou = nlohmann::json::array(), acc = nlohmann::json::array();
  for (size_t k = 0; k < base["per_class_iou"].size(); ++k) {
    iou.push_back(optional_delta(base["per_class_iou"][k], aug["per_class_iou"][k]));
    acc.push_back(optional_delta(base["per_class_acc"][k], aug["per_class_acc"][k]));
  }
  const size_t rare = base["per_class_iou"].size() - 1;
  return {{"baseline", base},
          {"augmented", aug},
          {"delta_miou", aug["miou"].get<double>() - base["miou"].get<double>()},
          {"delta_class_acc", aug["class_acc"].get<double>() - base["class_acc"].get<double>()},
          {"delta_pixel_acc", aug["pixel_acc"].get<double>() - base["pixel_acc"].get<double>()},
          {"delta_fwiou", aug["fwiou"].get<double>() - base["fwiou"].get<double>()},
          {"delta_per_class_iou", iou},
          {"delta_per_class_acc", acc},
          {"rare_class", rare},
          {"rare_class_iou_delta", iou[rare]}};
}

double sigmoid_mean(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data) s += 1.0 / (1.0 + std::exp(-v));
  return s / static_cast<double>(t.size());
}

std::string rho_tag(double r) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(2);
  o << r;
  return o.str();
}

}  // namespace

void cmd_make_dataset(const RunContext& ctx) {
  const fs::path dir = ctx.data_dir();
  note(ctx, "writing dataset to " + dir.string());
  nlohmann::json manifest = build_split(ctx.config.dataset, ctx.config.splits, dir);
  finish_run(ctx, dir, "make-dataset", {dir / "manifest.json"});
}

void cmd_train_baseline(const RunContext& ctx, const std::string& init, const std::string& name) {
  const auto train = load_samples(ctx, "train");
  const auto val = load_samples(ctx, ctx.config.eval.split);
  const fs::path dir = ctx.out / (name.empty() ? (init.empty() ? "baseline" : "finetune") : name);
  EventLog log(dir / "train_log.jsonl", ctx.quiet);
  TrainResult result;
  if (init.empty()) {
    SegModel model(ctx.config.model);
    result = train_baseline(ctx.config.baseline, model, train, val, std::ref(log));
    save_seg_model(dir / "model.fgs", model);
  } else {
    fs::path p = fs::path(init).is_absolute() || fs::exists(init) ? fs::path(init) : ctx.out / init;
    require_artifact(p, "train-baseline");
    SegModel model = load_seg_model(p);
    if (model.config().to_json() != [&] {
          SegModelConfig c = ctx.config.model;
          c.seed = model.config().seed;
          return c.to_json();
        }())
      throw ConfigError("checkpoint " + p.string() + " does not match the model section of the config");
    TrainConfig t = ctx.config.augmented;
    t.batch.real_fraction = 1.0;
    result = train_baseline(t, model, train, val, std::ref(log));
    save_seg_model(dir / "model.fgs", model);
  }
  write_json(dir / "report.json", training_report(result));
  finish_run(ctx, dir, "train-baseline", {dir / "model.fgs", dir / "report.json", dir / "train_log.jsonl"});
}

void cmd_train_generator(const RunContext& ctx) {
  const SegModel model = load_baseline(ctx);
  const auto train = load_samples(ctx, "train");
  const fs::path dir = ctx.out / "generator";
  const uint64_t encoder_before = model.encoder_checksum();

  std::mt19937_64 rng = derive_rng(ctx.config.seed, "pool");
  note(ctx, "extracting " + std::to_string(ctx.config.pool_size) + " feature patches");
  const auto pool = extract_feature_pool(model, train, ctx.config.pool_size, ctx.config.mask_sources.crop, rng);
  write_feature_dump(dir / "feature_pool.fdmp", pool);

  FeatureGan gan(ctx.config.generator);
  EventLog log(dir / "train_log.jsonl", ctx.quiet);
  const auto history = train_generator(gan, pool, ctx.config.generator_training, std::ref(log));
  gan.save(dir / "model.fgs");

  std::ofstream losses(dir / "losses.jsonl");
  for (size_t i = 0; i < history.size(); ++i) {
    nlohmann::json j = history[i].to_json();
    j["step"] = i + 1;
    losses << j.dump() << '\n';
  }

  const size_t window = std::min<size_t>(50, history.size());
  auto mean_l1 = [&](size_t first) {
    double s = 0.0;
    for (size_t i = first; i < first + window; ++i) s += history[i].l1_recon;
    return s / static_cast<double>(window);
  };
  const double early = mean_l1(0);
  const double late = mean_l1(history.size() - window);
  write_json(dir / "report.json", {{"steps", history.size()},
                                   {"pool_size", pool.size()},
                                   {"l1_recon_ma50_at_step50", early},
                                   {"l1_recon_ma50_final", late},
                                   {"l1_recon_drop", 1.0 - late / early},
                                   {"final", history.back().to_json()},
                                   {"encoder_checksum_before", encoder_before},
                                   {"encoder_checksum_after", model.encoder_checksum()}});
  finish_run(ctx, dir, "train-generator",
             {dir / "feature_pool.fdmp", dir / "model.fgs", dir / "losses.jsonl", dir / "report.json"});
}

void cmd_train_augmented(const RunContext& ctx, const AugmentedOptions& options) {
  TrainConfig t = ctx.config.augmented;
  if (options.real_fraction) t.batch.real_fraction = *options.real_fraction;
  if (options.ohnm) t.ohnm.enabled = *options.ohnm;
  if (options.max_iter) t.schedule.max_iter = *options.max_iter;
  t.validate();

  const fs::path dir = ctx.out / options.name;
  SegModel model = ctx.config.augmented_from_scratch ? SegModel(ctx.config.model) : load_baseline(ctx);
  const auto train = load_samples(ctx, "train");
  const auto val = load_samples(ctx, ctx.config.eval.split);

  std::optional<FeatureGan> gan;
  std::optional<MaskSourceConfig> masks;
  nlohmann::json ingest = nlohmann::json::object();
  if (t.batch.syn_count() > 0) {
    gan = load_generator(ctx);
    masks = build_mask_sources(ctx, train, &ingest);
  }

  EventLog log(dir / "train_log.jsonl", ctx.quiet);
  const TrainResult result = train_augmented(t, model, gan ? &*gan : nullptr, masks ? &*masks : nullptr, train,
                                             val, std::ref(log));
  save_seg_model(dir / "model.fgs", model);
  write_json(dir / "report.json", training_report(result));

  std::vector<fs::path> artifacts = {dir / "model.fgs", dir / "report.json", dir / "train_log.jsonl"};
  const fs::path base_report = ctx.out / "baseline" / "report.json";
  if (fs::exists(base_report)) {
    nlohmann::json cmp = compare_metrics(read_json(base_report)["final"], result.final_metrics.to_json());
    cmp["training"] = t.to_json();
    cmp["mask_sources"] = ingest;
    write_json(dir / "comparison.json", cmp);
    artifacts.push_back(dir / "comparison.json");
  }
  finish_run(ctx, dir, "train-augmented", artifacts);
}

void cmd_eval(const RunContext& ctx, const std::string& model_path, const std::string& split,
              const std::string& name) {
  const fs::path p = fs::path(model_path).is_absolute() ? fs::path(model_path) : ctx.out / model_path;
  require_artifact(p, "train-baseline or train-augmented");
  const SegModel model = load_seg_model(p);
  const std::string s = split.empty() ? ctx.config.eval.split : split;
  const auto samples = load_samples(ctx, s);
  const fs::path dir = ctx.out / name;
  write_json(dir / "report.json", {{"model", model_path}, {"split", s}, {"metrics", evaluate(model, samples).to_json()}});
  finish_run(ctx, dir, "eval", {dir / "report.json"});
}

void cmd_stats(const RunContext& ctx) {
  const SegModel model = load_baseline(ctx);
  const FeatureGan gan = load_generator(ctx);
  const auto val = load_samples(ctx, ctx.config.eval.split);
  const fs::path dir = ctx.out / "stats";
  const auto& ev = ctx.config.eval;

  std::mt19937_64 rng = derive_rng(ctx.config.seed, "stats");
  std::mt19937_64 rng_z = derive_rng(ctx.config.seed, "stats_z");
  const auto patches = extract_feature_pool(model, val, ev.stats_samples, ctx.config.mask_sources.crop, rng);
  std::vector<FeatureTensor> real, fake, zero;
  std::vector<LabelMask> masks;
  for (const auto& p : patches) {
    real.push_back(p.feature);
    masks.push_back(p.mask);
    fake.push_back(gan.generate(p.mask, gan.sample_latent(rng_z)));
    FeatureTensor z = p.feature;
    std::fill(z.data.data.begin(), z.data.data.end(), 0.0);
    zero.push_back(std::move(z));
  }

  nlohmann::json stages = nlohmann::json::array();
  stages.push_back(stage_stats("cut/real", real, masks, model).to_json());
  stages.push_back(stage_stats("cut/generated", fake, masks, model).to_json());
  // Zero features have no direction, so only the frozen-head score applies.
  stages.push_back({{"stage_tag", "cut/zero"}, {"frozen_head", frozen_head_score(zero, masks, model).to_json()}});

  std::vector<FeatureTensor> val_features;
  for (const auto& s : val) val_features.push_back(model.encode(s.image));
  const MetricBundle via_head = frozen_head_score(val_features, masks_of(val), model);
  const MetricBundle direct = evaluate(model, val);

  std::vector<int64_t> counts(model.config().num_classes, 0);
  int64_t total = 0;
  for (const auto& m : masks)
    for (uint8_t v : m.labels())
      if (v != kIgnoreLabel) {
        ++counts[v];
        ++total;
      }
  const double majority = static_cast<double>(*std::max_element(counts.begin(), counts.end())) / total;

  // Spread across latent draws for a handful of masks.
  const size_t n_modes = std::min<size_t>(8, masks.size());
  double variance = 0.0, min_pair_dist = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < n_modes; ++i) {
    std::vector<FeatureTensor> draws;
    for (int j = 0; j < ev.latent_samples; ++j) draws.push_back(gan.generate(masks[i], gan.sample_latent(rng_z)));
    const size_t n = draws[0].data.size();
    double v = 0.0;
    for (size_t e = 0; e < n; ++e) {
      double m = 0.0, m2 = 0.0;
      for (const auto& d : draws) {
        m += d.data.data[e];
        m2 += d.data.data[e] * d.data.data[e];
      }
      m /= draws.size();
      v += m2 / draws.size() - m * m;
    }
    variance += v / static_cast<double>(n);
    Tensor diff = draws[0].data;
    scale_inplace(diff, -1.0);
    add_inplace(diff, draws[1].data);
    min_pair_dist = std::min(min_pair_dist, l2_norm(diff));
  }
  variance /= static_cast<double>(n_modes);

  double d_real = 0.0, d_fake = 0.0, d_swapped = 0.0;
  const auto& disc = gan.discriminator();
  for (size_t i = 0; i < masks.size(); ++i) {
    d_real += sigmoid_mean(disc.discriminate(masks[i], real[i]));
    d_fake += sigmoid_mean(disc.discriminate(masks[i], fake[i]));
    d_swapped += sigmoid_mean(disc.discriminate(masks[(i + 1) % masks.size()], real[i]));
  }
  const double n = static_cast<double>(masks.size());

  const std::vector<FeatureTensor> shown = {fake[0], gan.generate(masks[0], gan.sample_latent(rng_z))};
  const auto files = render_feature_maps(real[0], shown, ev.render_channels, masks[0], model, dir / "maps");

  write_json(dir / "report.json",
             {{"stages", stages},
              {"samples", masks.size()},
              {"frozen_head_real_full_split", via_head.to_json()},
              {"baseline_eval", direct.to_json()},
              {"frozen_head_matches_baseline_eval", via_head == direct},
              {"majority_class_pixel_acc", majority},
              {"latent_variance", variance},
              {"latent_min_pair_l2", min_pair_dist},
              {"disc_mean_real", d_real / n},
              {"disc_mean_fake", d_fake / n},
              {"disc_mean_swapped", d_swapped / n},
              {"rendered", files.size()}});
  finish_run(ctx, dir, "stats", {dir / "report.json"});
}

void cmd_pseudo_gt(const RunContext& ctx, const std::string& split) {
  const SegModel model = load_baseline(ctx);
  const std::string s = split.empty() ? ctx.config.eval.pseudo_gt_split : split;
  const auto samples = load_samples(ctx, s);
  const fs::path dir = ctx.out / "pseudo_gt";
  const PseudoGtParams params{ctx.config.eval.pseudo_gt_threshold};

  std::vector<std::optional<LabelMask>> out(samples.size());
  std::vector<int64_t> filled(samples.size(), 0);
  parallel_for(samples.size(), [&](size_t i) {
    const Tensor probs = softmax_probs(model.predict(samples[i].image));
    try {
      out[i] = pseudo_gt(probs, params);
    } catch (const NoConfidentPixelError&) {
      return;
    }
    for (size_t p = 0; p < probs.plane(); ++p) {
      double mx = 0.0;
      for (int k = 0; k < probs.c; ++k) mx = std::max(mx, probs.data[k * probs.plane() + p]);
      if (mx <= params.threshold) ++filled[i];
    }
  });

  ConfusionMatrix agree(model.config().num_classes);
  int written = 0, skipped = 0;
  int64_t filled_total = 0, pixels = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (!out[i]) {
      ++skipped;
      continue;
    }
    write_mask_pgm(dir / "masks" / (samples[i].name + ".pgm"), *out[i]);
    agree.accumulate(*out[i], samples[i].mask);
    filled_total += filled[i];
    pixels += static_cast<int64_t>(out[i]->size());
    ++written;
  }
  nlohmann::json report{{"split", s},
                        {"threshold", params.threshold},
                        {"written", written},
                        {"skipped_no_confident_pixel", skipped},
                        {"filled_fraction", pixels ? static_cast<double>(filled_total) / pixels : 0.0}};
  if (written > 0) report["agreement_with_gt"] = compute_metrics(agree).to_json();
  write_json(dir / "report.json", report);
  finish_run(ctx, dir, "pseudo-gt", {dir / "report.json", dir / "masks"});
}

void cmd_plot(const RunContext& ctx) {
  const fs::path cmp_path = ctx.out / "augmented" / "comparison.json";
  require_artifact(cmp_path, "train-augmented");
  const fs::path dir = ctx.out / "plot";
  fs::create_directories(dir);
  const nlohmann::json cmp = read_json(cmp_path);

  std::vector<double> share;
  const fs::path manifest = ctx.data_dir() / "manifest.json";
  if (fs::exists(manifest)) {
    const auto hist = read_json(manifest)["splits"]["train"]["class_pixel_histogram"];
    double total = 0.0;
    for (const auto& v : hist) total += v.get<double>();
    for (const auto& v : hist) share.push_back(v.get<double>() / total);
  }

  std::ofstream delta(dir / "per_class_delta.tsv");
  delta << "class\tpixel_share\tbaseline_iou\taugmented_iou\tdelta_iou\n";
  Series scatter{"delta_iou", {}};
  for (size_t k = 0; k < cmp["delta_per_class_iou"].size(); ++k) {
    const auto& d = cmp["delta_per_class_iou"][k];
    delta << k << '\t' << (k < share.size() ? share[k] : NAN) << '\t' << cmp["baseline"]["per_class_iou"][k]
          << '\t' << cmp["augmented"]["per_class_iou"][k] << '\t' << d << '\n';
    if (!d.is_null() && k < share.size()) scatter.points.push_back({std::log10(share[k]), d.get<double>()});
  }
  render_scatter(dir / "per_class_delta.ppm", {scatter});

  std::vector<std::pair<std::string, fs::path>> runs = {{"baseline", ctx.out / "baseline" / "report.json"},
                                                        {"augmented", ctx.out / "augmented" / "report.json"}};
  if (fs::is_directory(ctx.out / "sweep")) {
    std::vector<fs::path> subs;
    for (const auto& e : fs::directory_iterator(ctx.out / "sweep"))
      if (fs::exists(e.path() / "report.json")) subs.push_back(e.path());
    std::sort(subs.begin(), subs.end());
    for (const auto& s : subs) runs.push_back({"sweep/" + s.filename().string(), s / "report.json"});
  }
  std::ofstream curves(dir / "curves.tsv");
  curves << "run\titer\tmiou\tclass_acc\tpixel_acc\n";
  std::vector<Series> miou_series, acc_series;
  for (const auto& [name, path] : runs) {
    if (!fs::exists(path)) continue;
    Series m{name, {}}, a{name, {}};
    for (const auto& e : read_json(path)["history"]) {
      const auto& mt = e["metrics"];
      curves << name << '\t' << e["iter"] << '\t' << mt["miou"] << '\t' << mt["class_acc"] << '\t'
             << mt["pixel_acc"] << '\n';
      m.points.push_back({e["iter"].get<double>(), mt["miou"].get<double>()});
      a.points.push_back({e["iter"].get<double>(), mt["class_acc"].get<double>()});
    }
    // The baseline starts from scratch; its curve would flatten the others.
    if (name == "baseline") continue;
    miou_series.push_back(std::move(m));
    acc_series.push_back(std::move(a));
  }
  render_line_chart(dir / "curves_miou.ppm", miou_series);
  render_line_chart(dir / "curves_class_acc.ppm", acc_series);

  std::ofstream legend(dir / "legend.tsv");
  legend << "series\tr\tg\tb\n";
  for (size_t i = 0; i < miou_series.size(); ++i) {
    const auto c = series_color(i);
    legend << miou_series[i].name << '\t' << int(c[0]) << '\t' << int(c[1]) << '\t' << int(c[2]) << '\n';
  }
  finish_run(ctx, dir, "plot",
             {dir / "per_class_delta.tsv", dir / "curves.tsv", dir / "per_class_delta.ppm", dir / "curves_miou.ppm",
              dir / "curves_class_acc.ppm", dir / "legend.tsv"});
}

void cmd_sweep(const RunContext& ctx, std::optional<int> max_iter) {
  const fs::path dir = ctx.out / "sweep";
  const double rho_ohnm = ctx.config.augmented.batch.real_fraction;
  struct Run {
    std::string name;
    double rho;
    bool ohnm;
  };
  std::vector<Run> runs;
  for (double r : {1.0, 0.9, 0.7, 0.5}) runs.push_back({"rho_" + rho_tag(r), r, ctx.config.augmented.ohnm.enabled});
  runs.push_back({"ohnm_on", rho_ohnm, true});
  runs.push_back({"ohnm_off", rho_ohnm, false});

  std::map<std::string, std::string> done;  // training config -> run name
  nlohmann::json entries = nlohmann::json::object();
  for (const auto& r : runs) {
    AugmentedOptions o{r.rho, r.ohnm, max_iter, "sweep/" + r.name};
    TrainConfig t = ctx.config.augmented;
    t.batch.real_fraction = r.rho;
    t.ohnm.enabled = r.ohnm;
    if (max_iter) t.schedule.max_iter = *max_iter;
    const std::string key = t.to_json().dump();
    if (auto it = done.find(key); it != done.end()) {
      note(ctx, "sweep: " + r.name + " reuses " + it->second);
      fs::remove_all(dir / r.name);
      fs::copy(dir / it->second, dir / r.name, fs::copy_options::recursive);
    } else {
      note(ctx, "sweep: " + r.name);
      cmd_train_augmented(ctx, o);
      done[key] = r.name;
    }
    const auto rep = read_json(dir / r.name / "report.json");
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& e : rep["history"])
      curve.push_back({{"iter", e["iter"]}, {"miou", e["metrics"]["miou"]}, {"class_acc", e["metrics"]["class_acc"]}});
    entries[r.name] = {{"real_fraction", r.rho}, {"ohnm", r.ohnm}, {"curve", curve}, {"final", rep["final"]}};
  }
  const double on = entries["ohnm_on"]["final"]["class_acc"].get<double>();
  const double off = entries["ohnm_off"]["final"]["class_acc"].get<double>();
  write_json(dir / "summary.json", {{"runs", entries}, {"ohnm_class_acc_delta", on - off}});
  finish_run(ctx, dir, "sweep", {dir / "summary.json"});
}

}  // namespace featgen::cli
