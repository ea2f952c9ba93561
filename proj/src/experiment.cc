#include "featgen/experiment.h"

#include <cstdio>
#include <fstream>

#include "featgen/errors.h"
#include "featgen/runtime.h"

namespace featgen {

namespace {

const char* type_name(const nlohmann::json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_float() && !b.is_number_float() && b.is_number_integer());
  return std::string(type_name(a)) == type_name(b);
}

// Checks `doc` against the shape of `schema` (the resolved default config).
void check_against(const nlohmann::json& doc, const nlohmann::json& schema, const std::string& where) {
  if (!doc.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    const auto& expected = schema.at(key);
    if (!same_kind(value, expected))
      throw ConfigError("config key '" + path + "' must be " + type_name(expected) + ", got " + type_name(value));
    if (value.is_object()) check_against(value, expected, path);
  }
}

nlohmann::json without(nlohmann::json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

nlohmann::json train_to_json(const TrainConfig& c, bool augmented) {
  nlohmann::json j = without(c.to_json(), {"seed"});
  if (!augmented) j = without(j, {"real_fraction", "epsilon", "ohnm"});
  return j;
}

nlohmann::json source_to_json(const AdditionalSourceSpec& s) {
  nlohmann::json j{{"name", s.name}, {"weight", s.weight}};
  if (!s.split.empty()) j["split"] = s.split;
  if (!s.dir.empty()) j["dir"] = s.dir;
  return j;
}

AdditionalSourceSpec source_from_json(const nlohmann::json& j, size_t i) {
  const std::string where = "mask_sources.additional[" + std::to_string(i) + "]";
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const nlohmann::json schema{{"name", ""}, {"split", ""}, {"dir", ""}, {"weight", 1.0}};
  check_against(j, schema, where);
  AdditionalSourceSpec s;
  s.name = j.value("name", "");
  s.split = j.value("split", "");
  s.dir = j.value("dir", "");
  s.weight = j.value("weight", 1.0);
  if (s.split.empty() == s.dir.empty()) throw ConfigError(where + " needs exactly one of 'split' or 'dir'");
  if (s.name.empty()) s.name = s.split.empty() ? s.dir : s.split;
  return s;
}

void require_numbers(const nlohmann::json& j, const std::string& key) {
  for (const auto& v : j)
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must hold numbers");
}

}  // namespace

uint64_t derive_seed(uint64_t seed, std::string_view purpose) { return derive_rng(seed, purpose)(); }

ExperimentConfig::ExperimentConfig() {
  // Defaults of the reference run.
  baseline.batch = {8, 1.0};
  baseline.schedule = {0.02, 800, 0.9};
  baseline.eval_interval = 100;
  augmented.batch = {8, 0.7};
  augmented.schedule = {0.005, 300, 0.9};
  augmented.eval_interval = 50;
  augmented.epsilon = 1e-4;
  augmented.ohnm.enabled = true;
  generator_training.steps = 2000;
  mask_sources.additional = {{"extra", "extra", "", 1.0}};
  resolve();
}

void ExperimentConfig::resolve() {
  dataset.seed = derive_seed(seed, "dataset");
  model.num_classes = dataset.num_classes;
  model.seed = derive_seed(seed, "model");
  generator.num_classes = model.num_classes;
  generator.feature_channels = model.feature_channels;
  generator.stride = model.stride;
  generator.seed = derive_seed(seed, "generator");
  generator_training.seed = derive_seed(seed, "generator_training");
  baseline.batch.real_fraction = 1.0;
  baseline.seed = derive_seed(seed, "baseline");
  augmented.seed = derive_seed(seed, "augmented");
}

void ExperimentConfig::validate() const {
  dataset.validate();
  if (splits.train <= 0 || splits.val <= 0 || splits.extra < 0) throw ConfigError("dataset split sizes invalid");
  model.validate();
  generator.validate();
  if (generator_training.steps <= 0 || !(generator_training.lr > 0.0)) throw ConfigError("generator training invalid");
  if (pool_size < 2) throw ConfigError("generator.pool_size must be >= 2");
  baseline.validate();
  augmented.validate();
  if (mask_sources.primary_parts <= 0 || mask_sources.additional_parts < 0)
    throw ConfigError("mask_sources.ratio must be positive");
  if (mask_sources.crop <= 0 || mask_sources.crop % model.stride != 0)
    throw ConfigError("mask_sources.crop must be a positive multiple of the stride");
  if (mask_sources.crop > dataset.height || mask_sources.crop > dataset.width)
    throw ConfigError("mask_sources.crop exceeds the scene size");
  if (dataset.height % model.stride != 0 || dataset.width % model.stride != 0)
    throw ConfigError("scene size must be divisible by the model stride");
  for (const auto& s : mask_sources.additional) {
    if (!(s.weight > 0.0)) throw ConfigError("mask source weight must be positive");
    if (!s.split.empty() && s.split != "train" && s.split != "val" && s.split != "extra")
      throw ConfigError("mask source split must be train, val or extra");
  }
  if (eval.stats_samples <= 0 || eval.latent_samples < 2) throw ConfigError("eval sample counts invalid");
  for (int c : eval.render_channels)
    if (c < 0 || c >= model.feature_channels) throw ConfigError("eval.render_channels out of range");
  if (!(eval.pseudo_gt_threshold > 0.0 && eval.pseudo_gt_threshold < 1.0))
    throw ConfigError("eval.pseudo_gt_threshold must be in (0, 1)");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& s : mask_sources.additional) sources.push_back(source_to_json(s));
  nlohmann::json ds = without(dataset.to_json(), {"seed", "num_classes"});
  ds["num_classes"] = dataset.num_classes;
  ds["splits"] = {{"train", splits.train}, {"val", splits.val}, {"extra", splits.extra}};
  nlohmann::json gen = without(generator.to_json(), {"seed", "num_classes", "feature_channels", "stride"});
  gen["training"] = {{"steps", generator_training.steps},
                     {"lr", generator_training.lr},
                     {"beta1", generator_training.beta1},
                     {"beta2", generator_training.beta2},
                     {"pool_size", pool_size}};
  nlohmann::json aug = train_to_json(augmented, true);
  aug["from_scratch"] = augmented_from_scratch;
  return {{"seed", seed},
          {"dataset", ds},
          {"model", without(model.to_json(), {"seed", "num_classes"})},
          {"generator", gen},
          {"training", {{"baseline", train_to_json(baseline, false)}, {"augmented", aug}}},
          {"mask_sources",
           {{"additional", sources},
            {"ratio", {mask_sources.primary_parts, mask_sources.additional_parts}},
            {"crop", mask_sources.crop}}},
          {"eval",
           {{"split", eval.split},
            {"stats_samples", eval.stats_samples},
            {"latent_samples", eval.latent_samples},
            {"render_channels", eval.render_channels},
            {"pseudo_gt_threshold", eval.pseudo_gt_threshold},
            {"pseudo_gt_split", eval.pseudo_gt_split}}}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  nlohmann::json schema = c.to_json();
  // Sub-objects whose contents are checked separately.
  nlohmann::json shallow = j;
  if (shallow.contains("mask_sources") && shallow["mask_sources"].is_object())
    shallow["mask_sources"].erase("additional");
  check_against(shallow, schema, "");

  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      c.dataset = SceneConfig::from_json(d);
      if (d.contains("splits")) {
        const auto& s = d.at("splits");
        c.splits.train = s.value("train", c.splits.train);
        c.splits.val = s.value("val", c.splits.val);
        c.splits.extra = s.value("extra", c.splits.extra);
      }
    }
    if (j.contains("model")) c.model = SegModelConfig::from_json(j.at("model"));
    if (j.contains("generator")) {
      const auto& g = j.at("generator");
      c.generator = GeneratorConfig::from_json(g);
      if (g.contains("training")) {
        const auto& t = g.at("training");
        c.generator_training.steps = t.value("steps", c.generator_training.steps);
        c.generator_training.lr = t.value("lr", c.generator_training.lr);
        c.generator_training.beta1 = t.value("beta1", c.generator_training.beta1);
        c.generator_training.beta2 = t.value("beta2", c.generator_training.beta2);
        c.pool_size = t.value("pool_size", c.pool_size);
      }
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      if (t.contains("baseline")) {
        nlohmann::json merged = train_to_json(c.baseline, true);
        merged.update(t.at("baseline"));
        c.baseline = TrainConfig::from_json(merged);
      }
      if (t.contains("augmented")) {
        nlohmann::json merged = train_to_json(c.augmented, true);
        merged.update(t.at("augmented"));
        c.augmented_from_scratch = merged.value("from_scratch", false);
        merged.erase("from_scratch");
        c.augmented = TrainConfig::from_json(merged);
      }
    }
    if (j.contains("mask_sources")) {
      const auto& m = j.at("mask_sources");
      if (m.contains("additional")) {
        if (!m.at("additional").is_array()) throw ConfigError("mask_sources.additional must be an array");
        c.mask_sources.additional.clear();
        size_t i = 0;
        for (const auto& s : m.at("additional")) c.mask_sources.additional.push_back(source_from_json(s, i++));
      }
      if (m.contains("ratio")) {
        const auto& r = m.at("ratio");
        require_numbers(r, "mask_sources.ratio");
        if (r.size() != 2) throw ConfigError("mask_sources.ratio must have two entries");
        c.mask_sources.primary_parts = r[0].get<int>();
        c.mask_sources.additional_parts = r[1].get<int>();
      }
      c.mask_sources.crop = m.value("crop", c.mask_sources.crop);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval.split = e.value("split", c.eval.split);
      c.eval.stats_samples = e.value("stats_samples", c.eval.stats_samples);
      c.eval.latent_samples = e.value("latent_samples", c.eval.latent_samples);
      c.eval.render_channels = e.value("render_channels", c.eval.render_channels);
      c.eval.pseudo_gt_threshold = e.value("pseudo_gt_threshold", c.eval.pseudo_gt_threshold);
      c.eval.pseudo_gt_split = e.value("pseudo_gt_split", c.eval.pseudo_gt_split);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.resolve();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return experiment_from_json(j);
}

std::string config_hash(const nlohmann::json& resolved) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : resolved.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace featgen
