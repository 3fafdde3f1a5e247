// Copyright 2026 The StageRefine Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "stagerefine/config.h"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "stagerefine/errors.h"
#include "stagerefine/rng.h"

namespace stagerefine {
namespace {

using json = nlohmann::json;

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

template <typename T>
bool type_matches(const json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v.is_boolean();
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    return v.is_number_unsigned() ||
           (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  } else if constexpr (std::is_integral_v<T>) {
    return v.is_number_integer();
  } else if constexpr (std::is_floating_point_v<T>) {
    return v.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v.is_string();
  } else {
    return true;
  }
}

// Reads fields of one JSON object and remembers which keys were consumed so
// leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const json& object, std::string path)
      : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) {
      throw ConfigError("config field '" + (path_.empty() ? "<root>" : path_) +
                        "' must be an object");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    const auto it = object_.find(key);
    if (it == object_.end()) return;
    used_.insert(key);
    out = convert<T>(*it, join(path_, key));
  }

  template <typename T>
  void get_optional(const std::string& key, std::optional<T>& out) {
    const auto it = object_.find(key);
    if (it == object_.end()) return;
    used_.insert(key);
    if (it->is_null()) {
      out.reset();
    } else {
      out = convert<T>(*it, join(path_, key));
    }
  }

  // Returns an empty object when the key is absent.
  ObjectReader child(const std::string& key) {
    const auto it = object_.find(key);
    used_.insert(key);
    if (it == object_.end()) return ObjectReader(empty(), join(path_, key));
    return ObjectReader(*it, join(path_, key));
  }

  const json* raw(const std::string& key) {
    const auto it = object_.find(key);
    if (it == object_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& item : object_.items()) {
      if (used_.count(item.key()) == 0) {
        throw ConfigError("unknown config field '" +
                          join(path_, item.key()) + "'");
      }
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if (!type_matches<T>(v)) {
      throw ConfigError("config field '" + path + "' has the wrong type (" +
                        std::string(v.type_name()) + ")");
    }
    try {
      return v.get<T>();
    } catch (const json::exception& err) {
      throw ConfigError("config field '" + path + "': " + err.what());
    }
  }

 private:
  static const json& empty() {
    static const json kEmpty = json::object();
    return kEmpty;
  }

  const json& object_;
  std::string path_;
  std::set<std::string> used_;
};

void read_policy(ObjectReader r, AugmentationPolicy& p) {
  r.get("crop_scale_range", p.crop_scale_range);
  r.get("crop_ratio_range", p.crop_ratio_range);
  r.get("jitter_strengths", p.jitter_strengths);
  r.get("jitter_apply_prob", p.jitter_apply_prob);
  r.get("blur_sigma_range", p.blur_sigma_range);
  r.get("blur_apply_prob", p.blur_apply_prob);
  r.get("grayscale_prob", p.grayscale_prob);
  r.get("output_size", p.output_size);
  r.finish();
}

json write_policy(const AugmentationPolicy& p) {
  return {{"crop_scale_range", p.crop_scale_range},
          {"crop_ratio_range", p.crop_ratio_range},
          {"jitter_strengths", p.jitter_strengths},
          {"jitter_apply_prob", p.jitter_apply_prob},
          {"blur_sigma_range", p.blur_sigma_range},
          {"blur_apply_prob", p.blur_apply_prob},
          {"grayscale_prob", p.grayscale_prob},
          {"output_size", p.output_size}};
}

StagePlan read_stage_plan(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) {
    throw ConfigError("config field '" + path + "' must be a non-empty list");
  }
  std::vector<IterationPlan> entries;
  for (std::size_t i = 0; i < v.size(); ++i) {
    ObjectReader r(v[i], path + "[" + std::to_string(i) + "]");
    IterationPlan plan;
    r.get("iteration_epochs", plan.iteration_epochs);
    r.get("stage_epochs", plan.stage_epochs);
    r.finish();
    entries.push_back(std::move(plan));
  }
  try {
    return StagePlan(std::move(entries));
  } catch (const ConfigError& err) {
    throw ConfigError("config field '" + path + "': " + err.what());
  }
}

RunConfig from_json(const json& root) {
  RunConfig c;
  ObjectReader r(root, "");

  {
    ObjectReader d = r.child("dataset");
    d.get("variant", c.dataset.variant);
    d.get("path", c.dataset.path);
    ObjectReader b = d.child("blobs");
    BlobsOptions& o = c.dataset.blobs;
    b.get("num_samples", o.num_samples);
    b.get("num_test_samples", o.num_test_samples);
    b.get("num_classes", o.num_classes);
    b.get("image_size", o.image_size);
    b.get("pattern_amplitude", o.pattern_amplitude);
    b.get("pixel_noise", o.pixel_noise);
    b.get("orientation_jitter_deg", o.orientation_jitter_deg);
    b.get("tint_spread", o.tint_spread);
    b.get("seed", o.seed);
    b.finish();
    d.finish();
  }
  {
    ObjectReader n = r.child("noise");
    n.get("rate", c.noise.rate);
    n.get_optional("seed", c.noise.seed);
    n.get("rate_spread", c.noise.rate_spread);
    n.get("feature_projection_dim", c.noise.feature_projection_dim);
    n.finish();
  }
  PipelineConfig& p = c.pipeline;
  {
    ObjectReader e = r.child("encoder");
    e.get("architecture", p.encoder.architecture);
    e.get("input_height", p.encoder.input_height);
    e.get("input_width", p.encoder.input_width);
    e.get("input_channels", p.encoder.input_channels);
    e.get("embedding_dim", p.encoder.embedding_dim);
    e.get("projection_dim", p.encoder.projection_dim);
    e.get("num_classes", p.encoder.num_classes);
    e.get("base_width", p.encoder.base_width);
    e.get("hidden_width", p.encoder.hidden_width);
    e.finish();
  }
  {
    ObjectReader o = r.child("optimizer");
    o.get("momentum", p.optimizer.momentum);
    o.get("weight_decay", p.optimizer.weight_decay);
    o.finish();
  }
  {
    ObjectReader k = r.child("contrastive");
    k.get("epochs", p.contrastive.epochs);
    k.get("temperature", p.contrastive.temperature);
    k.get("batch_size", p.contrastive.batch_size);
    k.get("learning_rate", p.contrastive.learning_rate);
    read_policy(k.child("augmentation"), p.contrastive.policy);
    k.finish();
  }
  {
    ObjectReader t = r.child("train");
    TrainPhaseConfig& tc = p.refinery.train;
    t.get("warmup_epochs", tc.warmup_epochs);
    t.get("batch_size", tc.batch_size);
    t.get("warmup_learning_rate", tc.warmup_learning_rate);
    t.get("learning_rate", tc.learning_rate);
    t.get("loss_threshold", tc.loss_threshold);
    ObjectReader l = t.child("light_augmentation");
    l.get("padding", tc.light.padding);
    l.get("horizontal_flip", tc.light.horizontal_flip);
    l.finish();
    t.finish();
  }
  {
    ObjectReader f = r.child("refinery");
    f.get("iterations", p.refinery.iterations);
    f.get("copies_per_sample", p.refinery.copies_per_sample);
    if (const json* plan = f.raw("stage_plan")) {
      p.refinery.plan = read_stage_plan(*plan, "refinery.stage_plan");
    }
    read_policy(f.child("augmentation"), p.refinery.policy);
    f.finish();
  }
  r.get("master_seed", p.master_seed);
  r.get("output_dir", c.output_dir);
  r.finish();
  return c;
}

json to_json_value(const RunConfig& c) {
  const PipelineConfig& p = c.pipeline;
  const BlobsOptions& o = c.dataset.blobs;
  json plan = json::array();
  for (const IterationPlan& e : p.refinery.plan.entries()) {
    plan.push_back(
        {{"iteration_epochs", e.iteration_epochs},
         {"stage_epochs", e.stage_epochs}});
  }
  const TrainPhaseConfig& tc = p.refinery.train;
  return {
      {"dataset",
       {{"variant", c.dataset.variant},
        {"path", c.dataset.path},
        {"blobs",
         {{"num_samples", o.num_samples},
          {"num_test_samples", o.num_test_samples},
          {"num_classes", o.num_classes},
          {"image_size", o.image_size},
          {"pattern_amplitude", o.pattern_amplitude},
          {"pixel_noise", o.pixel_noise},
          {"orientation_jitter_deg", o.orientation_jitter_deg},
          {"tint_spread", o.tint_spread},
          {"seed", o.seed}}}}},
      {"noise",
       {{"rate", c.noise.rate},
        {"seed", c.noise.seed ? json(*c.noise.seed) : json(nullptr)},
        {"rate_spread", c.noise.rate_spread},
        {"feature_projection_dim", c.noise.feature_projection_dim}}},
      {"encoder",
       {{"architecture", p.encoder.architecture},
        {"input_height", p.encoder.input_height},
        {"input_width", p.encoder.input_width},
        {"input_channels", p.encoder.input_channels},
        {"embedding_dim", p.encoder.embedding_dim},
        {"projection_dim", p.encoder.projection_dim},
        {"num_classes", p.encoder.num_classes},
        {"base_width", p.encoder.base_width},
        {"hidden_width", p.encoder.hidden_width}}},
      {"optimizer",
       {{"momentum", p.optimizer.momentum},
        {"weight_decay", p.optimizer.weight_decay}}},
      {"contrastive",
       {{"epochs", p.contrastive.epochs},
        {"temperature", p.contrastive.temperature},
        {"batch_size", p.contrastive.batch_size},
        {"learning_rate", p.contrastive.learning_rate},
        {"augmentation", write_policy(p.contrastive.policy)}}},
      {"train",
       {{"warmup_epochs", tc.warmup_epochs},
        {"batch_size", tc.batch_size},
        {"warmup_learning_rate", tc.warmup_learning_rate},
        {"learning_rate", tc.learning_rate},
        {"loss_threshold", tc.loss_threshold},
        {"light_augmentation",
         {{"padding", tc.light.padding},
          {"horizontal_flip", tc.light.horizontal_flip}}}}},
      {"refinery",
       {{"iterations", p.refinery.iterations},
        {"copies_per_sample", p.refinery.copies_per_sample},
        {"stage_plan", plan},
        {"augmentation", write_policy(p.refinery.policy)}}},
      {"master_seed", p.master_seed},
      {"output_dir", c.output_dir}};
}

json parse_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& err) {
    throw ConfigError(source + " is not valid JSON: " + err.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  static const std::set<std::string> kVariants = {"blobs", "cifar10",
                                                  "cifar100"};
  if (kVariants.count(dataset.variant) == 0) {
    throw ConfigError("config field 'dataset.variant': unknown variant '" +
                      dataset.variant + "'");
  }
  if (noise.rate < 0.0 || noise.rate >= 1.0) {
    throw ConfigError("config field 'noise.rate' must lie in [0, 1)");
  }
  if (noise.rate_spread < 0.0) {
    throw ConfigError("config field 'noise.rate_spread' must be >= 0");
  }
  if (noise.feature_projection_dim < 1) {
    throw ConfigError("config field 'noise.feature_projection_dim' must be >= 1");
  }
  if (dataset.variant == "blobs") {
    const BlobsOptions& o = dataset.blobs;
    if (o.num_samples < 1 || o.num_test_samples < 1) {
      throw ConfigError("config field 'dataset.blobs.num_samples' and "
                        "'num_test_samples' must be positive");
    }
    if (o.num_classes < 2) {
      throw ConfigError("config field 'dataset.blobs.num_classes' must be >= 2");
    }
    if (o.image_size < 4) {
      throw ConfigError("config field 'dataset.blobs.image_size' must be >= 4");
    }
  }
  if (output_dir.empty()) {
    throw ConfigError("config field 'output_dir' must not be empty");
  }
  try {
    pipeline.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(std::string("invalid config: ") + err.what());
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  RunConfig c = from_json(parse_text(json_text, "config"));
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c = from_json(parse_text(ss.str(), path.string()));
  c.validate();
  return c;
}

std::string to_json(const RunConfig& config) {
  return to_json_value(config).dump(2) + "\n";
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json root = to_json_value(config);
  json* node = &root;
  std::stringstream parts(key);
  std::string part;
  std::string walked;
  while (std::getline(parts, part, '.')) {
    walked = join(walked, part);
    if (!node->is_object() || !node->contains(part)) {
      throw ConfigError("unknown config field '" + walked + "'");
    }
    node = &(*node)[part];
  }
  *node = std::move(value);
  RunConfig updated = from_json(root);
  updated.validate();
  config = std::move(updated);
}

IdnSpec idn_spec(const RunConfig& config) {
  IdnSpec spec;
  spec.target_rate = config.noise.rate;
  spec.seed = config.noise.seed.value_or(
      derive_seed(config.pipeline.master_seed, "idn"));
  spec.rate_spread = config.noise.rate_spread;
  spec.feature_projection_dim = config.noise.feature_projection_dim;
  return spec;
}

std::filesystem::path resolve_data_path(const RunConfig& config) {
  if (!config.dataset.path.empty()) return config.dataset.path;
  if (config.dataset.variant == "blobs") return {};
  const char* env = std::getenv(kDataDirEnv);
  if (env == nullptr || *env == '\0') {
    throw ConfigError("dataset.path is empty and " + std::string(kDataDirEnv) +
                      " is not set");
  }
  return env;
}

PreparedData prepare_data(const RunConfig& config) {
  const std::filesystem::path path = resolve_data_path(config);
  LabeledImageDataset train = load_dataset(path, config.dataset.variant,
                                           Split::kTrain, config.dataset.blobs);
  LabeledImageDataset test = load_dataset(path, config.dataset.variant,
                                          Split::kTest, config.dataset.blobs);
  auto [noisy, ledger] = inject_idn(std::move(train), idn_spec(config));
  return {std::move(noisy), std::move(test), std::move(ledger)};
}

}  // namespace stagerefine
