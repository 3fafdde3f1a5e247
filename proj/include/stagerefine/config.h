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

// Run configuration: one JSON document per run.
//
// Every field has a default, so "{}" is a valid config (the toy blobs run).
// Unknown keys are rejected with the dotted path of the offending field.
//
// Seeds fan out from `master_seed`:
//   model init   derive_seed(master, "model-init")
//   pretrain     derive_seed(master, "pretrain")
//   warmup       derive_seed(master, "warmup")
//   iteration k  derive_seed(master, "iteration", k)
//   noise        derive_seed(master, "idn")   unless noise.seed is set

#ifndef STAGEREFINE_CONFIG_H_
#define STAGEREFINE_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "stagerefine/datasets.h"
#include "stagerefine/pipeline.h"

namespace stagerefine {

// Environment variable naming the dataset cache directory; used when
// dataset.path is empty.
inline constexpr const char* kDataDirEnv = "STAGEREFINE_DATA_DIR";

struct DatasetConfig {
  std::string variant = "blobs";
  std::string path;
  BlobsOptions blobs;
};

struct NoiseConfig {
  double rate = 0.3;
  std::optional<std::uint64_t> seed;
  double rate_spread = 0.1;
  int feature_projection_dim = 32;
};

struct RunConfig {
  DatasetConfig dataset;
  NoiseConfig noise;
  PipelineConfig pipeline;
  std::string output_dir = "runs/default";

  // Throws ConfigError naming the first invalid field.
  void validate() const;
};

// Throws ConfigError (with the field path) on malformed JSON, unknown keys or
// wrong value types.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical JSON with every field spelled out. Parsing it back yields an
// equal config.
std::string to_json(const RunConfig& config);

// Applies "a.b.c=value" where value is JSON (bare words are taken as
// strings). Throws ConfigError for unknown paths.
void apply_override(RunConfig& config, const std::string& assignment);

IdnSpec idn_spec(const RunConfig& config);

// dataset.path, or $STAGEREFINE_DATA_DIR when it is empty. Blobs needs no
// path and gets an empty one.
std::filesystem::path resolve_data_path(const RunConfig& config);

// Train and test splits for the configured variant, the train split with the
// configured noise applied.
struct PreparedData {
  LabeledImageDataset train;
  LabeledImageDataset test;
  FlipLedger ledger;
};
PreparedData prepare_data(const RunConfig& config);

}  // namespace stagerefine

#endif  // STAGEREFINE_CONFIG_H_
