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

#ifndef STAGEREFINE_PIPELINE_H_
#define STAGEREFINE_PIPELINE_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stagerefine/checkpoint.h"
#include "stagerefine/datasets.h"
#include "stagerefine/model.h"
#include "stagerefine/pretrain.h"
#include "stagerefine/refinery.h"

namespace stagerefine {

struct PipelineConfig {
  EncoderSpec encoder;
  SgdConfig optimizer;
  ContrastiveConfig contrastive;
  RefineryConfig refinery;
  std::uint64_t master_seed = 0;

  void validate() const;
};

// Phase seeds: derive_seed(master, tag) with the tags below, and
// derive_seed(master, "iteration", k) for refinement iteration k.
struct PhaseSeeds {
  std::uint64_t init = 0;
  std::uint64_t pretrain = 0;
  std::uint64_t warmup = 0;

  static PhaseSeeds from_master(std::uint64_t master);
  static std::uint64_t iteration(std::uint64_t master, int k);
};

struct PipelineHooks {
  // Called after pretrain ("pretrain"), warmup ("warmup") and each iteration
  // ("iter<k>"); `refinement` is null before refinement begins.
  std::function<void(const std::string& phase, const ModelState& model,
                     const LabeledImageDataset& dataset,
                     const RefinementState* refinement)>
      on_phase_complete;
  std::function<void(const PretrainEpoch&)> on_pretrain_epoch;
  std::function<void(const EpochStats&)> on_epoch;
};

struct PipelineResult {
  ModelState model;
  RefinementState refinement;
  std::vector<PretrainEpoch> pretrain_log;
  std::vector<EpochStats> epoch_log;
  // Test accuracy right after warmup; nullopt when resumed past warmup or when
  // no test set was given.
  std::optional<double> warmup_test_accuracy;
  std::optional<double> final_test_accuracy;
};

// pretrain -> warmup -> iterations 1..config.refinery.iterations over
// `dataset`, whose working labels are updated in place. `resume`, when set,
// skips every phase it already covers. Failures are rethrown as PhaseError
// tagged with the failing phase.
PipelineResult run_pipeline(const PipelineConfig& config,
                            LabeledImageDataset& dataset,
                            const LabeledImageDataset* test_set = nullptr,
                            const PipelineHooks& hooks = {},
                            std::optional<Checkpoint> resume = std::nullopt);

// Completed refinement iterations implied by a checkpoint phase name:
// -1 for "pretrain", 0 for "warmup", k for "iter<k>". Throws VersioningError
// for anything else.
int completed_iterations(const std::string& phase);

}  // namespace stagerefine

#endif  // STAGEREFINE_PIPELINE_H_
