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

#ifndef STAGEREFINE_CHECKPOINT_H_
#define STAGEREFINE_CHECKPOINT_H_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stagerefine/model.h"
#include "stagerefine/refinery.h"

namespace stagerefine {

// Versioned binary checkpoint keyed by phase ("pretrain", "warmup",
// "iter<k>"). Post-warmup checkpoints also carry the working-label track and
// the refinement state so a run can resume from them.
struct Checkpoint {
  std::string phase;
  std::uint64_t master_seed = 0;
  ModelState model;
  std::optional<std::vector<int>> working_labels;
  std::optional<RefinementState> refinement;
};

void save_checkpoint(const std::filesystem::path& path,
                     const std::string& phase, std::uint64_t master_seed,
                     const ModelState& model,
                     const std::vector<int>* working_labels = nullptr,
                     const RefinementState* refinement = nullptr);

// Throws IngestionError if the file is missing, VersioningError if the format
// version or (when `expected` is given) the architecture does not match.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const EncoderSpec* expected = nullptr);

}  // namespace stagerefine

#endif  // STAGEREFINE_CHECKPOINT_H_
