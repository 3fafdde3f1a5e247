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

// Stage-scheduled pseudo-label refinement.
//
// Each refinement iteration trains for a fixed number of epochs. At the end
// of every designated stage epoch the per-sample cross-entropy of each base
// sample against its working label is snapshotted, and samples whose loss is
// strictly below the threshold are marked. Samples marked at every stage of
// the iteration form its consensus set; they receive the model's
// end-of-iteration argmax as their new working label, and strongly augmented
// copies of them are appended to the training set. Everything else keeps its
// current working label.

#ifndef STAGEREFINE_REFINERY_H_
#define STAGEREFINE_REFINERY_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stagerefine/augment.h"
#include "stagerefine/datasets.h"
#include "stagerefine/model.h"
#include "stagerefine/trainer.h"

namespace stagerefine {

struct IterationPlan {
  int iteration_epochs = 0;
  // 1-based epoch indices within the iteration, strictly increasing.
  std::vector<int> stage_epochs;

  bool operator==(const IterationPlan&) const = default;
};

class StagePlan {
 public:
  // Iteration 1: stages {2, 3, 4} over 4 epochs. Later iterations: stages
  // {2, 5, 7} over 7 epochs.
  StagePlan();
  // Entry k-1 describes iteration k; iterations past the end reuse the last
  // entry. Throws ConfigError if an entry is invalid.
  explicit StagePlan(std::vector<IterationPlan> iterations);

  const IterationPlan& iteration(int k) const;
  const std::vector<IterationPlan>& entries() const { return entries_; }

  // Epochs of iterations 1..k-1 (offset) and 1..iterations (total), used to
  // run one cosine schedule across the whole refinement phase.
  int epochs_before(int k) const;
  int total_epochs(int iterations) const;

  bool operator==(const StagePlan&) const = default;

 private:
  std::vector<IterationPlan> entries_;
};

struct StageSnapshot {
  int iteration = 0;
  int stage_epoch = 0;
  double threshold = 0.0;
  // mask[i] == 1 iff loss[i] < threshold.
  std::vector<std::uint8_t> mask;
  std::int64_t selected = 0;

  bool operator==(const StageSnapshot&) const = default;
};

// Append-only record of stage masks.
class SelectionLedger {
 public:
  // Throws IntegrityError if (iteration, stage_epoch) is already recorded.
  const StageSnapshot& record(int iteration, int stage_epoch,
                              std::span<const double> losses,
                              double threshold);
  const StageSnapshot* find(int iteration, int stage_epoch) const;
  std::vector<const StageSnapshot*> stages_of(int iteration) const;
  const std::vector<StageSnapshot>& snapshots() const { return snapshots_; }

  // Restores a snapshot verbatim (checkpoint loading).
  void restore(StageSnapshot snapshot);

  bool operator==(const SelectionLedger&) const = default;

 private:
  std::vector<StageSnapshot> snapshots_;
};

// What happened in one iteration; labels_* are the full working-label track
// immediately before and after the relabel step.
struct IterationRecord {
  int iteration = 0;
  std::vector<std::size_t> consensus;
  std::vector<int> labels_before;
  std::vector<int> labels_after;
  std::int64_t injected_added = 0;
  std::vector<EpochStats> epochs;

  bool operator==(const IterationRecord&) const = default;
};

struct RefinementState {
  // Completed iterations.
  int iteration = 0;
  // 0 = original label, k > 0 = pseudo-label assigned in iteration k.
  std::vector<int> provenance;
  std::vector<InjectedSample> injected;
  SelectionLedger ledger;
  std::vector<IterationRecord> history;

  static RefinementState start(const LabeledImageDataset& dataset);

  bool operator==(const RefinementState&) const = default;
};

// Records one stage snapshot. When `plan` is given, stage_epoch must be one of
// the iteration's stage epochs (ContractError otherwise).
const StageSnapshot& record_stage(SelectionLedger& ledger, int iteration,
                                  int stage_epoch,
                                  std::span<const double> losses,
                                  double threshold,
                                  const StagePlan* plan = nullptr);

// Intersection of the iteration's stage masks, as ascending base indices.
// Throws ContractError if a planned stage is missing.
std::vector<std::size_t> consensus(const SelectionLedger& ledger,
                                   int iteration, const IterationPlan& plan);

// working_labels[i] := predictions[i] and provenance[i] := iteration for every
// i in consensus_ids; injected copies of those samples take the new label.
// Every other label is left untouched. Throws ContractError for an id
// outside [0, N).
void assign_pseudo_labels(LabeledImageDataset& dataset,
                          RefinementState& state,
                          std::span<const std::size_t> consensus_ids,
                          std::span<const int> predictions, int iteration);

// Appends copies_per_sample strongly augmented copies of each consensus
// sample, labeled with its current working label. Copy c of sample i is drawn
// from a stream derived from (seed, i, c). Returns the number appended.
std::int64_t augment_and_inject(const LabeledImageDataset& dataset,
                                RefinementState& state,
                                std::span<const std::size_t> consensus_ids,
                                const AugmentationPolicy& policy,
                                int copies_per_sample, int iteration,
                                std::uint64_t seed);

struct RefineryConfig {
  TrainPhaseConfig train;
  AugmentationPolicy policy;
  StagePlan plan;
  int iterations = 4;
  int copies_per_sample = 1;

  void validate() const;
  bool operator==(const RefineryConfig&) const = default;
};

// Runs iteration k (1-based): trains plan.iteration(k).iteration_epochs epochs
// over base + injected samples, snapshots stage losses, then computes
// consensus, relabels and injects. Appends an IterationRecord to
// state.history and returns it.
const IterationRecord& run_iteration(ModelState& model,
                                     LabeledImageDataset& dataset,
                                     RefinementState& state,
                                     const RefineryConfig& config, int k,
                                     std::uint64_t seed);

// Per-iteration audit: one row per base sample with its stage masks,
// consensus flag, label before/after and provenance.
void write_iteration_audit(const std::filesystem::path& path,
                           const LabeledImageDataset& dataset,
                           const RefinementState& state, int iteration);

std::string provenance_tag(int provenance);

}  // namespace stagerefine

#endif  // STAGEREFINE_REFINERY_H_
