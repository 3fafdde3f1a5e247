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

#include "stagerefine/refinery.h"

#include <algorithm>
#include <fstream>

#include "stagerefine/errors.h"
#include "stagerefine/pretrain.h"
#include "stagerefine/rng.h"

namespace stagerefine {

StagePlan::StagePlan()
    : StagePlan({IterationPlan{4, {2, 3, 4}}, IterationPlan{7, {2, 5, 7}}}) {}

StagePlan::StagePlan(std::vector<IterationPlan> iterations)
    : entries_(std::move(iterations)) {
  if (entries_.empty()) throw ConfigError("stage plan has no iterations");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const IterationPlan& p = entries_[i];
    const std::string where = "stage plan entry " + std::to_string(i + 1);
    if (p.iteration_epochs < 1) {
      throw ConfigError(where + ": iteration_epochs must be >= 1");
    }
    if (p.stage_epochs.empty()) {
      throw ConfigError(where + ": needs at least one stage epoch");
    }
    for (std::size_t s = 0; s < p.stage_epochs.size(); ++s) {
      const int e = p.stage_epochs[s];
      if (e < 1 || e > p.iteration_epochs) {
        throw ConfigError(where + ": stage epoch " + std::to_string(e) +
                          " outside [1, " +
                          std::to_string(p.iteration_epochs) + "]");
      }
      if (s > 0 && e <= p.stage_epochs[s - 1]) {
        throw ConfigError(where + ": stage epochs must strictly increase");
      }
    }
  }
}

const IterationPlan& StagePlan::iteration(int k) const {
  if (k < 1) throw ContractError("iterations are numbered from 1");
  const std::size_t idx =
      std::min(static_cast<std::size_t>(k - 1), entries_.size() - 1);
  return entries_[idx];
}

int StagePlan::epochs_before(int k) const {
  int total = 0;
  for (int j = 1; j < k; ++j) total += iteration(j).iteration_epochs;
  return total;
}

int StagePlan::total_epochs(int iterations) const {
  return epochs_before(iterations + 1);
}

// ---------------------------------------------------------------------------

const StageSnapshot& SelectionLedger::record(int iteration, int stage_epoch,
                                             std::span<const double> losses,
                                             double threshold) {
  if (find(iteration, stage_epoch) != nullptr) {
    throw IntegrityError("stage snapshot for iteration " +
                         std::to_string(iteration) + " epoch " +
                         std::to_string(stage_epoch) +
                         " was already recorded");
  }
  StageSnapshot snap;
  snap.iteration = iteration;
  snap.stage_epoch = stage_epoch;
  snap.threshold = threshold;
  snap.mask.resize(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    snap.mask[i] = losses[i] < threshold ? 1 : 0;
    snap.selected += snap.mask[i];
  }
  snapshots_.push_back(std::move(snap));
  return snapshots_.back();
}

const StageSnapshot* SelectionLedger::find(int iteration,
                                           int stage_epoch) const {
  for (const StageSnapshot& s : snapshots_) {
    if (s.iteration == iteration && s.stage_epoch == stage_epoch) return &s;
  }
  return nullptr;
}

std::vector<const StageSnapshot*> SelectionLedger::stages_of(
    int iteration) const {
  std::vector<const StageSnapshot*> out;
  for (const StageSnapshot& s : snapshots_) {
    if (s.iteration == iteration) out.push_back(&s);
  }
  return out;
}

void SelectionLedger::restore(StageSnapshot snapshot) {
  if (find(snapshot.iteration, snapshot.stage_epoch) != nullptr) {
    throw IntegrityError("duplicate stage snapshot in checkpoint");
  }
  snapshots_.push_back(std::move(snapshot));
}

RefinementState RefinementState::start(const LabeledImageDataset& dataset) {
  RefinementState state;
  state.provenance.assign(dataset.size(), 0);
  return state;
}

const StageSnapshot& record_stage(SelectionLedger& ledger, int iteration,
                                  int stage_epoch,
                                  std::span<const double> losses,
                                  double threshold, const StagePlan* plan) {
  if (plan != nullptr) {
    const auto& stages = plan->iteration(iteration).stage_epochs;
    if (std::find(stages.begin(), stages.end(), stage_epoch) == stages.end()) {
      throw ContractError("epoch " + std::to_string(stage_epoch) +
                          " is not a stage of iteration " +
                          std::to_string(iteration));
    }
  }
  return ledger.record(iteration, stage_epoch, losses, threshold);
}

std::vector<std::size_t> consensus(const SelectionLedger& ledger,
                                   int iteration, const IterationPlan& plan) {
  std::vector<const StageSnapshot*> masks;
  for (int e : plan.stage_epochs) {
    const StageSnapshot* s = ledger.find(iteration, e);
    if (s == nullptr) {
      throw ContractError("consensus: stage epoch " + std::to_string(e) +
                          " of iteration " + std::to_string(iteration) +
                          " has no recorded mask");
    }
    masks.push_back(s);
  }
  if (masks.empty()) throw ContractError("consensus: iteration has no stages");
  const std::size_t n = masks.front()->mask.size();
  for (const StageSnapshot* s : masks) {
    if (s->mask.size() != n) {
      throw IntegrityError("consensus: stage masks differ in length");
    }
  }
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < n; ++i) {
    bool all = true;
    for (const StageSnapshot* s : masks) all = all && s->mask[i] != 0;
    if (all) ids.push_back(i);
  }
  return ids;
}

void assign_pseudo_labels(LabeledImageDataset& dataset,
                          RefinementState& state,
                          std::span<const std::size_t> consensus_ids,
                          std::span<const int> predictions, int iteration) {
  const std::size_t n = dataset.size();
  if (predictions.size() != n) {
    throw ContractError("assign_pseudo_labels: predictions cover " +
                        std::to_string(predictions.size()) +
                        " samples, dataset has " + std::to_string(n));
  }
  if (state.provenance.size() != n) {
    throw IntegrityError("refinement state does not match the dataset");
  }
  for (std::size_t id : consensus_ids) {
    if (id >= n) {
      throw ContractError("assign_pseudo_labels: consensus id " +
                          std::to_string(id) + " outside [0, " +
                          std::to_string(n) + ")");
    }
    if (predictions[id] < 0 || predictions[id] >= dataset.num_classes()) {
      throw ContractError("assign_pseudo_labels: prediction out of range");
    }
  }
  std::vector<int>& working = dataset.mutable_working_labels();
  std::vector<std::uint8_t> relabeled(n, 0);
  for (std::size_t id : consensus_ids) {
    working[id] = predictions[id];
    state.provenance[id] = iteration;
    relabeled[id] = 1;
  }
  for (InjectedSample& inj : state.injected) {
    const auto src = static_cast<std::size_t>(inj.source_index);
    if (src < n && relabeled[src]) inj.label = working[src];
  }
}

std::int64_t augment_and_inject(const LabeledImageDataset& dataset,
                                RefinementState& state,
                                std::span<const std::size_t> consensus_ids,
                                const AugmentationPolicy& policy,
                                int copies_per_sample, int iteration,
                                std::uint64_t seed) {
  if (copies_per_sample <= 0) return 0;
  std::int64_t added = 0;
  for (std::size_t id : consensus_ids) {
    if (id >= dataset.size()) {
      throw ContractError("augment_and_inject: id out of range");
    }
    for (int c = 0; c < copies_per_sample; ++c) {
      Rng rng(derive_seed(derive_seed(seed, "inject-sample", id), "copy",
                          static_cast<std::uint64_t>(c)));
      InjectedSample inj;
      inj.source_index = static_cast<std::int64_t>(id);
      inj.image = apply_policy(dataset.image(id), policy, rng);
      inj.label = dataset.working_labels()[id];
      inj.iteration = iteration;
      state.injected.push_back(std::move(inj));
      ++added;
    }
  }
  return added;
}

void RefineryConfig::validate() const {
  train.validate();
  policy.validate();
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (copies_per_sample < 0) {
    throw ConfigError("copies_per_sample must be >= 0");
  }
}

const IterationRecord& run_iteration(ModelState& model,
                                     LabeledImageDataset& dataset,
                                     RefinementState& state,
                                     const RefineryConfig& config, int k,
                                     std::uint64_t seed) {
  if (k != state.iteration + 1) {
    throw ContractError("run_iteration: iteration " + std::to_string(k) +
                        " requested after " + std::to_string(state.iteration) +
                        " completed iterations");
  }
  const IterationPlan& plan = config.plan.iteration(k);
  const int offset = config.plan.epochs_before(k);
  const int total =
      config.plan.total_epochs(std::max(config.iterations, k));
  const std::string phase = "iteration-" + std::to_string(k);

  IterationRecord record;
  record.iteration = k;
  record.labels_before = dataset.working_labels();

  for (int e = 1; e <= plan.iteration_epochs; ++e) {
    const double lr = cosine_learning_rate(config.train.learning_rate,
                                           offset + e - 1, total);
    const TrainingView view{&dataset, state.injected};
    EpochStats stats;
    try {
      stats = train_epoch(model, view, config.train.light, lr,
                          config.train.batch_size,
                          derive_seed(seed, "epoch",
                                      static_cast<std::uint64_t>(e)));
    } catch (const NonFiniteError& err) {
      throw NonFiniteError(phase + " epoch " + std::to_string(e) + ": " +
                           err.what());
    }
    stats.epoch = e;
    stats.phase = phase;
    record.epochs.push_back(stats);
    if (std::find(plan.stage_epochs.begin(), plan.stage_epochs.end(), e) !=
        plan.stage_epochs.end()) {
      const std::vector<double> losses = per_sample_losses(model, dataset);
      record_stage(state.ledger, k, e, losses, config.train.loss_threshold,
                   &config.plan);
    }
  }

  record.consensus = consensus(state.ledger, k, plan);
  const std::vector<int> predictions = predict_labels(model, dataset);
  assign_pseudo_labels(dataset, state, record.consensus, predictions, k);
  record.injected_added = augment_and_inject(
      dataset, state, record.consensus, config.policy,
      config.copies_per_sample, k, derive_seed(seed, "inject"));
  record.labels_after = dataset.working_labels();
  state.iteration = k;
  state.history.push_back(std::move(record));
  return state.history.back();
}

std::string provenance_tag(int provenance) {
  return provenance == 0 ? "original"
                         : "pseudo(" + std::to_string(provenance) + ")";
}

void write_iteration_audit(const std::filesystem::path& path,
                           const LabeledImageDataset& dataset,
                           const RefinementState& state, int iteration) {
  const IterationRecord* record = nullptr;
  for (const IterationRecord& r : state.history) {
    if (r.iteration == iteration) record = &r;
  }
  if (record == nullptr) {
    throw ContractError("no record for iteration " + std::to_string(iteration));
  }
  const auto stages = state.ledger.stages_of(iteration);
  std::vector<std::uint8_t> in_consensus(dataset.size(), 0);
  for (std::size_t id : record->consensus) in_consensus[id] = 1;

  std::ofstream out(path);
  if (!out) throw IoError("cannot write audit file " + path.string());
  out << "sample_id";
  for (const StageSnapshot* s : stages) out << "\tstage_e" << s->stage_epoch;
  out << "\tconsensus\told_label\tnew_label\tprovenance\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out << dataset.sample_ids()[i];
    for (const StageSnapshot* s : stages) out << '\t' << int{s->mask[i]};
    // Provenance as of the end of this iteration.
    const int prov = in_consensus[i] ? iteration : [&] {
      for (auto it = state.history.rbegin(); it != state.history.rend();
           ++it) {
        if (it->iteration > iteration) continue;
        if (std::binary_search(it->consensus.begin(), it->consensus.end(),
                               i)) {
          return it->iteration;
        }
      }
      return 0;
    }();
    out << '\t' << int{in_consensus[i]} << '\t' << record->labels_before[i]
        << '\t' << record->labels_after[i] << '\t' << provenance_tag(prov)
        << '\n';
  }
  if (!out) throw IoError("failed while writing audit file " + path.string());
}

}  // namespace stagerefine
