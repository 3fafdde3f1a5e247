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

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "stagerefine/errors.h"
#include "test_support.h"

namespace stagerefine {
namespace {

using testing::random_dataset;
using testing::tiny_spec;

TEST(StagePlan, DefaultMatchesPublishedSchedule) {
  const StagePlan plan;
  EXPECT_EQ(plan.iteration(1), (IterationPlan{4, {2, 3, 4}}));
  for (int k = 2; k <= 4; ++k) {
    EXPECT_EQ(plan.iteration(k), (IterationPlan{7, {2, 5, 7}}));
  }
  EXPECT_EQ(plan.epochs_before(1), 0);
  EXPECT_EQ(plan.epochs_before(3), 11);
  EXPECT_EQ(plan.total_epochs(4), 25);
}

TEST(StagePlan, RejectsInvalidEntries) {
  using Plans = std::vector<IterationPlan>;
  EXPECT_THROW(StagePlan(Plans{}), ConfigError);
  EXPECT_THROW(StagePlan(Plans{{4, {}}}), ConfigError);
  EXPECT_THROW(StagePlan(Plans{{4, {2, 5}}}), ConfigError);
  EXPECT_THROW(StagePlan(Plans{{4, {3, 2}}}), ConfigError);
  EXPECT_THROW(StagePlan(Plans{{0, {1}}}), ConfigError);
}

TEST(RecordStage, StrictThreshold) {
  SelectionLedger ledger;
  const double losses[] = {0.5, 1.0, 1.5};
  const auto& s = record_stage(ledger, 1, 2, losses, 1.0);
  EXPECT_EQ(s.mask, (std::vector<std::uint8_t>{1, 0, 0}));
  EXPECT_EQ(s.selected, 1);
  EXPECT_EQ(s.threshold, 1.0);
}

TEST(RecordStage, UniformLossesSelectNothingAndHugeThresholdSelectsAll) {
  SelectionLedger ledger;
  const std::vector<double> uniform(20, std::log(10.0));
  EXPECT_EQ(record_stage(ledger, 1, 2, uniform, 1.0).selected, 0);
  EXPECT_EQ(record_stage(ledger, 1, 3, uniform, 1e9).selected, 20);
}

TEST(RecordStage, DuplicatesAndOffPlanEpochsAreRejected) {
  SelectionLedger ledger;
  const double losses[] = {0.1};
  record_stage(ledger, 1, 2, losses, 1.0);
  EXPECT_THROW(record_stage(ledger, 1, 2, losses, 1.0), IntegrityError);
  const StagePlan plan;
  EXPECT_THROW(record_stage(ledger, 2, 3, losses, 1.0, &plan), ContractError);
  EXPECT_NO_THROW(record_stage(ledger, 2, 5, losses, 1.0, &plan));
}

SelectionLedger ledger_from_masks(
    int iteration, const std::vector<int>& epochs,
    const std::vector<std::vector<std::uint8_t>>& masks) {
  SelectionLedger ledger;
  for (std::size_t s = 0; s < masks.size(); ++s) {
    std::vector<double> losses;
    for (auto m : masks[s]) losses.push_back(m ? 0.0 : 2.0);
    ledger.record(iteration, epochs[s], losses, 1.0);
  }
  return ledger;
}

TEST(Consensus, IntersectionExamples) {
  const IterationPlan plan{4, {2, 3, 4}};
  auto ledger =
      ledger_from_masks(1, {2, 3, 4}, {{1, 1, 0}, {1, 0, 0}, {1, 1, 0}});
  EXPECT_EQ(consensus(ledger, 1, plan), (std::vector<std::size_t>{0}));
  ledger = ledger_from_masks(1, {2, 3, 4}, {{1, 1, 1}, {0, 0, 0}, {1, 1, 1}});
  EXPECT_TRUE(consensus(ledger, 1, plan).empty());
}

TEST(Consensus, EqualsBruteForceOnThousandSamples) {
  Rng rng(1);
  const std::size_t n = 1000;
  std::vector<std::vector<std::uint8_t>> masks(3,
                                               std::vector<std::uint8_t>(n));
  for (auto& m : masks) {
    for (auto& b : m) b = uniform01(rng) < 0.7 ? 1 : 0;
  }
  const auto ledger = ledger_from_masks(2, {2, 5, 7}, masks);
  const auto ids = consensus(ledger, 2, {7, {2, 5, 7}});
  std::vector<std::size_t> expected;
  for (std::size_t i = 0; i < n; ++i) {
    if (masks[0][i] && masks[1][i] && masks[2][i]) expected.push_back(i);
  }
  EXPECT_EQ(ids, expected);
  // Monotonicity: the consensus set lies inside every stage mask.
  for (std::size_t i : ids) {
    for (const auto* s : ledger.stages_of(2)) EXPECT_TRUE(s->mask[i]);
  }
}

TEST(Consensus, MissingStageIsAContractError) {
  const auto ledger = ledger_from_masks(1, {2, 3}, {{1}, {1}});
  EXPECT_THROW(consensus(ledger, 1, {4, {2, 3, 4}}), ContractError);
}

TEST(AssignPseudoLabels, RelabelsOnlyConsensusAndTracksProvenance) {
  auto d = random_dataset(10, 8, 4, 2);
  RefinementState state = RefinementState::start(d);
  const std::vector<int> before = d.working_labels();
  std::vector<int> predictions(10, 0);
  predictions[3] = 7;
  const std::size_t ids[] = {3};
  assign_pseudo_labels(d, state, ids, predictions, 1);
  EXPECT_EQ(d.working_labels()[3], 7);
  EXPECT_EQ(state.provenance[3], 1);
  for (std::size_t i = 0; i < 10; ++i) {
    if (i == 3) continue;
    EXPECT_EQ(d.working_labels()[i], before[i]);
    EXPECT_EQ(state.provenance[i], 0);
  }
}

TEST(AssignPseudoLabels, EmptyConsensusAndIdempotentRelabel) {
  auto d = random_dataset(6, 3, 4, 3);
  RefinementState state = RefinementState::start(d);
  const std::vector<int> before = d.working_labels();
  assign_pseudo_labels(d, state, {}, std::vector<int>(6, 2), 1);
  EXPECT_EQ(d.working_labels(), before);

  const std::size_t ids[] = {1};
  const std::vector<int> same = before;
  assign_pseudo_labels(d, state, ids, same, 2);
  EXPECT_EQ(d.working_labels(), before);
  EXPECT_EQ(state.provenance[1], 2);
  EXPECT_EQ(provenance_tag(state.provenance[1]), "pseudo(2)");
  EXPECT_EQ(provenance_tag(0), "original");
}

TEST(AssignPseudoLabels, OutOfRangeIdIsAContractError) {
  auto d = random_dataset(4, 2, 4, 4);
  RefinementState state = RefinementState::start(d);
  const std::size_t ids[] = {4};
  EXPECT_THROW(assign_pseudo_labels(d, state, ids, std::vector<int>(4, 0), 1),
               ContractError);
}

TEST(AssignPseudoLabels, InjectedCopiesFollowTheirSource) {
  auto d = random_dataset(4, 3, 4, 5);
  RefinementState state = RefinementState::start(d);
  state.injected.push_back({2, d.image(2), d.working_labels()[2], 1});
  state.injected.push_back({1, d.image(1), d.working_labels()[1], 1});
  const std::size_t ids[] = {2};
  assign_pseudo_labels(d, state, ids, std::vector<int>{0, 0, 1, 0}, 2);
  EXPECT_EQ(state.injected[0].label, 1);
  EXPECT_EQ(state.injected[1].label, 1);  // source 1 not relabeled
}

TEST(AugmentAndInject, CountsLabelsAndDistinctCopies) {
  auto d = random_dataset(60, 3, 12, 6);
  RefinementState state = RefinementState::start(d);
  const AugmentationPolicy policy;
  std::vector<std::size_t> ids(50);
  for (std::size_t i = 0; i < 50; ++i) ids[i] = i;
  EXPECT_EQ(augment_and_inject(d, state, ids, policy, 0, 1, 7), 0);
  EXPECT_TRUE(state.injected.empty());
  EXPECT_EQ(augment_and_inject(d, state, ids, policy, 1, 1, 7), 50);
  EXPECT_EQ(state.injected.size(), 50u);
  for (const auto& inj : state.injected) {
    EXPECT_LT(inj.source_index, 50);
    EXPECT_EQ(inj.label, d.working_labels()[inj.source_index]);
    EXPECT_EQ(inj.iteration, 1);
  }
  RefinementState twice = RefinementState::start(d);
  augment_and_inject(d, twice, ids, policy, 2, 1, 8);
  ASSERT_EQ(twice.injected.size(), 100u);
  for (std::size_t i = 0; i < 100; i += 2) {
    EXPECT_EQ(twice.injected[i].source_index,
              twice.injected[i + 1].source_index);
    EXPECT_NE(twice.injected[i].image, twice.injected[i + 1].image);
  }
}

RefineryConfig small_config() {
  RefineryConfig c;
  c.train.batch_size = 8;
  c.iterations = 2;
  return c;
}

TEST(RunIteration, SnapshotsHappenAtPlannedEpochs) {
  auto d = random_dataset(24, 3, 8, 9);
  RefinementState state = RefinementState::start(d);
  ModelState model(tiny_spec("resnet-tiny"), 10);
  const RefineryConfig config = small_config();
  const auto& r1 = run_iteration(model, d, state, config, 1, 11);
  EXPECT_EQ(r1.epochs.size(), 4u);
  std::vector<int> epochs;
  for (const auto* s : state.ledger.stages_of(1)) {
    epochs.push_back(s->stage_epoch);
  }
  EXPECT_EQ(epochs, (std::vector<int>{2, 3, 4}));
  const auto& r2 = run_iteration(model, d, state, config, 2, 12);
  EXPECT_EQ(r2.epochs.size(), 7u);
  epochs.clear();
  for (const auto* s : state.ledger.stages_of(2)) {
    epochs.push_back(s->stage_epoch);
  }
  EXPECT_EQ(epochs, (std::vector<int>{2, 5, 7}));
  EXPECT_EQ(state.iteration, 2);
  EXPECT_EQ(state.history.size(), 2u);
  EXPECT_THROW(run_iteration(model, d, state, config, 4, 13), ContractError);
}

TEST(RunIteration, RetentionAndProvenanceHold) {
  auto d = random_dataset(40, 3, 8, 14);
  Rng rng(15);
  for (int& y : d.mutable_working_labels()) {
    y = static_cast<int>(uniform_index(rng, 3));
  }
  RefinementState state = RefinementState::start(d);
  ModelState model(tiny_spec("resnet-tiny"), 16);
  RefineryConfig config = small_config();
  config.train.loss_threshold = 1.2;
  std::size_t selected = 0;
  for (int k = 1; k <= 2; ++k) {
    const auto& r = run_iteration(model, d, state, config, k, 17 + k);
    selected += r.consensus.size();
    std::set<std::size_t> chosen(r.consensus.begin(), r.consensus.end());
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!chosen.count(i)) {
        EXPECT_EQ(r.labels_after[i], r.labels_before[i]);
      } else {
        EXPECT_EQ(state.provenance[i], k);
      }
    }
    EXPECT_EQ(r.injected_added, static_cast<std::int64_t>(r.consensus.size()));
  }
  EXPECT_GT(selected, 0u);
  // Provenance is recoverable from the ledger alone.
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int p = state.provenance[i];
    if (p == 0) continue;
    for (const auto* s : state.ledger.stages_of(p)) EXPECT_TRUE(s->mask[i]);
  }
  for (const auto& inj : state.injected) {
    const auto& rec = state.history[inj.iteration - 1];
    EXPECT_TRUE(std::binary_search(rec.consensus.begin(), rec.consensus.end(),
                                   static_cast<std::size_t>(inj.source_index)));
  }
}

TEST(RunIteration, ZeroThresholdSelectsNothingButStillTrains) {
  auto d = random_dataset(24, 3, 8, 20);
  RefinementState state = RefinementState::start(d);
  ModelState model(tiny_spec("resnet-tiny"), 21);
  RefineryConfig config = small_config();
  config.train.loss_threshold = 0.0;
  const std::vector<int> before = d.working_labels();
  const auto& r = run_iteration(model, d, state, config, 1, 22);
  EXPECT_TRUE(r.consensus.empty());
  EXPECT_EQ(d.working_labels(), before);
  EXPECT_TRUE(state.injected.empty());
  EXPECT_EQ(model.epoch, 4);
}

TEST(RunIteration, InjectedSamplesNeverEnterTheMasks) {
  // Without normalization layers and with a zero learning rate the model is
  // frozen, so any difference in masks would have to come from the registry.
  auto d = random_dataset(24, 3, 8, 23);
  RefineryConfig config = small_config();
  config.train.learning_rate = 0.0;
  config.train.loss_threshold = 1.1;
  const ModelState model(tiny_spec("mlp"), 24);

  RefinementState bare = RefinementState::start(d);
  RefinementState loaded = RefinementState::start(d);
  for (int i = 0; i < 30; ++i) {
    loaded.injected.push_back({i % 24, d.image(0), 1, 0});
  }
  auto d1 = d, d2 = d;
  ModelState m1 = model, m2 = model;
  run_iteration(m1, d1, bare, config, 1, 25);
  run_iteration(m2, d2, loaded, config, 1, 25);
  ASSERT_EQ(bare.ledger.snapshots().size(), loaded.ledger.snapshots().size());
  for (std::size_t s = 0; s < bare.ledger.snapshots().size(); ++s) {
    EXPECT_EQ(bare.ledger.snapshots()[s].mask.size(), d.size());
    EXPECT_EQ(bare.ledger.snapshots()[s].mask,
              loaded.ledger.snapshots()[s].mask);
  }
}

TEST(WriteIterationAudit, OneRowPerSampleWithStageColumns) {
  auto d = random_dataset(12, 3, 8, 26);
  RefinementState state = RefinementState::start(d);
  ModelState model(tiny_spec("resnet-tiny"), 27);
  RefineryConfig config = small_config();
  config.train.loss_threshold = 5.0;
  run_iteration(model, d, state, config, 1, 28);
  testing::TempDir dir("audit");
  write_iteration_audit(dir / "audit.tsv", d, state, 1);
  std::ifstream in(dir / "audit.tsv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header,
            "sample_id\tstage_e2\tstage_e3\tstage_e4\tconsensus\told_label\t"
            "new_label\tprovenance");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 12);
  EXPECT_THROW(write_iteration_audit(dir / "x.tsv", d, state, 2),
               ContractError);
}

}  // namespace
}  // namespace stagerefine
