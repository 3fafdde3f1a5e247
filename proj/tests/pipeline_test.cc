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


#include "stagerefine/pipeline.h"

#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "stagerefine/errors.h"
#include "test_support.h"

namespace stagerefine {
namespace {

PipelineConfig small_pipeline(int iterations) {
  PipelineConfig c;
  c.encoder = testing::tiny_spec("resnet-tiny");
  c.contrastive.epochs = 2;
  c.contrastive.batch_size = 8;
  c.refinery.train.warmup_epochs = 2;
  c.refinery.train.batch_size = 8;
  c.refinery.train.loss_threshold = 1.2;
  c.refinery.iterations = iterations;
  c.master_seed = 123;
  return c;
}

std::string bytes_of(const ModelState& m) {
  std::ostringstream out;
  m.serialize(out);
  return out.str();
}

TEST(CompletedIterations, ParsesPhaseNames) {
  EXPECT_EQ(completed_iterations("pretrain"), -1);
  EXPECT_EQ(completed_iterations("warmup"), 0);
  EXPECT_EQ(completed_iterations("iter3"), 3);
  EXPECT_THROW(completed_iterations("iter"), VersioningError);
  EXPECT_THROW(completed_iterations("finetune"), VersioningError);
}

TEST(PhaseSeeds, DistinctPerPhaseAndIteration) {
  const PhaseSeeds s = PhaseSeeds::from_master(7);
  EXPECT_EQ(s.pretrain, derive_seed(7, "pretrain"));
  EXPECT_EQ(s.warmup, derive_seed(7, "warmup"));
  EXPECT_EQ(s.init, derive_seed(7, "model-init"));
  EXPECT_NE(PhaseSeeds::iteration(7, 1), PhaseSeeds::iteration(7, 2));
  EXPECT_EQ(PhaseSeeds::iteration(7, 3), derive_seed(7, "iteration", 3));
}

TEST(RunPipeline, ZeroIterationsStopsAfterWarmup) {
  auto train = testing::random_dataset(24, 3, 8, 1);
  const auto test = testing::random_dataset(9, 3, 8, 2);
  std::vector<std::string> phases;
  PipelineHooks hooks;
  hooks.on_phase_complete = [&](const std::string& p, const ModelState&,
                                const LabeledImageDataset&,
                                const RefinementState*) {
    phases.push_back(p);
  };
  const auto before = train.working_labels();
  const PipelineResult r =
      run_pipeline(small_pipeline(0), train, &test, hooks);
  EXPECT_EQ(phases, (std::vector<std::string>{"pretrain", "warmup"}));
  EXPECT_EQ(r.pretrain_log.size(), 2u);
  EXPECT_EQ(r.epoch_log.size(), 2u);
  EXPECT_TRUE(r.refinement.history.empty());
  EXPECT_EQ(train.working_labels(), before);
  ASSERT_TRUE(r.warmup_test_accuracy);
  EXPECT_EQ(r.warmup_test_accuracy, r.final_test_accuracy);
}

TEST(RunPipeline, FourIterationsAreDeterministicAndResumable) {
  const auto base = testing::random_dataset(24, 3, 8, 3);
  const PipelineConfig config = small_pipeline(4);

  std::map<std::string, Checkpoint> saved;
  PipelineHooks hooks;
  hooks.on_phase_complete = [&](const std::string& p, const ModelState& m,
                                const LabeledImageDataset& d,
                                const RefinementState* s) {
    Checkpoint c{p, config.master_seed, m, std::nullopt, std::nullopt};
    if (s != nullptr) {
      c.working_labels = d.working_labels();
      c.refinement = *s;
    }
    saved.emplace(p, std::move(c));
  };
  auto a = base;
  const PipelineResult ra = run_pipeline(config, a, nullptr, hooks);
  ASSERT_EQ(ra.refinement.history.size(), 4u);
  EXPECT_EQ(ra.epoch_log.size(), 2u + 25u);
  EXPECT_EQ(ra.epoch_log.back().phase, "iteration-4");
  EXPECT_EQ(saved.size(), 6u);

  auto b = base;
  const PipelineResult rb = run_pipeline(config, b);
  EXPECT_EQ(bytes_of(ra.model), bytes_of(rb.model));
  EXPECT_EQ(ra.refinement, rb.refinement);
  EXPECT_EQ(a.working_labels(), b.working_labels());

  // Resuming after iteration 2 replays only iterations 3 and 4.
  auto c = base;
  std::vector<std::string> phases;
  PipelineHooks tail;
  tail.on_phase_complete = [&](const std::string& p, const ModelState&,
                               const LabeledImageDataset&,
                               const RefinementState*) {
    phases.push_back(p);
  };
  const PipelineResult rc =
      run_pipeline(config, c, nullptr, tail, saved.at("iter2"));
  EXPECT_EQ(phases, (std::vector<std::string>{"iter3", "iter4"}));
  EXPECT_TRUE(rc.pretrain_log.empty());
  EXPECT_EQ(bytes_of(rc.model), bytes_of(ra.model));
  EXPECT_EQ(rc.refinement, ra.refinement);
  EXPECT_EQ(c.working_labels(), a.working_labels());

  // Resuming from warmup also lands on the same state.
  auto w = base;
  const PipelineResult rw =
      run_pipeline(config, w, nullptr, {}, saved.at("warmup"));
  EXPECT_EQ(bytes_of(rw.model), bytes_of(ra.model));
}

TEST(RunPipeline, ResumeWithAnotherMasterSeedIsAConfigError) {
  auto d = testing::random_dataset(24, 3, 8, 4);
  PipelineConfig config = small_pipeline(1);
  const Checkpoint c{"pretrain", 999, ModelState(config.encoder, 1),
                     std::nullopt, std::nullopt};
  EXPECT_THROW(run_pipeline(config, d, nullptr, {}, c), ConfigError);
}

TEST(RunPipeline, MismatchedDatasetIsAConfigError) {
  auto d = testing::random_dataset(24, 4, 8, 5);
  EXPECT_THROW(run_pipeline(small_pipeline(1), d), ConfigError);
  auto wide = testing::random_dataset(24, 3, 10, 6);
  EXPECT_THROW(run_pipeline(small_pipeline(1), wide), ConfigError);
}

TEST(RunPipeline, FailuresAreTaggedWithTheirPhase) {
  // A single image cannot form a contrastive pair.
  auto d = testing::random_dataset(1, 3, 8, 7);
  try {
    run_pipeline(small_pipeline(1), d);
    FAIL() << "expected a PhaseError";
  } catch (const PhaseError& e) {
    EXPECT_EQ(e.phase(), "pretrain");
  }
}

}  // namespace
}  // namespace stagerefine
