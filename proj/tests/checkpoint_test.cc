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


#include "stagerefine/checkpoint.h"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "stagerefine/errors.h"
#include "test_support.h"

namespace stagerefine {
namespace {

std::string bytes_of(const ModelState& m) {
  std::ostringstream out;
  m.serialize(out);
  return out.str();
}

TEST(Checkpoint, ModelOnlyRoundTrip) {
  testing::TempDir dir("ckpt");
  const ModelState m(testing::tiny_spec("resnet-tiny"), 1);
  save_checkpoint(dir / "p.ckpt", "pretrain", 42, m);
  const Checkpoint c = load_checkpoint(dir / "p.ckpt");
  EXPECT_EQ(c.phase, "pretrain");
  EXPECT_EQ(c.master_seed, 42u);
  EXPECT_EQ(bytes_of(c.model), bytes_of(m));
  EXPECT_FALSE(c.working_labels);
  EXPECT_FALSE(c.refinement);
}

TEST(Checkpoint, CarriesWorkingLabelsAndRefinementState) {
  auto d = testing::random_dataset(16, 3, 8, 2);
  RefinementState state = RefinementState::start(d);
  ModelState m(testing::tiny_spec("resnet-tiny"), 3);
  RefineryConfig config;
  config.train.batch_size = 8;
  config.train.loss_threshold = 5.0;
  run_iteration(m, d, state, config, 1, 4);
  ASSERT_FALSE(state.injected.empty());

  testing::TempDir dir("ckpt");
  save_checkpoint(dir / "i1.ckpt", "iter1", 7, m, &d.working_labels(), &state);
  const EncoderSpec spec = m.spec();
  const Checkpoint c = load_checkpoint(dir / "i1.ckpt", &spec);
  EXPECT_EQ(c.phase, "iter1");
  EXPECT_EQ(bytes_of(c.model), bytes_of(m));
  EXPECT_EQ(c.model.epoch, m.epoch);
  ASSERT_TRUE(c.working_labels);
  EXPECT_EQ(*c.working_labels, d.working_labels());
  ASSERT_TRUE(c.refinement);
  EXPECT_EQ(*c.refinement, state);
}

TEST(Checkpoint, MissingFileIsAnIngestionError) {
  testing::TempDir dir("ckpt");
  EXPECT_THROW(load_checkpoint(dir / "nope.ckpt"), IngestionError);
}

TEST(Checkpoint, ForeignOrTruncatedFilesAreVersioningErrors) {
  testing::TempDir dir("ckpt");
  {
    std::ofstream out(dir / "junk.ckpt", std::ios::binary);
    out << "definitely not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), VersioningError);

  const ModelState m(testing::tiny_spec("mlp"), 5);
  save_checkpoint(dir / "full.ckpt", "warmup", 1, m);
  std::ifstream in(dir / "full.ckpt", std::ios::binary);
  const std::string full((std::istreambuf_iterator<char>(in)), {});
  for (std::size_t cut : {std::size_t{10}, full.size() / 2, full.size() - 1}) {
    std::ofstream out(dir / "cut.ckpt", std::ios::binary | std::ios::trunc);
    out.write(full.data(), static_cast<std::streamsize>(cut));
    out.close();
    EXPECT_THROW(load_checkpoint(dir / "cut.ckpt"), VersioningError) << cut;
  }
}

TEST(Checkpoint, ArchitectureMismatchIsAVersioningError) {
  testing::TempDir dir("ckpt");
  save_checkpoint(dir / "m.ckpt", "pretrain", 1,
                  ModelState(testing::tiny_spec("mlp"), 6));
  const EncoderSpec other = testing::tiny_spec("resnet-tiny");
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", &other), VersioningError);
}

}  // namespace
}  // namespace stagerefine
