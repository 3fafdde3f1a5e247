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

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <numeric>

#include "stagerefine/errors.h"
#include "stagerefine/eval.h"
#include "test_support.h"

namespace stagerefine {
namespace {

// Returns the ConfigError message, or "" if nothing was thrown.
template <typename Fn>
std::string config_error(Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(ParseRunConfig, EmptyObjectIsTheToyRun) {
  const RunConfig c = parse_run_config("{}");
  EXPECT_EQ(c.dataset.variant, "blobs");
  EXPECT_DOUBLE_EQ(c.noise.rate, 0.3);
  EXPECT_FALSE(c.noise.seed);
  EXPECT_EQ(c.pipeline.refinery.iterations, 4);
  EXPECT_EQ(to_json(c), to_json(RunConfig{}));
}

TEST(ParseRunConfig, UnknownKeysAreReportedWithTheirPath) {
  const std::string msg = config_error(
      [] { parse_run_config(R"({"train": {"light_augmentation": {"lr": 0.1}}})"); });
  EXPECT_NE(msg.find("train.light_augmentation.lr"), std::string::npos) << msg;
  EXPECT_NE(config_error([] { parse_run_config(R"({"bogus": 1})"); })
                .find("bogus"),
            std::string::npos);
}

TEST(ParseRunConfig, WrongTypesAndBadJsonAreConfigErrors) {
  const std::string msg = config_error(
      [] { parse_run_config(R"({"noise": {"rate": "high"}})"); });
  EXPECT_NE(msg.find("noise.rate"), std::string::npos) << msg;
  EXPECT_THROW(parse_run_config(R"({"master_seed": -1})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"dataset": 3})"), ConfigError);
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"noise": {"rate": 1.0}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"dataset": {"variant": "mnist"}})"),
               ConfigError);
}

TEST(ToJson, RoundTripsEveryField) {
  RunConfig c;
  c.dataset.variant = "cifar100";
  c.dataset.path = "/data/c100";
  c.noise.rate = 0.5;
  c.noise.seed = 99;
  c.pipeline.master_seed = 17;
  c.pipeline.encoder.architecture = "resnet18";
  c.pipeline.encoder.num_classes = 100;
  c.pipeline.refinery.train.loss_threshold = 0.8;
  c.pipeline.refinery.copies_per_sample = 2;
  c.pipeline.contrastive.policy.grayscale_prob = 0.3;
  c.output_dir = "runs/x";
  const std::string text = to_json(c);
  EXPECT_EQ(to_json(parse_run_config(text)), text);
}

TEST(ApplyOverride, UpdatesNestedFieldsAndRejectsUnknownOnes) {
  RunConfig c;
  apply_override(c, "train.loss_threshold=0.7");
  EXPECT_DOUBLE_EQ(c.pipeline.refinery.train.loss_threshold, 0.7);
  apply_override(c, "noise.seed=5");
  EXPECT_EQ(c.noise.seed, 5u);
  apply_override(c, "output_dir=runs/bare");
  EXPECT_EQ(c.output_dir, "runs/bare");
  apply_override(c, "encoder.architecture=resnet18");
  EXPECT_EQ(c.pipeline.encoder.architecture, "resnet18");

  const RunConfig before = c;
  EXPECT_NE(config_error([&] { apply_override(c, "refinery.nope=1"); })
                .find("refinery.nope"),
            std::string::npos);
  EXPECT_THROW(apply_override(c, "no-equals-sign"), ConfigError);
  EXPECT_THROW(apply_override(c, "noise.rate=2"), ConfigError);
  EXPECT_EQ(to_json(c), to_json(before));
}

TEST(LoadRunConfig, ReadsFilesAndReportsMissingOnes) {
  testing::TempDir dir("config");
  {
    std::ofstream out(dir / "run.json");
    out << R"({"master_seed": 3, "refinery": {"iterations": 2}})";
  }
  const RunConfig c = load_run_config(dir / "run.json");
  EXPECT_EQ(c.pipeline.master_seed, 3u);
  EXPECT_EQ(c.pipeline.refinery.iterations, 2);
  EXPECT_THROW(load_run_config(dir / "absent.json"), ConfigError);
}

TEST(ResolveDataPath, ExplicitPathThenEnvironment) {
  RunConfig c;
  EXPECT_TRUE(resolve_data_path(c).empty());
  c.dataset.variant = "cifar10";
  c.dataset.path = "/explicit";
  EXPECT_EQ(resolve_data_path(c), "/explicit");
  c.dataset.path.clear();
  ::setenv(kDataDirEnv, "/from/env", 1);
  EXPECT_EQ(resolve_data_path(c), "/from/env");
  ::unsetenv(kDataDirEnv);
  EXPECT_THROW(resolve_data_path(c), ConfigError);
}

TEST(IdnSpec, NoiseSeedDefaultsToTheMasterDerivedSeed) {
  RunConfig c;
  c.pipeline.master_seed = 11;
  EXPECT_EQ(idn_spec(c).seed, derive_seed(11, "idn"));
  c.noise.seed = 4;
  EXPECT_EQ(idn_spec(c).seed, 4u);
  EXPECT_DOUBLE_EQ(idn_spec(c).target_rate, 0.3);
}

TEST(PrepareData, DeterministicAndExactFlipCount) {
  RunConfig c;
  c.dataset.blobs.num_samples = 200;
  c.dataset.blobs.num_test_samples = 50;
  const PreparedData a = prepare_data(c);
  const PreparedData b = prepare_data(c);
  EXPECT_EQ(a.train.size(), 200u);
  EXPECT_EQ(a.test.size(), 50u);
  EXPECT_EQ(a.train.noisy_labels(), b.train.noisy_labels());
  EXPECT_EQ(std::accumulate(a.ledger.flipped.begin(), a.ledger.flipped.end(),
                            0),
            60);
  EXPECT_EQ(a.train.working_labels(), a.train.noisy_labels());

  c.noise.rate = 0.0;
  const PreparedData clean = prepare_data(c);
  EXPECT_DOUBLE_EQ(clean.ledger.flip_fraction(), 0.0);
  EXPECT_EQ(clean.train.noisy_labels(),
            LabelOracle::clean_labels(clean.train));
}

}  // namespace
}  // namespace stagerefine
