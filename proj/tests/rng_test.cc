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

#include "stagerefine/rng.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <vector>

namespace stagerefine {
namespace {

// Reference values from an independent SplitMix64 / FNV-1a implementation.
TEST(Mix64, MatchesReferenceValues) {
  EXPECT_EQ(mix64(0), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(mix64(1), 0x910a2dec89025cc1ULL);
}

TEST(DeriveSeed, MatchesReferenceValues) {
  EXPECT_EQ(derive_seed(42, "pretrain"), 2347938443232158613ULL);
  EXPECT_EQ(derive_seed(42, "iteration", 3), 2079900562078143418ULL);
}

TEST(DeriveSeed, SeparatesTagsIndicesAndParents) {
  const auto a = derive_seed(7, "warmup");
  EXPECT_EQ(a, derive_seed(7, "warmup"));
  EXPECT_NE(a, derive_seed(7, "pretrain"));
  EXPECT_NE(a, derive_seed(8, "warmup"));
  EXPECT_NE(derive_seed(7, "iteration", 1), derive_seed(7, "iteration", 2));
}

TEST(Uniform01, StaysInHalfOpenUnitInterval) {
  Rng rng(3);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000, 0.5, 0.005);
}

TEST(StandardNormal, HasUnitMoments) {
  Rng rng(11);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = standard_normal(rng);
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
}

TEST(UniformIndex, CoversRangeWithoutBias) {
  Rng rng(5);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto j = uniform_index(rng, 7);
    ASSERT_LT(j, 7u);
    ++counts[j];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 450);
}

TEST(Shuffle, ProducesAPermutationDeterministically) {
  std::vector<int> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  Rng r1(9), r2(9);
  shuffle_in_place(std::span<int>(a), r1);
  shuffle_in_place(std::span<int>(b), r2);
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_FALSE(std::is_sorted(a.begin(), a.end()));
}

}  // namespace
}  // namespace stagerefine
