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

#ifndef STAGEREFINE_RNG_H_
#define STAGEREFINE_RNG_H_

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace stagerefine {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// 64-bit FNV-1a over raw bytes, finalized with mix64 and salted with `seed`.
std::uint64_t hash_bytes(std::span<const std::uint8_t> bytes,
                         std::uint64_t seed);

// Seed fan-out. Every random stream in a run is derived from the master seed
// through this function:
//   child = mix64(mix64(parent ^ fnv1a(tag)) + index)
// so streams are independent of the order in which phases execute.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag,
                          std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t parent, std::string_view tag,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(parent, tag, index));
}

// Uniform in [0, 1). Implemented on top of the raw 64-bit engine output so it
// does not depend on the standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Standard normal via Box-Muller; consumes exactly two engine draws.
double standard_normal(Rng& rng);

// Uniform integer in [0, n).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

// Fisher-Yates permutation of 0..n-1.
template <typename Index>
void shuffle_in_place(std::span<Index> values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace stagerefine

#endif  // STAGEREFINE_RNG_H_
