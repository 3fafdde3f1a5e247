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

#ifndef STAGEREFINE_EVAL_H_
#define STAGEREFINE_EVAL_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stagerefine/datasets.h"
#include "stagerefine/model.h"
#include "stagerefine/refinery.h"

namespace stagerefine {

// The only sanctioned reader of ground-truth labels outside the datasets
// module.
class LabelOracle {
 public:
  static const std::vector<int>& clean_labels(
      const LabeledImageDataset& dataset) {
    return dataset.clean_labels(OracleKey{});
  }
};

// Exact fraction of matching entries. Throws ContractError when empty or
// when the lengths differ.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

// Un-augmented, inference-mode accuracy against the set's clean labels.
double accuracy(const ModelState& model, const LabeledImageDataset& test_set);

struct QualityRow {
  int iteration = 0;
  // mean(working == clean) after this iteration's relabel step.
  double working_label_accuracy = 0.0;
  // Clean fraction of the whole base set, measured on the labels used for
  // this iteration's selection.
  double base_clean_fraction = 0.0;
  std::int64_t consensus_size = 0;
  // Clean fraction inside the consensus set (labels at selection time).
  // Empty when the consensus set is empty.
  std::optional<double> consensus_clean_fraction;
  // Clean fraction among samples relabeled in this iteration.
  std::optional<double> pseudo_label_precision;
  std::int64_t labels_changed = 0;

  bool operator==(const QualityRow&) const = default;
};

// Row 0 describes the labels before refinement, row k the end of iteration k.
// Returns nullopt when no clean labels are supplied.
std::optional<std::vector<QualityRow>> label_quality(
    const RefinementState& state,
    std::optional<std::span<const int>> clean_labels,
    std::span<const int> initial_labels);

// Convenience overload drawing clean labels through LabelOracle and the
// initial labels from the dataset's noisy track.
std::vector<QualityRow> label_quality(const RefinementState& state,
                                      const LabeledImageDataset& dataset);

struct MetricsReport {
  std::string method = "stage-refine";
  std::string dataset;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  std::vector<QualityRow> quality;
};

// Result table in long form: one row per (dataset, noise rate,
// method/config), percentages with two decimals.
// Columns: method,dataset,noise_pct,seed,test_accuracy_pct,
//          initial_label_accuracy_pct,final_label_accuracy_pct,iterations
// Throws ContractError for an empty list and IoError for an unwritable path.
void emit_report(std::span<const MetricsReport> reports,
                 const std::filesystem::path& path);

// Parsed form of one emitted row.
struct ReportRow {
  std::string method;
  std::string dataset;
  double noise_pct = 0.0;
  std::uint64_t seed = 0;
  double test_accuracy_pct = 0.0;
  std::optional<double> initial_label_accuracy_pct;
  std::optional<double> final_label_accuracy_pct;
  int iterations = 0;

  bool operator==(const ReportRow&) const = default;
};

std::vector<ReportRow> read_report(const std::filesystem::path& path);

// Per-iteration plot data: iteration,working_label_accuracy,...
void emit_quality_csv(std::span<const QualityRow> rows,
                      const std::filesystem::path& path);

}  // namespace stagerefine

#endif  // STAGEREFINE_EVAL_H_
