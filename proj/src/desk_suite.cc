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

#include "stagerefine/desk_suite.h"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "stagerefine/errors.h"

namespace stagerefine {
namespace {

std::string format(const char* fmt, double a, double b = 0.0,
                   double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), fmt, a, b, c);
  return buf;
}

}  // namespace

RunConfig toy_run_config(std::uint64_t master_seed) {
  RunConfig c;
  c.dataset.variant = "blobs";
  c.noise.rate = 0.3;
  c.pipeline.master_seed = master_seed;
  c.pipeline.contrastive.epochs = 30;
  c.pipeline.refinery.train.warmup_epochs = 5;
  c.pipeline.refinery.iterations = 4;
  c.output_dir = "runs/toy-seed" + std::to_string(master_seed);
  return c;
}

bool SeedOutcome::selection_never_anti_selects() const {
  for (const QualityRow& row : quality) {
    if (row.iteration == 0 || !row.consensus_clean_fraction) continue;
    if (*row.consensus_clean_fraction < row.base_clean_fraction) return false;
  }
  return true;
}

double SeedOutcome::label_accuracy_gain() const {
  if (quality.empty()) return 0.0;
  return quality.back().working_label_accuracy -
         quality.front().working_label_accuracy;
}

double SeedOutcome::test_accuracy_gain() const {
  return final_test_accuracy - warmup_test_accuracy;
}

bool DeskSuiteReport::selection_ok() const {
  return !seeds.empty() &&
         5 * seeds_without_anti_selection >= 4 * static_cast<int>(seeds.size());
}

bool DeskSuiteReport::label_gain_ok() const {
  return !seeds.empty() && median_label_accuracy_gain >= 0.05;
}

bool DeskSuiteReport::test_gain_ok() const {
  return !seeds.empty() && median_test_accuracy_gain >= 0.03;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

SeedOutcome run_toy_seed(const RunConfig& config,
                         const std::function<void(const std::string&)>& log) {
  const auto start = std::chrono::steady_clock::now();
  PreparedData data = prepare_data(config);
  PipelineHooks hooks;
  if (log) {
    hooks.on_phase_complete = [&](const std::string& phase, const ModelState&,
                                  const LabeledImageDataset&,
                                  const RefinementState*) {
      const double s = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - start)
                           .count();
      log("  seed " + std::to_string(config.pipeline.master_seed) + ": " +
          phase + " done" + format(" (%.1f s)", s));
    };
  }
  PipelineResult result =
      run_pipeline(config.pipeline, data.train, &data.test, hooks);

  SeedOutcome out;
  out.seed = config.pipeline.master_seed;
  out.quality = label_quality(result.refinement, data.train);
  out.warmup_test_accuracy = result.warmup_test_accuracy.value_or(0.0);
  out.final_test_accuracy = result.final_test_accuracy.value_or(0.0);
  out.final_working_labels = data.train.working_labels();
  out.seconds = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - start)
                    .count();
  return out;
}

DeskSuiteReport run_desk_suite(const DeskSuiteOptions& options) {
  DeskSuiteReport report;
  std::vector<MetricsReport> metrics;
  for (std::uint64_t seed : options.seeds) {
    const RunConfig config = toy_run_config(seed);
    SeedOutcome outcome = run_toy_seed(config, options.log);
    if (options.log) {
      options.log(
          "seed " + std::to_string(seed) +
          format(": label accuracy %.4f -> %.4f, test accuracy",
                 outcome.quality.front().working_label_accuracy,
                 outcome.quality.back().working_label_accuracy) +
          format(" %.4f (warmup) -> %.4f (final)",
                 outcome.warmup_test_accuracy, outcome.final_test_accuracy) +
          format(", %.0f s", outcome.seconds));
    }
    MetricsReport m;
    m.dataset = "blobs";
    m.noise_rate = config.noise.rate;
    m.seed = seed;
    m.test_accuracy = outcome.final_test_accuracy;
    m.quality = outcome.quality;
    metrics.push_back(m);
    if (options.output_dir) {
      std::filesystem::create_directories(*options.output_dir);
      emit_quality_csv(outcome.quality,
                       *options.output_dir /
                           ("quality_seed" + std::to_string(seed) + ".csv"));
    }
    report.seeds.push_back(std::move(outcome));
  }

  if (options.check_determinism && !options.seeds.empty()) {
    const SeedOutcome again =
        run_toy_seed(toy_run_config(options.seeds.front()), options.log);
    const SeedOutcome& first = report.seeds.front();
    report.deterministic =
        again.final_working_labels == first.final_working_labels &&
        again.final_test_accuracy == first.final_test_accuracy &&
        again.quality == first.quality;
  }

  std::vector<double> label_gains;
  std::vector<double> test_gains;
  std::vector<double> initial;
  for (const SeedOutcome& s : report.seeds) {
    report.seeds_without_anti_selection +=
        s.selection_never_anti_selects() ? 1 : 0;
    label_gains.push_back(s.label_accuracy_gain());
    test_gains.push_back(s.test_accuracy_gain());
    initial.push_back(s.quality.front().working_label_accuracy);
  }
  if (!report.seeds.empty()) {
    report.median_label_accuracy_gain = median(label_gains);
    report.median_test_accuracy_gain = median(test_gains);
    report.median_initial_label_accuracy = median(initial);
  }
  if (options.output_dir) {
    emit_report(metrics, *options.output_dir / "metrics.csv");
  }
  return report;
}

}  // namespace stagerefine
