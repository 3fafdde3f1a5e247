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

#include <array>

#include "stagerefine/errors.h"
#include "stagerefine/eval.h"
#include "stagerefine/rng.h"

namespace stagerefine {
namespace {

template <typename Fn>
auto in_phase(const std::string& phase, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PhaseError&) {
    throw;
  } catch (const Error& err) {
    throw PhaseError(phase, err.what());
  }
}

}  // namespace

void PipelineConfig::validate() const {
  encoder.validate();
  contrastive.validate();
  refinery.validate();
  if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) {
    throw ConfigError("optimizer.momentum must lie in [0, 1)");
  }
  if (optimizer.weight_decay < 0.0) {
    throw ConfigError("optimizer.weight_decay must be non-negative");
  }
}

PhaseSeeds PhaseSeeds::from_master(std::uint64_t master) {
  return {derive_seed(master, "model-init"), derive_seed(master, "pretrain"),
          derive_seed(master, "warmup")};
}

std::uint64_t PhaseSeeds::iteration(std::uint64_t master, int k) {
  return derive_seed(master, "iteration", static_cast<std::uint64_t>(k));
}

int completed_iterations(const std::string& phase) {
  if (phase == "pretrain") return -1;
  if (phase == "warmup") return 0;
  if (phase.size() > 4 && phase.compare(0, 4, "iter") == 0) {
    const std::string digits = phase.substr(4);
    if (digits.find_first_not_of("0123456789") == std::string::npos &&
        digits.size() < 6) {
      return std::stoi(digits);
    }
  }
  throw VersioningError("unknown checkpoint phase '" + phase + "'");
}

PipelineResult run_pipeline(const PipelineConfig& config,
                            LabeledImageDataset& dataset,
                            const LabeledImageDataset* test_set,
                            const PipelineHooks& hooks,
                            std::optional<Checkpoint> resume) {
  config.validate();
  if (config.encoder.num_classes != dataset.num_classes()) {
    throw ConfigError("encoder.num_classes (" +
                      std::to_string(config.encoder.num_classes) +
                      ") does not match the dataset (" +
                      std::to_string(dataset.num_classes()) + ")");
  }
  if (config.encoder.input_height != dataset.height() ||
      config.encoder.input_width != dataset.width() ||
      config.encoder.input_channels != dataset.channels()) {
    throw ConfigError("encoder input shape does not match the dataset images");
  }
  const PhaseSeeds seeds = PhaseSeeds::from_master(config.master_seed);

  int done = -2;
  std::optional<ModelState> model;
  RefinementState refinement = RefinementState::start(dataset);
  if (resume) {
    if (resume->master_seed != config.master_seed) {
      throw ConfigError("checkpoint was written with master seed " +
                        std::to_string(resume->master_seed) +
                        ", config has " + std::to_string(config.master_seed));
    }
    if (!(resume->model.spec() == config.encoder)) {
      throw VersioningError("checkpoint architecture differs from config");
    }
    done = completed_iterations(resume->phase);
    if (done >= 0) {
      if (!resume->working_labels ||
          resume->working_labels->size() != dataset.size()) {
        throw VersioningError("checkpoint '" + resume->phase +
                              "' does not carry labels for this dataset");
      }
      dataset.mutable_working_labels() = *resume->working_labels;
    }
    if (done > 0) {
      if (!resume->refinement || resume->refinement->iteration != done) {
        throw VersioningError("checkpoint '" + resume->phase +
                              "' has no matching refinement state");
      }
      refinement = std::move(*resume->refinement);
    }
    model.emplace(std::move(resume->model));
  }

  PipelineResult result{
      model ? std::move(*model)
            : ModelState(config.encoder, seeds.init, config.optimizer),
      std::move(refinement), {}, {}, std::nullopt, std::nullopt};
  ModelState& state = result.model;

  if (done < -1) {
    state = in_phase("pretrain", [&] {
      return pretrain(std::move(state), dataset.images(), config.contrastive,
                      seeds.pretrain, &result.pretrain_log,
                      hooks.on_pretrain_epoch);
    });
    // Contrastive momentum does not carry into supervised training.
    state.reset_velocity(ParamGroup::kEncoder);
    if (hooks.on_phase_complete) {
      hooks.on_phase_complete("pretrain", state, dataset, nullptr);
    }
  }

  if (done < 0) {
    std::vector<EpochStats> log;
    state = in_phase("warmup", [&] {
      return warmup(std::move(state), dataset, config.refinery.train,
                    seeds.warmup, &log);
    });
    for (const EpochStats& e : log) {
      if (hooks.on_epoch) hooks.on_epoch(e);
      result.epoch_log.push_back(e);
    }
    if (test_set != nullptr) {
      result.warmup_test_accuracy =
          in_phase("warmup", [&] { return accuracy(state, *test_set); });
    }
    if (hooks.on_phase_complete) {
      hooks.on_phase_complete("warmup", state, dataset, &result.refinement);
    }
  }

  for (int k = std::max(done, 0) + 1; k <= config.refinery.iterations; ++k) {
    const std::string phase = "iter" + std::to_string(k);
    const IterationRecord& record = in_phase(phase, [&]() -> const auto& {
      return run_iteration(state, dataset, result.refinement, config.refinery,
                           k, PhaseSeeds::iteration(config.master_seed, k));
    });
    for (const EpochStats& e : record.epochs) {
      if (hooks.on_epoch) hooks.on_epoch(e);
      result.epoch_log.push_back(e);
    }
    if (hooks.on_phase_complete) {
      hooks.on_phase_complete(phase, state, dataset, &result.refinement);
    }
  }

  if (test_set != nullptr) {
    result.final_test_accuracy =
        in_phase("evaluate", [&] { return accuracy(state, *test_set); });
  }
  return result;
}

}  // namespace stagerefine
