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

#ifndef STAGEREFINE_TRAINER_H_
#define STAGEREFINE_TRAINER_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stagerefine/augment.h"
#include "stagerefine/datasets.h"
#include "stagerefine/model.h"

namespace stagerefine {

struct TrainPhaseConfig {
  int warmup_epochs = 5;
  int batch_size = 64;
  double warmup_learning_rate = 0.05;
  // Base rate of the single cosine schedule spanning all refinement
  // iterations.
  double learning_rate = 0.05;
  // Selection threshold; a sample is selected when its loss is strictly
  // below it.
  double loss_threshold = 1.0;
  LightAugmentation light;

  void validate() const;
  bool operator==(const TrainPhaseConfig&) const = default;
};

// -log softmax(logits)[label], computed with log-sum-exp. When `grad` is
// non-null it receives softmax(logits) - onehot(label). Throws
// ContractError when label is outside [0, K).
double cross_entropy(const Eigen::Ref<const Eigen::VectorXd>& logits,
                     int label, Eigen::VectorXd* grad = nullptr);
double cross_entropy(std::span<const double> logits, int label);

// A strongly augmented copy of a pseudo-labeled base sample. Stored
// pre-augmented and consumed as-is by training.
struct InjectedSample {
  std::int64_t source_index = 0;
  Image image;
  int label = 0;
  int iteration = 0;

  bool operator==(const InjectedSample&) const = default;
};

// Base samples (trained on their working labels, with light augmentation)
// followed by injected copies.
struct TrainingView {
  const LabeledImageDataset* base = nullptr;
  std::span<const InjectedSample> injected;

  std::size_t size() const {
    return (base ? base->size() : 0) + injected.size();
  }
};

struct EpochStats {
  int epoch = 0;
  std::string phase;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
  std::int64_t sample_count = 0;
  // Fraction of training targets matched by the in-batch argmax.
  double train_accuracy = 0.0;

  bool operator==(const EpochStats&) const = default;
};

// One pass over the view in an order drawn from `seed`. Encoder and
// classifier are updated; the projection head is untouched.
EpochStats train_epoch(ModelState& state, const TrainingView& view,
                       const LightAugmentation& light, double learning_rate,
                       int batch_size, std::uint64_t seed);

// Supervised warmup on working labels: warmup_epochs epochs with a cosine
// schedule from warmup_learning_rate. Epoch stats are appended to `log`.
ModelState warmup(ModelState state, const LabeledImageDataset& dataset,
                  const TrainPhaseConfig& config, std::uint64_t seed,
                  std::vector<EpochStats>* log = nullptr);

// Inference-mode logits for every base sample, one row per sample.
Eigen::MatrixXd dataset_logits(const ModelState& state,
                               const LabeledImageDataset& dataset);

// losses[i] = cross_entropy(logits(image_i), working_labels[i]) on
// un-augmented images. Covers base samples only.
std::vector<double> per_sample_losses(const ModelState& state,
                                      const LabeledImageDataset& dataset);

// Argmax of inference-mode logits; ties resolve to the lowest class id.
std::vector<int> predict_labels(const ModelState& state,
                                const LabeledImageDataset& dataset);

}  // namespace stagerefine

#endif  // STAGEREFINE_TRAINER_H_
