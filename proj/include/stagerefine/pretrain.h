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

#ifndef STAGEREFINE_PRETRAIN_H_
#define STAGEREFINE_PRETRAIN_H_

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "stagerefine/augment.h"
#include "stagerefine/image.h"
#include "stagerefine/model.h"

namespace stagerefine {

struct ContrastiveConfig {
  int epochs = 30;
  double temperature = 0.5;
  int batch_size = 128;
  double learning_rate = 0.1;
  AugmentationPolicy policy;

  void validate() const;
  bool operator==(const ContrastiveConfig&) const = default;
};

struct NtXentResult {
  double loss = 0.0;
  // d(loss)/d(projections), same shape as the input.
  Eigen::MatrixXd gradient;
};

// NT-Xent over 2B unit rows where rows 2i and 2i+1 are the two views of
// sample i. Each anchor's loss is -log softmax(sim / tau) at its positive,
// normalized over the 2B-1 other rows; the result is the mean over all 2B
// anchors. Throws ContractError when B < 2 or a row is not unit norm (1e-4).
NtXentResult nt_xent_loss(const Eigen::MatrixXd& projections,
                          double temperature);

struct PretrainEpoch {
  int epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
  std::int64_t batches = 0;
};

// Contrastive pretraining of encoder and projection head. Sees images only.
// Epoch e uses batch order and augmentation streams derived from
// (seed, e), so the outcome depends only on (state, images, config, seed).
// `on_epoch`, when set, is called after every epoch.
ModelState pretrain(ModelState state, std::span<const Image> images,
                    const ContrastiveConfig& config, std::uint64_t seed,
                    std::vector<PretrainEpoch>* log = nullptr,
                    const std::function<void(const PretrainEpoch&)>&
                        on_epoch = {});

// Half-cosine decay from base_rate at step 0 to 0 at step == total_steps.
double cosine_learning_rate(double base_rate, std::int64_t step,
                            std::int64_t total_steps);

}  // namespace stagerefine

#endif  // STAGEREFINE_PRETRAIN_H_
