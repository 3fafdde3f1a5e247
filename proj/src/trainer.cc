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

#include "stagerefine/trainer.h"

#include <cmath>
#include <numeric>

#include "stagerefine/errors.h"
#include "stagerefine/pretrain.h"
#include "stagerefine/rng.h"

namespace stagerefine {
namespace {

constexpr std::size_t kInferenceBatch = 256;

int argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<int>(best);
}

}  // namespace

void TrainPhaseConfig::validate() const {
  if (warmup_epochs < 0) throw ConfigError("train.warmup_epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(warmup_learning_rate >= 0.0) || !(learning_rate >= 0.0)) {
    throw ConfigError("train learning rates must be non-negative");
  }
  if (!(loss_threshold >= 0.0)) {
    throw ConfigError("train.loss_threshold must be non-negative");
  }
  if (light.padding < 0) throw ConfigError("train.light.padding must be >= 0");
}

double cross_entropy(const Eigen::Ref<const Eigen::VectorXd>& logits,
                     int label, Eigen::VectorXd* grad) {
  if (label < 0 || label >= logits.size()) {
    throw ContractError("cross_entropy: label " + std::to_string(label) +
                        " outside [0, " + std::to_string(logits.size()) + ")");
  }
  const double max_logit = logits.maxCoeff();
  const double log_sum =
      max_logit + std::log((logits.array() - max_logit).exp().sum());
  if (grad != nullptr) {
    *grad = (logits.array() - log_sum).exp().matrix();
    (*grad)(label) -= 1.0;
  }
  return log_sum - logits(label);
}

double cross_entropy(std::span<const double> logits, int label) {
  const Eigen::Map<const Eigen::VectorXd> v(
      logits.data(), static_cast<Eigen::Index>(logits.size()));
  return cross_entropy(v, label);
}

EpochStats train_epoch(ModelState& state, const TrainingView& view,
                       const LightAugmentation& light, double learning_rate,
                       int batch_size, std::uint64_t seed) {
  const std::size_t n_base = view.base ? view.base->size() : 0;
  const std::size_t total = view.size();
  if (total == 0) throw ContractError("train_epoch: empty training view");
  if (batch_size < 1) throw ContractError("train_epoch: batch_size < 1");
  const auto& spec = state.spec();
  const ParamGroup groups[] = {ParamGroup::kEncoder, ParamGroup::kClassifier};

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng order_rng = make_rng(seed, "train-order");
  shuffle_in_place(std::span<std::size_t>(order), order_rng);
  const std::uint64_t aug_seed = derive_seed(seed, "train-light");

  double loss_sum = 0.0;
  std::int64_t correct = 0;
  std::int64_t batch_index = 0;
  std::vector<Image> augmented;
  std::vector<const Image*> ptrs;
  std::vector<int> targets;
  Eigen::VectorXd grad;
  for (std::size_t start = 0; start < total;
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count =
        std::min(static_cast<std::size_t>(batch_size), total - start);
    augmented.clear();
    augmented.reserve(count);
    ptrs.assign(count, nullptr);
    targets.assign(count, 0);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t idx = order[start + i];
      if (idx < n_base) {
        Rng rng(derive_seed(aug_seed, "sample", idx));
        augmented.push_back(apply_light(view.base->image(idx), light, rng));
        ptrs[i] = &augmented.back();
        targets[i] = view.base->working_labels()[idx];
      } else {
        const InjectedSample& inj = view.injected[idx - n_base];
        ptrs[i] = &inj.image;
        targets[i] = inj.label;
      }
    }
    const Tensor x = images_to_tensor(ptrs, spec.input_height, spec.input_width,
                                      spec.input_channels);
    state.zero_grad();
    const Eigen::MatrixXd embeddings = state.train_encode(x);
    const Eigen::MatrixXd logits = state.train_classify(embeddings);
    Eigen::MatrixXd grad_logits(logits.rows(), logits.cols());
    double batch_loss = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      batch_loss += cross_entropy(logits.col(j), targets[j], &grad);
      grad_logits.col(j) = grad / static_cast<double>(count);
      if (argmax(logits.col(j)) == targets[j]) ++correct;
    }
    ++batch_index;
    if (!std::isfinite(batch_loss)) {
      throw NonFiniteError("non-finite cross-entropy in batch " +
                           std::to_string(batch_index));
    }
    state.encode_backward(state.classify_backward(grad_logits));
    state.apply_gradients(groups, learning_rate);
    loss_sum += batch_loss;
  }
  ++state.epoch;
  EpochStats stats;
  stats.mean_loss = loss_sum / static_cast<double>(total);
  stats.learning_rate = learning_rate;
  stats.sample_count = static_cast<std::int64_t>(total);
  stats.train_accuracy =
      static_cast<double>(correct) / static_cast<double>(total);
  return stats;
}

ModelState warmup(ModelState state, const LabeledImageDataset& dataset,
                  const TrainPhaseConfig& config, std::uint64_t seed,
                  std::vector<EpochStats>* log) {
  config.validate();
  const TrainingView view{&dataset, {}};
  for (int e = 0; e < config.warmup_epochs; ++e) {
    const double lr = cosine_learning_rate(config.warmup_learning_rate, e,
                                           config.warmup_epochs);
    EpochStats stats;
    try {
      stats = train_epoch(state, view, config.light, lr, config.batch_size,
                          derive_seed(seed, "warmup-epoch",
                                      static_cast<std::uint64_t>(e)));
    } catch (const NonFiniteError& err) {
      throw NonFiniteError("warmup epoch " + std::to_string(e + 1) + ": " +
                           err.what());
    }
    stats.epoch = e + 1;
    stats.phase = "warmup";
    if (log != nullptr) log->push_back(stats);
  }
  return state;
}

Eigen::MatrixXd dataset_logits(const ModelState& state,
                               const LabeledImageDataset& dataset) {
  const std::size_t n = dataset.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n),
                      state.spec().num_classes);
  std::vector<const Image*> ptrs;
  for (std::size_t start = 0; start < n; start += kInferenceBatch) {
    const std::size_t count = std::min(kInferenceBatch, n - start);
    ptrs.clear();
    for (std::size_t i = 0; i < count; ++i) {
      ptrs.push_back(&dataset.image(start + i));
    }
    out.middleRows(static_cast<Eigen::Index>(start),
                   static_cast<Eigen::Index>(count)) =
        state.forward_logits(std::span<const Image* const>(ptrs));
  }
  return out;
}

std::vector<double> per_sample_losses(const ModelState& state,
                                      const LabeledImageDataset& dataset) {
  const Eigen::MatrixXd logits = dataset_logits(state, dataset);
  const auto& labels = dataset.working_labels();
  std::vector<double> losses(dataset.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    losses[i] = cross_entropy(
        Eigen::VectorXd(logits.row(static_cast<Eigen::Index>(i)).transpose()),
        labels[i]);
  }
  return losses;
}

std::vector<int> predict_labels(const ModelState& state,
                                const LabeledImageDataset& dataset) {
  const Eigen::MatrixXd logits = dataset_logits(state, dataset);
  std::vector<int> labels(dataset.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = argmax(logits.row(static_cast<Eigen::Index>(i)).transpose());
  }
  return labels;
}

}  // namespace stagerefine
