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

#include "stagerefine/pretrain.h"

#include <cmath>
#include <numbers>
#include <numeric>

#include "stagerefine/errors.h"
#include "stagerefine/rng.h"

namespace stagerefine {

void ContrastiveConfig::validate() const {
  if (epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
  if (!(temperature > 0.0)) {
    throw ConfigError("pretrain.temperature must be positive");
  }
  if (batch_size < 2) {
    throw ConfigError("pretrain.batch_size must be >= 2");
  }
  if (!(learning_rate >= 0.0)) {
    throw ConfigError("pretrain.learning_rate must be non-negative");
  }
  policy.validate();
}

double cosine_learning_rate(double base_rate, std::int64_t step,
                            std::int64_t total_steps) {
  if (total_steps <= 0) return base_rate;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * base_rate * (1.0 + std::cos(std::numbers::pi * t));
}

NtXentResult nt_xent_loss(const Eigen::MatrixXd& projections,
                          double temperature) {
  const Eigen::Index rows = projections.rows();
  if (rows < 4 || rows % 2 != 0) {
    throw ContractError(
        "nt_xent_loss: no negatives available (need B >= 2 pairs, got " +
        std::to_string(rows) + " rows)");
  }
  if (!(temperature > 0.0)) {
    throw ContractError("nt_xent_loss: temperature must be positive");
  }
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double norm = projections.row(i).norm();
    if (!(std::abs(norm - 1.0) <= 1e-4)) {
      throw ContractError("nt_xent_loss: row " + std::to_string(i) +
                          " has norm " + std::to_string(norm) +
                          ", expected unit norm");
    }
  }

  const Eigen::MatrixXd sim =
      (projections * projections.transpose()) / temperature;
  // weights(a, j) = d(loss)/d(sim(a, j)) before symmetrization.
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(rows, rows);
  double total = 0.0;
  for (Eigen::Index a = 0; a < rows; ++a) {
    const Eigen::Index positive = a ^ 1;
    double max_sim = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < rows; ++j) {
      if (j != a) max_sim = std::max(max_sim, sim(a, j));
    }
    double denom = 0.0;
    for (Eigen::Index j = 0; j < rows; ++j) {
      if (j != a) denom += std::exp(sim(a, j) - max_sim);
    }
    const double log_denom = max_sim + std::log(denom);
    total += log_denom - sim(a, positive);
    for (Eigen::Index j = 0; j < rows; ++j) {
      if (j == a) continue;
      weights(a, j) = std::exp(sim(a, j) - log_denom);
    }
    weights(a, positive) -= 1.0;
  }
  const double scale = 1.0 / static_cast<double>(rows);
  NtXentResult result;
  result.loss = total * scale;
  result.gradient =
      ((weights + weights.transpose()) * projections) * (scale / temperature);
  return result;
}

ModelState pretrain(ModelState state, std::span<const Image> images,
                    const ContrastiveConfig& config, std::uint64_t seed,
                    std::vector<PretrainEpoch>* log,
                    const std::function<void(const PretrainEpoch&)>& on_epoch) {
  config.validate();
  if (config.epochs == 0) return state;
  if (images.size() < 2) {
    throw ContractError("pretrain needs at least two images");
  }
  const std::size_t n = images.size();
  const auto& spec = state.spec();
  const ParamGroup groups[] = {ParamGroup::kEncoder, ParamGroup::kProjection};

  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr =
        cosine_learning_rate(config.learning_rate, epoch, config.epochs);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng = make_rng(seed, "pretrain-order",
                             static_cast<std::uint64_t>(epoch));
    shuffle_in_place(std::span<std::size_t>(order), order_rng);
    const std::uint64_t view_seed =
        derive_seed(seed, "pretrain-views", static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    std::int64_t batches = 0;
    std::vector<Image> views;
    std::vector<const Image*> ptrs;
    for (std::size_t start = 0; start < n;
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t count =
          std::min(static_cast<std::size_t>(config.batch_size), n - start);
      // A trailing batch of one sample has no negatives; it is folded out.
      if (count < 2) continue;
      views.clear();
      views.reserve(2 * count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t idx = order[start + i];
        Rng view_rng(derive_seed(view_seed, "sample", idx));
        auto [a, b] = make_view_pair(images[idx], config.policy, view_rng);
        views.push_back(std::move(a));
        views.push_back(std::move(b));
      }
      ptrs.clear();
      for (const Image& v : views) ptrs.push_back(&v);
      const Tensor x = images_to_tensor(ptrs, spec.input_height,
                                        spec.input_width, spec.input_channels);

      state.zero_grad();
      const Eigen::MatrixXd embeddings = state.train_encode(x);
      const Eigen::MatrixXd projections = state.train_project(embeddings);
      const NtXentResult nt =
          nt_xent_loss(projections.transpose(), config.temperature);
      if (!std::isfinite(nt.loss)) {
        throw NonFiniteError("non-finite contrastive loss at epoch " +
                             std::to_string(epoch + 1) + " batch " +
                             std::to_string(batches + 1));
      }
      const Eigen::MatrixXd grad_embeddings =
          state.project_backward(nt.gradient.transpose());
      state.encode_backward(grad_embeddings);
      try {
        state.apply_gradients(groups, lr);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("pretrain epoch " + std::to_string(epoch + 1) +
                             " batch " + std::to_string(batches + 1) + ": " +
                             e.what());
      }
      loss_sum += nt.loss;
      ++batches;
    }
    ++state.epoch;
    PretrainEpoch record{epoch + 1, batches ? loss_sum / batches : 0.0, lr,
                         batches};
    if (log != nullptr) log->push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return state;
}

}  // namespace stagerefine
