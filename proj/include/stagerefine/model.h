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

// Encoder / projection head / classifier head with hand-written backprop.
//
// Activations are stored channel-major: a Tensor holds a (channels x
// batch*height*width) matrix whose column b*H*W + y*W + x is one pixel of one
// sample. Dense layers see height = width = 1, i.e. one column per sample.
// Public forward_* functions return row-per-sample matrices.

#ifndef STAGEREFINE_MODEL_H_
#define STAGEREFINE_MODEL_H_

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stagerefine/image.h"

namespace stagerefine {

struct Tensor {
  Eigen::MatrixXd data;
  int batch = 0;
  int height = 1;
  int width = 1;

  int channels() const { return static_cast<int>(data.rows()); }
};

struct Parameter {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd velocity;
};

class Layer {
 public:
  virtual ~Layer() = default;
  // Training forward; caches what backward needs.
  virtual Tensor forward(const Tensor& x) = 0;
  // Inference forward; touches no state.
  virtual Tensor infer(const Tensor& x) const = 0;
  // Accumulates parameter gradients and returns d(loss)/d(input).
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect(std::vector<Parameter*>& out) = 0;
  // Non-trainable state that is still part of the model (running
  // statistics). Only `value` is meaningful.
  virtual void collect_buffers(std::vector<Parameter*>&) {}
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Parameter*>& out) override;
  std::unique_ptr<Layer> clone() const override;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Architecture and head sizes.
//   "mlp"         flatten -> dense(hidden_width) -> relu -> dense(D)
//   "resnet-tiny" stride-2 stem, one residual block at base_width, one
//                 stride-2 residual block at 2*base_width, global pool, dense(D)
//   "resnet18"    3x3 stem at base_width and four stages of two basic blocks
//                 (widths base_width * {1,2,4,8}), global pool, dense(D)
// Convolutions in the residual networks are followed by batch normalization,
// as is the hidden layer of the projection head. Training passes normalize
// with batch statistics and update running averages; inference uses the
// running averages.
struct EncoderSpec {
  std::string architecture = "resnet-tiny";
  int input_height = 12;
  int input_width = 12;
  int input_channels = 3;
  int embedding_dim = 128;
  int projection_dim = 64;
  int num_classes = 3;
  int base_width = 8;
  int hidden_width = 64;

  void validate() const;
  bool operator==(const EncoderSpec&) const = default;
};

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;

  bool operator==(const SgdConfig&) const = default;
};

enum class ParamGroup { kEncoder, kProjection, kClassifier };

// Packs images into a normalized (C x B*H*W) tensor. Throws ContractError
// when an image does not match the expected shape.
Tensor images_to_tensor(std::span<const Image* const> images, int height,
                        int width, int channels);

class ModelState {
 public:
  ModelState(const EncoderSpec& spec, std::uint64_t init_seed,
             SgdConfig optimizer = {});
  ModelState(const ModelState& other);
  ModelState& operator=(const ModelState& other);
  ModelState(ModelState&&) noexcept;
  ModelState& operator=(ModelState&&) noexcept;
  ~ModelState();

  const EncoderSpec& spec() const { return spec_; }
  const SgdConfig& optimizer() const { return optimizer_; }

  // Inference API, one row per sample. Throws ContractError on shape
  // mismatch.
  Eigen::MatrixXd forward_embed(std::span<const Image> batch) const;
  Eigen::MatrixXd forward_embed(std::span<const Image* const> batch) const;
  // L2-normalized projections of (batch x D) embeddings.
  Eigen::MatrixXd forward_project(const Eigen::MatrixXd& embeddings) const;
  Eigen::MatrixXd forward_logits(std::span<const Image> batch) const;
  Eigen::MatrixXd forward_logits(std::span<const Image* const> batch) const;
  // Classifier head alone on (batch x D) embeddings.
  Eigen::MatrixXd classify_embeddings(const Eigen::MatrixXd& embeddings) const;

  // Training API, column-per-sample. Each *_backward must follow the matching
  // forward call on the same batch.
  Eigen::MatrixXd train_encode(const Tensor& x);
  void encode_backward(const Eigen::MatrixXd& grad_embeddings);
  Eigen::MatrixXd train_project(const Eigen::MatrixXd& embeddings);
  Eigen::MatrixXd project_backward(const Eigen::MatrixXd& grad_projections);
  Eigen::MatrixXd train_classify(const Eigen::MatrixXd& embeddings);
  Eigen::MatrixXd classify_backward(const Eigen::MatrixXd& grad_logits);

  void zero_grad();
  std::vector<Parameter*> parameters(ParamGroup group);
  std::vector<const Parameter*> parameters(ParamGroup group) const;
  // Running normalization statistics of a group.
  std::vector<Parameter*> buffers(ParamGroup group);
  std::vector<const Parameter*> buffers(ParamGroup group) const;
  std::size_t parameter_count() const;

  // SGD with momentum and weight decay over the given groups. Rejects the
  // whole update with NonFiniteError, leaving the state untouched, if any
  // gradient is NaN/Inf.
  void apply_gradients(std::span<const ParamGroup> groups,
                       double learning_rate);

  // Resets momentum buffers of one group.
  void reset_velocity(ParamGroup group);

  // Re-initializes the classifier head from a seed.
  void reinitialize_classifier(std::uint64_t seed);

  bool all_finite() const;

  int epoch = 0;

  void serialize(std::ostream& out) const;
  // Reads parameters written by serialize. Throws VersioningError when the
  // stored architecture differs from `expected` (if given).
  static ModelState deserialize(std::istream& in,
                                const EncoderSpec* expected = nullptr);

 private:
  ModelState() = default;
  void build(std::uint64_t init_seed);

  EncoderSpec spec_;
  SgdConfig optimizer_;
  std::unique_ptr<Sequential> encoder_;
  std::unique_ptr<Sequential> projection_;
  std::unique_ptr<Sequential> classifier_;
  // Cached for project_backward.
  Eigen::MatrixXd proj_raw_;
  Eigen::VectorXd proj_norm_;
};

// Normalizes each column to unit L2 norm; the norm is floored at 1e-12.
Eigen::MatrixXd l2_normalize_columns(const Eigen::MatrixXd& x,
                                     Eigen::VectorXd* norms = nullptr);

}  // namespace stagerefine

#endif  // STAGEREFINE_MODEL_H_
