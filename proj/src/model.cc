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

#include "stagerefine/model.h"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "stagerefine/errors.h"
#include "stagerefine/rng.h"

namespace stagerefine {
namespace {

Eigen::MatrixXd random_normal(Eigen::Index rows, Eigen::Index cols,
                              double stddev, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      m(i, j) = stddev * standard_normal(rng);
    }
  }
  return m;
}

Parameter make_param(std::string name, Eigen::MatrixXd value) {
  Parameter p;
  p.name = std::move(name);
  p.grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  p.velocity = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  return p;
}

// ---------------------------------------------------------------------------

class Conv2d final : public Layer {
 public:
  // `bias` is dropped for convolutions followed by batch normalization.
  Conv2d(const std::string& name, int in_channels, int out_channels,
         int kernel, int stride, int padding, bool bias, Rng& rng)
      : in_(in_channels), out_(out_channels), kernel_(kernel),
        stride_(stride), padding_(padding), has_bias_(bias) {
    const int fan_in = in_channels * kernel * kernel;
    weight_ = make_param(name + ".weight",
                         random_normal(out_channels, fan_in,
                                       std::sqrt(2.0 / fan_in), rng));
    if (has_bias_) {
      bias_ = make_param(name + ".bias",
                         Eigen::MatrixXd::Zero(out_channels, 1));
    }
  }

  Tensor forward(const Tensor& x) override {
    input_shape_ = x;
    input_shape_.data.resize(0, 0);
    cols_ = im2col(x);
    return apply(x, cols_);
  }

  Tensor infer(const Tensor& x) const override { return apply(x, im2col(x)); }

  Tensor backward(const Tensor& g) override {
    weight_.grad.noalias() += g.data * cols_.transpose();
    if (has_bias_) bias_.grad += g.data.rowwise().sum();
    const Eigen::MatrixXd dcols = weight_.value.transpose() * g.data;
    return col2im(dcols);
  }

  void collect(std::vector<Parameter*>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

  std::unique_ptr<Layer> clone() const override {
    auto copy = std::make_unique<Conv2d>(*this);
    copy->cols_.resize(0, 0);
    return copy;
  }

 private:
  int out_size(int n) const { return (n + 2 * padding_ - kernel_) / stride_ + 1; }

  Tensor apply(const Tensor& x, const Eigen::MatrixXd& cols) const {
    Tensor y;
    y.batch = x.batch;
    y.height = out_size(x.height);
    y.width = out_size(x.width);
    y.data.noalias() = weight_.value * cols;
    if (has_bias_) y.data.colwise() += bias_.value.col(0);
    return y;
  }

  Eigen::MatrixXd im2col(const Tensor& x) const {
    if (x.channels() != in_) {
      throw ContractError("convolution expects " + std::to_string(in_) +
                          " input channels, got " +
                          std::to_string(x.channels()));
    }
    const int ho = out_size(x.height);
    const int wo = out_size(x.width);
    const int k = kernel_;
    Eigen::MatrixXd cols(static_cast<Eigen::Index>(in_) * k * k,
                         static_cast<Eigen::Index>(x.batch) * ho * wo);
    const double* src = x.data.data();
    const int c_stride = in_;
    for (int b = 0; b < x.batch; ++b) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const Eigen::Index col =
              (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
          double* dst = cols.col(col).data();
          for (int c = 0; c < in_; ++c) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride_ - padding_ + ky;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride_ - padding_ + kx;
                if (iy < 0 || iy >= x.height || ix < 0 || ix >= x.width) {
                  *dst++ = 0.0;
                } else {
                  const Eigen::Index pix =
                      (static_cast<Eigen::Index>(b) * x.height + iy) *
                          x.width + ix;
                  *dst++ = src[pix * c_stride + c];
                }
              }
            }
          }
        }
      }
    }
    return cols;
  }

  Tensor col2im(const Eigen::MatrixXd& dcols) const {
    const Tensor& s = input_shape_;
    const int ho = out_size(s.height);
    const int wo = out_size(s.width);
    const int k = kernel_;
    Tensor dx;
    dx.batch = s.batch;
    dx.height = s.height;
    dx.width = s.width;
    dx.data = Eigen::MatrixXd::Zero(
        in_, static_cast<Eigen::Index>(s.batch) * s.height * s.width);
    double* dst = dx.data.data();
    for (int b = 0; b < s.batch; ++b) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const Eigen::Index col =
              (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
          const double* g = dcols.col(col).data();
          for (int c = 0; c < in_; ++c) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride_ - padding_ + ky;
              for (int kx = 0; kx < k; ++kx, ++g) {
                const int ix = ox * stride_ - padding_ + kx;
                if (iy < 0 || iy >= s.height || ix < 0 || ix >= s.width) {
                  continue;
                }
                const Eigen::Index pix =
                    (static_cast<Eigen::Index>(b) * s.height + iy) * s.width +
                    ix;
                dst[pix * in_ + c] += *g;
              }
            }
          }
        }
      }
    }
    return dx;
  }

  int in_, out_, kernel_, stride_, padding_;
  bool has_bias_;
  Parameter weight_;
  Parameter bias_;
  Eigen::MatrixXd cols_;
  Tensor input_shape_;
};

class Linear final : public Layer {
 public:
  Linear(const std::string& name, int in_features, int out_features,
         double stddev, Rng& rng)
      : in_(in_features) {
    weight_ = make_param(name + ".weight",
                         random_normal(out_features, in_features, stddev, rng));
    bias_ = make_param(name + ".bias", Eigen::MatrixXd::Zero(out_features, 1));
  }

  Tensor forward(const Tensor& x) override {
    input_ = x.data;
    return infer(x);
  }

  Tensor infer(const Tensor& x) const override {
    if (x.height != 1 || x.width != 1 || x.channels() != in_) {
      throw ContractError("dense layer expects " + std::to_string(in_) +
                          " features per sample, got " +
                          std::to_string(x.channels()) + "x" +
                          std::to_string(x.height) + "x" +
                          std::to_string(x.width));
    }
    Tensor y;
    y.batch = x.batch;
    y.data.noalias() = weight_.value * x.data;
    y.data.colwise() += bias_.value.col(0);
    return y;
  }

  Tensor backward(const Tensor& g) override {
    weight_.grad.noalias() += g.data * input_.transpose();
    bias_.grad += g.data.rowwise().sum();
    Tensor dx;
    dx.batch = g.batch;
    dx.data.noalias() = weight_.value.transpose() * g.data;
    return dx;
  }

  void collect(std::vector<Parameter*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  std::unique_ptr<Layer> clone() const override {
    auto copy = std::make_unique<Linear>(*this);
    copy->input_.resize(0, 0);
    return copy;
  }

 private:
  int in_;
  Parameter weight_;
  Parameter bias_;
  Eigen::MatrixXd input_;
};

class Relu final : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    Tensor y = infer(x);
    mask_ = (x.data.array() > 0.0).cast<double>();
    return y;
  }
  Tensor infer(const Tensor& x) const override {
    Tensor y = x;
    y.data = x.data.cwiseMax(0.0);
    return y;
  }
  Tensor backward(const Tensor& g) override {
    Tensor dx = g;
    dx.data = g.data.cwiseProduct(mask_);
    return dx;
  }
  void collect(std::vector<Parameter*>&) override {}
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Relu>();
  }

 private:
  Eigen::MatrixXd mask_;
};

class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    shape_ = x;
    shape_.data.resize(0, 0);
    return infer(x);
  }
  Tensor infer(const Tensor& x) const override {
    const int hw = x.height * x.width;
    Tensor y;
    y.batch = x.batch;
    y.data.resize(x.channels(), x.batch);
    for (int b = 0; b < x.batch; ++b) {
      y.data.col(b) = x.data.middleCols(static_cast<Eigen::Index>(b) * hw, hw)
                          .rowwise()
                          .mean();
    }
    return y;
  }
  Tensor backward(const Tensor& g) override {
    const int hw = shape_.height * shape_.width;
    Tensor dx;
    dx.batch = shape_.batch;
    dx.height = shape_.height;
    dx.width = shape_.width;
    dx.data.resize(g.data.rows(), static_cast<Eigen::Index>(shape_.batch) * hw);
    for (int b = 0; b < shape_.batch; ++b) {
      dx.data.middleCols(static_cast<Eigen::Index>(b) * hw, hw) =
          (g.data.col(b) / hw).replicate(1, hw);
    }
    return dx;
  }
  void collect(std::vector<Parameter*>&) override {}
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<GlobalAvgPool>();
  }

 private:
  Tensor shape_;
};

// (C x B*H*W) -> (C*H*W x B).
class Flatten final : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    shape_ = x;
    shape_.data.resize(0, 0);
    return infer(x);
  }
  Tensor infer(const Tensor& x) const override {
    const int hw = x.height * x.width;
    const int c = x.channels();
    Tensor y;
    y.batch = x.batch;
    y.data.resize(static_cast<Eigen::Index>(c) * hw, x.batch);
    for (int b = 0; b < x.batch; ++b) {
      y.data.col(b) = Eigen::Map<const Eigen::VectorXd>(
          x.data.data() + static_cast<Eigen::Index>(b) * hw * c,
          static_cast<Eigen::Index>(hw) * c);
    }
    return y;
  }
  Tensor backward(const Tensor& g) override {
    Tensor dx;
    dx.batch = shape_.batch;
    dx.height = shape_.height;
    dx.width = shape_.width;
    const int hw = shape_.height * shape_.width;
    const Eigen::Index c = g.data.rows() / hw;
    dx.data.resize(c, static_cast<Eigen::Index>(shape_.batch) * hw);
    for (int b = 0; b < shape_.batch; ++b) {
      Eigen::Map<Eigen::VectorXd>(
          dx.data.data() + static_cast<Eigen::Index>(b) * hw * c,
          static_cast<Eigen::Index>(hw) * c) = g.data.col(b);
    }
    return dx;
  }
  void collect(std::vector<Parameter*>&) override {}
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Flatten>();
  }

 private:
  Tensor shape_;
};

// Per-channel normalization over batch and spatial positions.
class BatchNorm final : public Layer {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;

  BatchNorm(const std::string& name, int channels) {
    gamma_ = make_param(name + ".gamma", Eigen::MatrixXd::Ones(channels, 1));
    beta_ = make_param(name + ".beta", Eigen::MatrixXd::Zero(channels, 1));
    running_mean_ =
        make_param(name + ".running_mean", Eigen::MatrixXd::Zero(channels, 1));
    running_var_ =
        make_param(name + ".running_var", Eigen::MatrixXd::Ones(channels, 1));
  }

  Tensor forward(const Tensor& x) override {
    const Eigen::Index n = x.data.cols();
    if (n < 2) {
      throw ContractError("batch normalization needs at least two values "
                          "per channel in training mode");
    }
    const Eigen::VectorXd mean = x.data.rowwise().mean();
    xhat_ = x.data.colwise() - mean;
    const Eigen::VectorXd var =
        xhat_.array().square().rowwise().mean().matrix();
    inv_std_ = (var.array() + kEpsilon).rsqrt().matrix();
    xhat_ = inv_std_.asDiagonal() * xhat_;
    running_mean_.value.col(0) =
        (1.0 - kMomentum) * running_mean_.value.col(0) + kMomentum * mean;
    running_var_.value.col(0) =
        (1.0 - kMomentum) * running_var_.value.col(0) +
        kMomentum * var * (static_cast<double>(n) / static_cast<double>(n - 1));
    Tensor y = x;
    y.data = gamma_.value.col(0).asDiagonal() * xhat_;
    y.data.colwise() += beta_.value.col(0);
    return y;
  }

  Tensor infer(const Tensor& x) const override {
    const Eigen::VectorXd scale =
        gamma_.value.col(0).array() /
        (running_var_.value.col(0).array() + kEpsilon).sqrt();
    const Eigen::VectorXd shift =
        beta_.value.col(0) - scale.cwiseProduct(running_mean_.value.col(0));
    Tensor y = x;
    y.data = scale.asDiagonal() * x.data;
    y.data.colwise() += shift;
    return y;
  }

  Tensor backward(const Tensor& g) override {
    const double n = static_cast<double>(g.data.cols());
    const Eigen::VectorXd dbeta = g.data.rowwise().sum();
    const Eigen::VectorXd dgamma =
        g.data.cwiseProduct(xhat_).rowwise().sum();
    gamma_.grad.col(0) += dgamma;
    beta_.grad.col(0) += dbeta;
    // dx = gamma / std * (g - mean(g) - xhat * mean(g * xhat))
    Tensor dx = g;
    dx.data = g.data - (dgamma / n).asDiagonal() * xhat_;
    dx.data.colwise() -= dbeta / n;
    dx.data = (gamma_.value.col(0).cwiseProduct(inv_std_)).asDiagonal() *
              dx.data;
    return dx;
  }

  void collect(std::vector<Parameter*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(std::vector<Parameter*>& out) override {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }
  std::unique_ptr<Layer> clone() const override {
    auto copy = std::make_unique<BatchNorm>(*this);
    copy->xhat_.resize(0, 0);
    return copy;
  }

 private:
  Parameter gamma_;
  Parameter beta_;
  Parameter running_mean_;
  Parameter running_var_;
  Eigen::MatrixXd xhat_;
  Eigen::VectorXd inv_std_;
};

// relu(branch(x) + shortcut(x)), branch = conv3x3 -> bn -> relu -> conv3x3 ->
// bn and shortcut = identity or a strided 1x1 convolution -> bn.

class Residual final : public Layer {
 public:
  Residual(const std::string& name, int in_channels, int out_channels,
           int stride, Rng& rng) {
    branch_.add(std::make_unique<Conv2d>(name + ".conv1", in_channels,
                                         out_channels, 3, stride, 1, false,
                                         rng));
    branch_.add(std::make_unique<BatchNorm>(name + ".bn1", out_channels));
    branch_.add(std::make_unique<Relu>());
    branch_.add(std::make_unique<Conv2d>(name + ".conv2", out_channels,
                                         out_channels, 3, 1, 1, false, rng));
    branch_.add(std::make_unique<BatchNorm>(name + ".bn2", out_channels));
    if (stride != 1 || in_channels != out_channels) {
      auto shortcut = std::make_unique<Sequential>();
      shortcut->add(std::make_unique<Conv2d>(name + ".shortcut", in_channels,
                                             out_channels, 1, stride, 0, false,
                                             rng));
      shortcut->add(
          std::make_unique<BatchNorm>(name + ".shortcut_bn", out_channels));
      shortcut_ = std::move(shortcut);
    }
  }
  Residual(const Residual& other)
      : Layer(other), branch_(other.branch_),
        shortcut_(other.shortcut_ ? other.shortcut_->clone() : nullptr) {}

  Tensor forward(const Tensor& x) override {
    Tensor a = branch_.forward(x);
    if (shortcut_) {
      a.data += shortcut_->forward(x).data;
    } else {
      a.data += x.data;
    }
    return relu_.forward(a);
  }
  Tensor infer(const Tensor& x) const override {
    Tensor a = branch_.infer(x);
    if (shortcut_) {
      a.data += shortcut_->infer(x).data;
    } else {
      a.data += x.data;
    }
    return relu_.infer(a);
  }
  Tensor backward(const Tensor& g) override {
    const Tensor gs = relu_.backward(g);
    Tensor dx = branch_.backward(gs);
    if (shortcut_) {
      dx.data += shortcut_->backward(gs).data;
    } else {
      dx.data += gs.data;
    }
    return dx;
  }
  void collect(std::vector<Parameter*>& out) override {
    branch_.collect(out);
    if (shortcut_) shortcut_->collect(out);
  }
  void collect_buffers(std::vector<Parameter*>& out) override {
    branch_.collect_buffers(out);
    if (shortcut_) shortcut_->collect_buffers(out);
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Residual>(*this);
  }

 private:
  Sequential branch_;
  std::unique_ptr<Layer> shortcut_;
  Relu relu_;
};

// Parameters are flagged non-finite by a single pass over their values.
bool finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_i64(std::ostream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  write_i64(out, m.rows());
  write_i64(out, m.cols());
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw VersioningError("model blob is truncated");
  }
  return v;
}
std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  if (n > (1u << 20)) throw VersioningError("model blob string is corrupt");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw VersioningError("model blob is truncated");
  return s;
}
Eigen::MatrixXd read_matrix(std::istream& in) {
  const auto rows = read_pod<std::int64_t>(in);
  const auto cols = read_pod<std::int64_t>(in);
  if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 32)) {
    throw VersioningError("model blob matrix header is corrupt");
  }
  Eigen::MatrixXd m(rows, cols);
  if (!in.read(reinterpret_cast<char*>(m.data()),
               static_cast<std::streamsize>(m.size() * sizeof(double)))) {
    throw VersioningError("model blob is truncated");
  }
  return m;
}

constexpr char kModelMagic[8] = {'S', 'R', 'M', 'O', 'D', 'E', 'L', '1'};
constexpr std::uint32_t kModelVersion = 2;

}  // namespace

// ---------------------------------------------------------------------------

Sequential::Sequential(const Sequential& other) : Layer(other) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    layers_.clear();
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  return *this;
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h);
  return h;
}

Tensor Sequential::infer(const Tensor& x) const {
  Tensor h = x;
  for (const auto& l : layers_) h = l->infer(h);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = (*it)->backward(g);
  }
  return g;
}

void Sequential::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l->collect(out);
}

void Sequential::collect_buffers(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l->collect_buffers(out);
}

std::unique_ptr<Layer> Sequential::clone() const {
  return std::make_unique<Sequential>(*this);
}

void EncoderSpec::validate() const {
  if (architecture != "mlp" && architecture != "resnet-tiny" &&
      architecture != "resnet18") {
    throw ConfigError("unknown model.architecture '" + architecture +
                      "' (expected mlp, resnet-tiny or resnet18)");
  }
  if (input_height < 1 || input_width < 1 || input_channels < 1) {
    throw ConfigError("model input shape must be positive");
  }
  if (embedding_dim < 1 || projection_dim < 1 || base_width < 1 ||
      hidden_width < 1) {
    throw ConfigError("model widths must be positive");
  }
  if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
}

Tensor images_to_tensor(std::span<const Image* const> images, int height,
                        int width, int channels) {
  Tensor t;
  t.batch = static_cast<int>(images.size());
  t.height = height;
  t.width = width;
  const Eigen::Index hw = static_cast<Eigen::Index>(height) * width;
  t.data.resize(channels, hw * t.batch);
  double* dst = t.data.data();
  for (int b = 0; b < t.batch; ++b) {
    const Image& img = *images[b];
    if (img.height != height || img.width != width ||
        img.channels != channels) {
      throw ContractError(
          "image " + std::to_string(b) + " has shape " +
          std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
          std::to_string(img.channels) + ", model expects " +
          std::to_string(height) + "x" + std::to_string(width) + "x" +
          std::to_string(channels));
    }
    // Interleaved HWC bytes map directly onto channel-major columns.
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      *dst++ = (img.pixels[i] / 255.0 - 0.5) * 4.0;
    }
  }
  return t;
}

Eigen::MatrixXd l2_normalize_columns(const Eigen::MatrixXd& x,
                                     Eigen::VectorXd* norms) {
  Eigen::VectorXd n = x.colwise().norm().transpose().cwiseMax(1e-12);
  Eigen::MatrixXd y = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) y.col(j) /= n(j);
  if (norms != nullptr) *norms = std::move(n);
  return y;
}

// ---------------------------------------------------------------------------

ModelState::ModelState(const EncoderSpec& spec, std::uint64_t init_seed,
                       SgdConfig optimizer)
    : spec_(spec), optimizer_(optimizer) {
  spec_.validate();
  build(init_seed);
}

ModelState::ModelState(const ModelState& other)
    : epoch(other.epoch),
      spec_(other.spec_),
      optimizer_(other.optimizer_),
      encoder_(std::make_unique<Sequential>(*other.encoder_)),
      projection_(std::make_unique<Sequential>(*other.projection_)),
      classifier_(std::make_unique<Sequential>(*other.classifier_)) {}

ModelState& ModelState::operator=(const ModelState& other) {
  if (this != &other) {
    ModelState copy(other);
    *this = std::move(copy);
  }
  return *this;
}

ModelState::ModelState(ModelState&&) noexcept = default;
ModelState& ModelState::operator=(ModelState&&) noexcept = default;
ModelState::~ModelState() = default;

void ModelState::build(std::uint64_t init_seed) {
  Rng rng = make_rng(init_seed, "model-init");
  encoder_ = std::make_unique<Sequential>();
  const int c = spec_.input_channels;
  const int d = spec_.embedding_dim;
  if (spec_.architecture == "mlp") {
    const int in = spec_.input_height * spec_.input_width * c;
    encoder_->add(std::make_unique<Flatten>());
    encoder_->add(std::make_unique<Linear>("encoder.fc1", in,
                                           spec_.hidden_width,
                                           std::sqrt(2.0 / in), rng));
    encoder_->add(std::make_unique<Relu>());
    encoder_->add(std::make_unique<Linear>(
        "encoder.fc2", spec_.hidden_width, d,
        std::sqrt(1.0 / spec_.hidden_width), rng));
  } else if (spec_.architecture == "resnet-tiny") {
    const int w = spec_.base_width;
    encoder_->add(
        std::make_unique<Conv2d>("encoder.stem", c, w, 3, 2, 1, false, rng));
    encoder_->add(std::make_unique<BatchNorm>("encoder.stem_bn", w));
    encoder_->add(std::make_unique<Relu>());
    encoder_->add(std::make_unique<Residual>("encoder.block1", w, w, 1, rng));
    encoder_->add(
        std::make_unique<Residual>("encoder.block2", w, 2 * w, 2, rng));
    encoder_->add(std::make_unique<GlobalAvgPool>());
    encoder_->add(std::make_unique<Linear>("encoder.embed", 2 * w, d,
                                           std::sqrt(1.0 / (2 * w)), rng));
  } else {
    const int w = spec_.base_width;
    encoder_->add(
        std::make_unique<Conv2d>("encoder.stem", c, w, 3, 1, 1, false, rng));
    encoder_->add(std::make_unique<BatchNorm>("encoder.stem_bn", w));
    encoder_->add(std::make_unique<Relu>());
    int in = w;
    for (int stage = 0; stage < 4; ++stage) {
      const int width = w << stage;
      for (int block = 0; block < 2; ++block) {
        const int stride = (stage > 0 && block == 0) ? 2 : 1;
        encoder_->add(std::make_unique<Residual>(
            "encoder.stage" + std::to_string(stage + 1) + ".block" +
                std::to_string(block + 1),
            in, width, stride, rng));
        in = width;
      }
    }
    encoder_->add(std::make_unique<GlobalAvgPool>());
    encoder_->add(std::make_unique<Linear>("encoder.embed", in, d,
                                           std::sqrt(1.0 / in), rng));
  }

  projection_ = std::make_unique<Sequential>();
  projection_->add(std::make_unique<Linear>("projection.fc1", d, d,
                                            std::sqrt(2.0 / d), rng));
  if (spec_.architecture != "mlp") {
    projection_->add(std::make_unique<BatchNorm>("projection.bn1", d));
  }
  projection_->add(std::make_unique<Relu>());
  projection_->add(std::make_unique<Linear>("projection.fc2", d,
                                            spec_.projection_dim,
                                            std::sqrt(1.0 / d), rng));

  classifier_ = std::make_unique<Sequential>();
  classifier_->add(std::make_unique<Linear>("classifier.fc", d,
                                            spec_.num_classes,
                                            std::sqrt(1.0 / d), rng));
}

void ModelState::reinitialize_classifier(std::uint64_t seed) {
  Rng rng = make_rng(seed, "classifier-init");
  const int d = spec_.embedding_dim;
  classifier_ = std::make_unique<Sequential>();
  classifier_->add(std::make_unique<Linear>("classifier.fc", d,
                                            spec_.num_classes,
                                            std::sqrt(1.0 / d), rng));
}

namespace {

std::vector<const Image*> pointers(std::span<const Image> batch) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(batch.size());
  for (const Image& img : batch) ptrs.push_back(&img);
  return ptrs;
}

}  // namespace

Eigen::MatrixXd ModelState::forward_embed(std::span<const Image> batch) const {
  const auto ptrs = pointers(batch);
  return forward_embed(std::span<const Image* const>(ptrs));
}

Eigen::MatrixXd ModelState::forward_embed(
    std::span<const Image* const> batch) const {
  const Tensor x = images_to_tensor(batch, spec_.input_height,
                                    spec_.input_width, spec_.input_channels);
  return encoder_->infer(x).data.transpose();
}

Eigen::MatrixXd ModelState::forward_project(
    const Eigen::MatrixXd& embeddings) const {
  if (embeddings.cols() != spec_.embedding_dim) {
    throw ContractError("projection expects " +
                        std::to_string(spec_.embedding_dim) +
                        " embedding columns, got " +
                        std::to_string(embeddings.cols()));
  }
  Tensor e;
  e.batch = static_cast<int>(embeddings.rows());
  e.data = embeddings.transpose();
  return l2_normalize_columns(projection_->infer(e).data).transpose();
}

Eigen::MatrixXd ModelState::forward_logits(std::span<const Image> batch) const {
  const auto ptrs = pointers(batch);
  return forward_logits(std::span<const Image* const>(ptrs));
}

Eigen::MatrixXd ModelState::forward_logits(
    std::span<const Image* const> batch) const {
  const Tensor x = images_to_tensor(batch, spec_.input_height,
                                    spec_.input_width, spec_.input_channels);
  return classifier_->infer(encoder_->infer(x)).data.transpose();
}

Eigen::MatrixXd ModelState::classify_embeddings(
    const Eigen::MatrixXd& embeddings) const {
  Tensor e;
  e.batch = static_cast<int>(embeddings.rows());
  e.data = embeddings.transpose();
  return classifier_->infer(e).data.transpose();
}

Eigen::MatrixXd ModelState::train_encode(const Tensor& x) {
  return encoder_->forward(x).data;
}

void ModelState::encode_backward(const Eigen::MatrixXd& grad_embeddings) {
  Tensor g;
  g.batch = static_cast<int>(grad_embeddings.cols());
  g.data = grad_embeddings;
  encoder_->backward(g);
}

Eigen::MatrixXd ModelState::train_project(const Eigen::MatrixXd& embeddings) {
  Tensor e;
  e.batch = static_cast<int>(embeddings.cols());
  e.data = embeddings;
  proj_raw_ = projection_->forward(e).data;
  return l2_normalize_columns(proj_raw_, &proj_norm_);
}

Eigen::MatrixXd ModelState::project_backward(
    const Eigen::MatrixXd& grad_projections) {
  // y = r / |r|  =>  dr = (g - y (y . g)) / |r|
  Tensor g;
  g.batch = static_cast<int>(grad_projections.cols());
  g.data.resize(grad_projections.rows(), grad_projections.cols());
  for (Eigen::Index j = 0; j < grad_projections.cols(); ++j) {
    const Eigen::VectorXd y = proj_raw_.col(j) / proj_norm_(j);
    const double dot = y.dot(grad_projections.col(j));
    g.data.col(j) = (grad_projections.col(j) - y * dot) / proj_norm_(j);
  }
  return projection_->backward(g).data;
}

Eigen::MatrixXd ModelState::train_classify(const Eigen::MatrixXd& embeddings) {
  Tensor e;
  e.batch = static_cast<int>(embeddings.cols());
  e.data = embeddings;
  return classifier_->forward(e).data;
}

Eigen::MatrixXd ModelState::classify_backward(
    const Eigen::MatrixXd& grad_logits) {
  Tensor g;
  g.batch = static_cast<int>(grad_logits.cols());
  g.data = grad_logits;
  return classifier_->backward(g).data;
}

std::vector<Parameter*> ModelState::parameters(ParamGroup group) {
  std::vector<Parameter*> out;
  switch (group) {
    case ParamGroup::kEncoder: encoder_->collect(out); break;
    case ParamGroup::kProjection: projection_->collect(out); break;
    case ParamGroup::kClassifier: classifier_->collect(out); break;
  }
  return out;
}

std::vector<const Parameter*> ModelState::parameters(ParamGroup group) const {
  const auto mutable_params =
      const_cast<ModelState*>(this)->parameters(group);
  return {mutable_params.begin(), mutable_params.end()};
}

std::vector<Parameter*> ModelState::buffers(ParamGroup group) {
  std::vector<Parameter*> out;
  switch (group) {
    case ParamGroup::kEncoder: encoder_->collect_buffers(out); break;
    case ParamGroup::kProjection: projection_->collect_buffers(out); break;
    case ParamGroup::kClassifier: classifier_->collect_buffers(out); break;
  }
  return out;
}

std::vector<const Parameter*> ModelState::buffers(ParamGroup group) const {
  const auto mutable_buffers = const_cast<ModelState*>(this)->buffers(group);
  return {mutable_buffers.begin(), mutable_buffers.end()};
}

std::size_t ModelState::parameter_count() const {
  std::size_t total = 0;
  for (auto g : {ParamGroup::kEncoder, ParamGroup::kProjection,
                 ParamGroup::kClassifier}) {
    for (const Parameter* p : parameters(g)) {
      total += static_cast<std::size_t>(p->value.size());
    }
  }
  return total;
}

void ModelState::zero_grad() {
  for (auto g : {ParamGroup::kEncoder, ParamGroup::kProjection,
                 ParamGroup::kClassifier}) {
    for (Parameter* p : parameters(g)) p->grad.setZero();
  }
}

void ModelState::apply_gradients(std::span<const ParamGroup> groups,
                                 double learning_rate) {
  std::vector<Parameter*> params;
  for (ParamGroup g : groups) {
    auto more = parameters(g);
    params.insert(params.end(), more.begin(), more.end());
  }
  for (const Parameter* p : params) {
    if (!finite(p->grad)) {
      throw NonFiniteError("non-finite gradient in parameter " + p->name +
                           "; update rejected");
    }
  }
  if (!std::isfinite(learning_rate)) {
    throw NonFiniteError("non-finite learning rate; update rejected");
  }
  for (Parameter* p : params) {
    p->velocity = optimizer_.momentum * p->velocity + p->grad +
                  optimizer_.weight_decay * p->value;
    p->value -= learning_rate * p->velocity;
  }
  for (const Parameter* p : params) {
    if (!finite(p->value)) {
      throw NonFiniteError("parameter " + p->name +
                           " became non-finite after an update");
    }
  }
}

void ModelState::reset_velocity(ParamGroup group) {
  for (Parameter* p : parameters(group)) p->velocity.setZero();
}

bool ModelState::all_finite() const {
  for (auto g : {ParamGroup::kEncoder, ParamGroup::kProjection,
                 ParamGroup::kClassifier}) {
    for (const Parameter* p : parameters(g)) {
      if (!finite(p->value)) return false;
    }
    for (const Parameter* b : buffers(g)) {
      if (!finite(b->value)) return false;
    }
  }
  return true;
}

void ModelState::serialize(std::ostream& out) const {
  out.write(kModelMagic, sizeof(kModelMagic));
  write_u32(out, kModelVersion);
  write_string(out, spec_.architecture);
  for (int v : {spec_.input_height, spec_.input_width, spec_.input_channels,
                spec_.embedding_dim, spec_.projection_dim, spec_.num_classes,
                spec_.base_width, spec_.hidden_width}) {
    write_i64(out, v);
  }
  write_f64(out, optimizer_.momentum);
  write_f64(out, optimizer_.weight_decay);
  write_i64(out, epoch);
  for (auto g : {ParamGroup::kEncoder, ParamGroup::kProjection,
                 ParamGroup::kClassifier}) {
    const auto params = parameters(g);
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
      write_string(out, p->name);
      write_matrix(out, p->value);
      write_matrix(out, p->velocity);
    }
    const auto bufs = buffers(g);
    write_u32(out, static_cast<std::uint32_t>(bufs.size()));
    for (const Parameter* b : bufs) {
      write_string(out, b->name);
      write_matrix(out, b->value);
    }
  }
}

ModelState ModelState::deserialize(std::istream& in,
                                   const EncoderSpec* expected) {
  char magic[sizeof(kModelMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
    throw VersioningError("not a model blob (bad magic)");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kModelVersion) {
    throw VersioningError("model blob version " + std::to_string(version) +
                          " is not supported (expected " +
                          std::to_string(kModelVersion) + ")");
  }
  EncoderSpec spec;
  spec.architecture = read_string(in);
  for (int* v : {&spec.input_height, &spec.input_width, &spec.input_channels,
                 &spec.embedding_dim, &spec.projection_dim, &spec.num_classes,
                 &spec.base_width, &spec.hidden_width}) {
    *v = static_cast<int>(read_pod<std::int64_t>(in));
  }
  if (expected != nullptr && !(spec == *expected)) {
    throw VersioningError(
        "checkpoint architecture (" + spec.architecture + ", D=" +
        std::to_string(spec.embedding_dim) + ", K=" +
        std::to_string(spec.num_classes) + ", input " +
        std::to_string(spec.input_height) + "x" +
        std::to_string(spec.input_width) + "x" +
        std::to_string(spec.input_channels) +
        ") does not match the configured model");
  }
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw VersioningError(std::string("checkpoint architecture invalid: ") +
                          e.what());
  }
  SgdConfig opt;
  opt.momentum = read_pod<double>(in);
  opt.weight_decay = read_pod<double>(in);
  ModelState state(spec, 0, opt);
  state.epoch = static_cast<int>(read_pod<std::int64_t>(in));
  for (auto g : {ParamGroup::kEncoder, ParamGroup::kProjection,
                 ParamGroup::kClassifier}) {
    auto params = state.parameters(g);
    const auto count = read_pod<std::uint32_t>(in);
    if (count != params.size()) {
      throw VersioningError("checkpoint parameter layout does not match");
    }
    for (Parameter* p : params) {
      const std::string name = read_string(in);
      Eigen::MatrixXd value = read_matrix(in);
      Eigen::MatrixXd velocity = read_matrix(in);
      if (name != p->name || value.rows() != p->value.rows() ||
          value.cols() != p->value.cols() ||
          velocity.rows() != value.rows() || velocity.cols() != value.cols()) {
        throw VersioningError("checkpoint parameter " + name +
                              " does not match the model layout");
      }
      p->value = std::move(value);
      p->velocity = std::move(velocity);
      p->grad.setZero();
    }
    auto bufs = state.buffers(g);
    if (read_pod<std::uint32_t>(in) != bufs.size()) {
      throw VersioningError("checkpoint buffer layout does not match");
    }
    for (Parameter* b : bufs) {
      const std::string name = read_string(in);
      Eigen::MatrixXd value = read_matrix(in);
      if (name != b->name || value.rows() != b->value.rows() ||
          value.cols() != b->value.cols()) {
        throw VersioningError("checkpoint buffer " + name +
                              " does not match the model layout");
      }
      b->value = std::move(value);
    }
  }
  return state;
}

}  // namespace stagerefine
