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

// Image-classification datasets with three label tracks, the CIFAR binary
// reader, the synthetic "blobs" generator and the instance-dependent noise
// (IDN) injector.

#ifndef STAGEREFINE_DATASETS_H_
#define STAGEREFINE_DATASETS_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "stagerefine/image.h"

namespace stagerefine {

class LabeledImageDataset;
struct IdnSpec;
struct FlipLedger;
struct NoiseReport;
class LabelOracle;

std::pair<LabeledImageDataset, FlipLedger> inject_idn(
    LabeledImageDataset dataset, const IdnSpec& spec);
NoiseReport noise_statistics(const LabeledImageDataset& dataset,
                             const FlipLedger& ledger);
void apply_ledger(LabeledImageDataset& dataset, const FlipLedger& ledger);

// Passkey for reading ground-truth labels. Only the noise injector, the
// noise statistics and LabelOracle (eval.h) can mint one, so training code
// cannot reach clean labels.
class OracleKey {
 private:
  OracleKey() = default;
  friend class LabelOracle;
  friend std::pair<LabeledImageDataset, FlipLedger> inject_idn(
      LabeledImageDataset, const IdnSpec&);
  friend NoiseReport noise_statistics(const LabeledImageDataset&,
                                      const FlipLedger&);
  friend void apply_ledger(LabeledImageDataset&, const FlipLedger&);
};

class LabeledImageDataset {
 public:
  LabeledImageDataset() = default;

  // noisy and working labels start equal to the clean labels. Sample ids
  // default to 0..N-1. Throws IntegrityError on length mismatch, label out
  // of range, mixed image shapes or duplicate ids.
  LabeledImageDataset(std::string name, std::vector<Image> images,
                      std::vector<int> clean_labels, int num_classes,
                      std::vector<std::int64_t> sample_ids = {});

  const std::string& name() const { return name_; }
  std::size_t size() const { return images_.size(); }
  int num_classes() const { return num_classes_; }
  int height() const { return images_.empty() ? 0 : images_[0].height; }
  int width() const { return images_.empty() ? 0 : images_[0].width; }
  int channels() const { return images_.empty() ? 0 : images_[0].channels; }

  const std::vector<Image>& images() const { return images_; }
  const Image& image(std::size_t i) const { return images_[i]; }
  const std::vector<std::int64_t>& sample_ids() const { return sample_ids_; }
  const std::vector<int>& noisy_labels() const { return noisy_labels_; }
  const std::vector<int>& working_labels() const { return working_labels_; }

  // Only the refinery writes through this.
  std::vector<int>& mutable_working_labels() { return working_labels_; }

  // Replaces the noisy track and resets the working track to it.
  void set_noisy_labels(std::vector<int> labels);

  const std::vector<int>& clean_labels(OracleKey) const {
    return clean_labels_;
  }

  // Throws IntegrityError if any track is malformed.
  void check_integrity() const;

 private:
  std::string name_;
  std::vector<Image> images_;
  std::vector<int> clean_labels_;
  std::vector<int> noisy_labels_;
  std::vector<int> working_labels_;
  std::vector<std::int64_t> sample_ids_;
  int num_classes_ = 0;
};

enum class Split { kTrain, kTest };

// Synthetic dataset for desk-scale runs. Each sample is a plaid of two
// low-frequency gratings at +a and -a, where a is spread evenly over
// (0, 90) degrees by class; every sample also draws a random frequency,
// phases, contrast, color tint and additive pixel noise, so class identity
// lives only in the spatial pattern and survives mirroring.
struct BlobsOptions {
  int num_samples = 3000;
  int num_test_samples = 1000;
  int num_classes = 3;
  int image_size = 12;
  double pattern_amplitude = 0.35;
  double pixel_noise = 0.08;
  // Standard deviation of the per-sample plaid angle around the class angle,
  // in degrees. Controls class overlap.
  double orientation_jitter_deg = 6.0;
  // Half-width of the per-channel background level around mid-gray.
  double tint_spread = 0.03;
  std::uint64_t seed = 20240601;
};

LabeledImageDataset make_blobs(const BlobsOptions& options, Split split);

// Variants: "cifar10", "cifar100", "blobs". For CIFAR, `path` is the directory
// holding the official binary files (or its parent). Throws IngestionError
// naming the offending file, ConfigError for unknown variants.
LabeledImageDataset load_dataset(const std::filesystem::path& path,
                                 const std::string& variant,
                                 Split split = Split::kTrain,
                                 const BlobsOptions& blobs = {});

// Parameters of the synthetic instance-dependent noise process.
struct IdnSpec {
  double target_rate = 0.0;
  std::uint64_t seed = 0;
  double rate_spread = 0.1;
  int feature_projection_dim = 32;
};

// Exact record of the injected noise; flipped[i] iff
// corrupted_label[i] != original_label[i].
struct FlipLedger {
  std::vector<std::int64_t> sample_ids;
  std::vector<std::uint8_t> flipped;
  std::vector<int> original_label;
  std::vector<int> corrupted_label;
  std::vector<double> per_sample_flip_rate;

  std::size_t size() const { return flipped.size(); }
  double flip_fraction() const;
};

struct NoiseReport {
  double overall_rate = 0.0;
  std::vector<std::int64_t> class_counts;
  std::vector<double> per_class_flip_rate;
  // confusion[clean][noisy]
  std::vector<std::vector<std::int64_t>> confusion;
};

// Columnar audit file: header then one "sample_id clean noisy flip_rate" row
// per sample, tab separated.
void write_ledger(const FlipLedger& ledger, const std::filesystem::path& path);
FlipLedger read_ledger(const std::filesystem::path& path);

// Installs a prepared ledger's corrupted labels as the noisy track. The
// ledger must list the dataset's sample ids in order and agree with its
// clean labels.
void apply_ledger(LabeledImageDataset& dataset, const FlipLedger& ledger);

}  // namespace stagerefine

#endif  // STAGEREFINE_DATASETS_H_
