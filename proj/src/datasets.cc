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

#include "stagerefine/datasets.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include <Eigen/Dense>

#include "stagerefine/errors.h"
#include "stagerefine/rng.h"

namespace stagerefine {

namespace fs = std::filesystem;

LabeledImageDataset::LabeledImageDataset(std::string name,
                                         std::vector<Image> images,
                                         std::vector<int> clean_labels,
                                         int num_classes,
                                         std::vector<std::int64_t> sample_ids)
    : name_(std::move(name)),
      images_(std::move(images)),
      clean_labels_(std::move(clean_labels)),
      sample_ids_(std::move(sample_ids)),
      num_classes_(num_classes) {
  if (sample_ids_.empty()) {
    sample_ids_.resize(images_.size());
    for (std::size_t i = 0; i < sample_ids_.size(); ++i) {
      sample_ids_[i] = static_cast<std::int64_t>(i);
    }
  }
  noisy_labels_ = clean_labels_;
  working_labels_ = clean_labels_;
  check_integrity();
}

void LabeledImageDataset::set_noisy_labels(std::vector<int> labels) {
  if (labels.size() != images_.size()) {
    throw IntegrityError("noisy label track has " +
                         std::to_string(labels.size()) + " entries, expected " +
                         std::to_string(images_.size()));
  }
  noisy_labels_ = std::move(labels);
  working_labels_ = noisy_labels_;
  check_integrity();
}

void LabeledImageDataset::check_integrity() const {
  const std::size_t n = images_.size();
  if (num_classes_ < 1) throw IntegrityError("num_classes must be positive");
  auto check_track = [&](const std::vector<int>& track, const char* what) {
    if (track.size() != n) {
      throw IntegrityError(std::string(what) + " track length " +
                           std::to_string(track.size()) + " != " +
                           std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (track[i] < 0 || track[i] >= num_classes_) {
        throw IntegrityError(std::string(what) + " label " +
                             std::to_string(track[i]) + " at index " +
                             std::to_string(i) + " outside [0, " +
                             std::to_string(num_classes_) + ")");
      }
    }
  };
  check_track(clean_labels_, "clean");
  check_track(noisy_labels_, "noisy");
  check_track(working_labels_, "working");
  if (sample_ids_.size() != n) {
    throw IntegrityError("sample id count does not match image count");
  }
  std::unordered_set<std::int64_t> seen(sample_ids_.begin(),
                                        sample_ids_.end());
  if (seen.size() != n) throw IntegrityError("sample ids are not unique");
  for (const Image& img : images_) {
    if (!img.same_shape(images_[0]) ||
        img.pixels.size() != static_cast<std::size_t>(img.height) *
                                 img.width * img.channels) {
      throw IntegrityError("dataset images do not share one shape");
    }
  }
}

// ---------------------------------------------------------------------------
// blobs

LabeledImageDataset make_blobs(const BlobsOptions& options, Split split) {
  if (options.num_classes < 2) {
    throw ConfigError("blobs.num_classes must be at least 2");
  }
  if (options.image_size < 4) {
    throw ConfigError("blobs.image_size must be at least 4");
  }
  const int n = split == Split::kTrain ? options.num_samples
                                       : options.num_test_samples;
  if (n < 1) throw ConfigError("blobs sample count must be positive");

  const int k = options.num_classes;
  const int s = options.image_size;
  constexpr int kChannels = 3;
  Rng rng = make_rng(options.seed, split == Split::kTrain ? "blobs-train"
                                                          : "blobs-test");
  std::vector<Image> images;
  std::vector<int> labels;
  images.reserve(n);
  labels.reserve(n);
  const double jitter = options.orientation_jitter_deg * std::numbers::pi /
                        180.0;
  for (int i = 0; i < n; ++i) {
    const int label = static_cast<int>(uniform_index(rng, k));
    // A plaid of two gratings at +angle and -angle. Mirroring the image maps
    // the pair onto itself, so flips never change the class.
    const double angle = 0.5 * std::numbers::pi * (label + 0.5) / k +
                         jitter * standard_normal(rng);
    // About two cycles across the frame.
    const double freq = uniform(rng, 1.8, 2.4);
    const double phase_a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double phase_b = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double contrast =
        options.pattern_amplitude * uniform(rng, 0.7, 1.0);
    double base[kChannels];
    double weight[kChannels];
    for (int c = 0; c < kChannels; ++c) {
      base[c] = 0.5 + options.tint_spread * uniform(rng, -1.0, 1.0);
      weight[c] = uniform(rng, 0.8, 1.0);
    }
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    const double w = 2.0 * std::numbers::pi * freq / s;
    Image img(s, s, kChannels);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double wave = 0.5 * (std::sin(w * (ca * x + sa * y) + phase_a) +
                                   std::sin(w * (ca * x - sa * y) + phase_b));
        for (int c = 0; c < kChannels; ++c) {
          double v = base[c] + contrast * weight[c] * wave +
                     options.pixel_noise * standard_normal(rng);
          v = std::clamp(v, 0.0, 1.0);
          img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
    images.push_back(std::move(img));
    labels.push_back(label);
  }
  return LabeledImageDataset(
      split == Split::kTrain ? "blobs-train" : "blobs-test", std::move(images),
      std::move(labels), k);
}

// ---------------------------------------------------------------------------
// CIFAR binary reader

namespace {

constexpr int kCifarSide = 32;
constexpr int kCifarPixels = kCifarSide * kCifarSide * 3;

fs::path locate_dir(const fs::path& root, const std::string& subdir,
                    const std::string& probe) {
  if (fs::exists(root / probe)) return root;
  if (fs::exists(root / subdir / probe)) return root / subdir;
  return root;
}

// Appends every record of one file. label_bytes is 1 for CIFAR-10 and 2
// (coarse, fine) for CIFAR-100; the last label byte is used.
void read_cifar_file(const fs::path& file, int label_bytes, int num_classes,
                     std::vector<Image>& images, std::vector<int>& labels) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("cannot open dataset file " + file.string());
  const std::size_t record = static_cast<std::size_t>(label_bytes) +
                             kCifarPixels;
  std::error_code ec;
  const auto bytes = fs::file_size(file, ec);
  if (ec || bytes == 0 || bytes % record != 0) {
    throw IngestionError("dataset file " + file.string() +
                         " is truncated or corrupt (size " +
                         std::to_string(ec ? 0 : bytes) +
                         " is not a multiple of " + std::to_string(record) +
                         ")");
  }
  std::vector<std::uint8_t> buf(record);
  const std::size_t count = bytes / record;
  for (std::size_t r = 0; r < count; ++r) {
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(record))) {
      throw IngestionError("short read in dataset file " + file.string());
    }
    const int label = buf[label_bytes - 1];
    if (label >= num_classes) {
      throw IngestionError("dataset file " + file.string() + " record " +
                           std::to_string(r) + " has label " +
                           std::to_string(label) + " >= " +
                           std::to_string(num_classes));
    }
    // Planar R, G, B -> interleaved.
    Image img(kCifarSide, kCifarSide, 3);
    const std::uint8_t* planes = buf.data() + label_bytes;
    for (int c = 0; c < 3; ++c) {
      for (int p = 0; p < kCifarSide * kCifarSide; ++p) {
        img.pixels[static_cast<std::size_t>(p) * 3 + c] =
            planes[c * kCifarSide * kCifarSide + p];
      }
    }
    images.push_back(std::move(img));
    labels.push_back(label);
  }
}

}  // namespace

LabeledImageDataset load_dataset(const fs::path& path,
                                 const std::string& variant, Split split,
                                 const BlobsOptions& blobs) {
  if (variant == "blobs") return make_blobs(blobs, split);

  std::vector<fs::path> files;
  int label_bytes = 1;
  int num_classes = 10;
  if (variant == "cifar10") {
    const fs::path dir =
        locate_dir(path, "cifar-10-batches-bin", "test_batch.bin");
    if (split == Split::kTrain) {
      for (int b = 1; b <= 5; ++b) {
        files.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
      }
    } else {
      files.push_back(dir / "test_batch.bin");
    }
  } else if (variant == "cifar100") {
    const fs::path dir = locate_dir(path, "cifar-100-binary", "test.bin");
    files.push_back(dir / (split == Split::kTrain ? "train.bin" : "test.bin"));
    label_bytes = 2;
    num_classes = 100;
  } else {
    throw ConfigError("unknown dataset variant '" + variant +
                      "' (expected cifar10, cifar100 or blobs)");
  }

  std::vector<Image> images;
  std::vector<int> labels;
  for (const fs::path& f : files) {
    if (!fs::exists(f)) {
      throw IngestionError("missing dataset file " + f.string());
    }
    read_cifar_file(f, label_bytes, num_classes, images, labels);
  }
  const std::string name =
      variant + (split == Split::kTrain ? "-train" : "-test");
  return LabeledImageDataset(name, std::move(images), std::move(labels),
                             num_classes);
}

// ---------------------------------------------------------------------------
// Instance-dependent noise

double FlipLedger::flip_fraction() const {
  if (flipped.empty()) return 0.0;
  std::int64_t count = 0;
  for (auto f : flipped) count += f ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(flipped.size());
}

std::pair<LabeledImageDataset, FlipLedger> inject_idn(
    LabeledImageDataset dataset, const IdnSpec& spec) {
  const int k = dataset.num_classes();
  if (!(spec.target_rate >= 0.0 && spec.target_rate < 1.0)) {
    throw ConfigError("idn.target_rate must lie in [0, 1), got " +
                      std::to_string(spec.target_rate));
  }
  if (k < 2) throw ConfigError("noise injection needs at least two classes");
  if (spec.target_rate >= 1.0 - 1.0 / k) {
    throw ConfigError("idn.target_rate " + std::to_string(spec.target_rate) +
                      " must be below 1 - 1/K = " +
                      std::to_string(1.0 - 1.0 / k));
  }
  if (!(spec.rate_spread >= 0.0)) {
    throw ConfigError("idn.rate_spread must be non-negative");
  }
  if (spec.feature_projection_dim < 1) {
    throw ConfigError("idn.feature_projection_dim must be positive");
  }

  const OracleKey key;
  const std::vector<int>& clean = dataset.clean_labels(key);
  const std::size_t n = dataset.size();
  const int dim = spec.feature_projection_dim;

  FlipLedger ledger;
  ledger.sample_ids = dataset.sample_ids();
  ledger.original_label = clean;
  ledger.corrupted_label = clean;
  ledger.flipped.assign(n, 0);
  ledger.per_sample_flip_rate.assign(n, 0.0);
  if (n == 0) return {std::move(dataset), std::move(ledger)};

  // Shared random projection of flattened pixels, then one d x K scoring
  // matrix per clean class.
  const int p = dataset.height() * dataset.width() * dataset.channels();
  Rng proj_rng = make_rng(spec.seed, "idn-projection");
  Eigen::MatrixXd projection(p, dim);
  for (Eigen::Index j = 0; j < projection.cols(); ++j) {
    for (Eigen::Index i = 0; i < projection.rows(); ++i) {
      projection(i, j) = standard_normal(proj_rng);
    }
  }
  projection /= std::sqrt(static_cast<double>(p));
  std::vector<Eigen::MatrixXd> class_weights;
  for (int c = 0; c < k; ++c) {
    Rng crng = make_rng(spec.seed, "idn-class", static_cast<std::uint64_t>(c));
    Eigen::MatrixXd w(dim, k);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        w(i, j) = standard_normal(crng);
      }
    }
    class_weights.push_back(std::move(w));
  }

  std::vector<int> target(n);
  std::vector<double> base_rate(n);
  std::vector<double> draw(n);
  constexpr std::size_t kChunk = 1024;
  Eigen::MatrixXd features;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t rows = std::min(kChunk, n - start);
    features.resize(static_cast<Eigen::Index>(rows), p);
    for (std::size_t r = 0; r < rows; ++r) {
      const Image& img = dataset.image(start + r);
      for (int j = 0; j < p; ++j) {
        features(static_cast<Eigen::Index>(r), j) =
            img.pixels[j] / 255.0 - 0.5;
      }
    }
    const Eigen::MatrixXd z = features * projection;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = start + r;
      const int y = clean[i];
      const Eigen::RowVectorXd scores =
          z.row(static_cast<Eigen::Index>(r)) * class_weights[y];
      int best = -1;
      for (int c = 0; c < k; ++c) {
        if (c == y) continue;
        if (best < 0 || scores(c) > scores(best)) best = c;
      }
      target[i] = best;

      // Flip rate and flip draw are keyed on the image bytes, so identical
      // images always receive identical decisions.
      Rng srng(hash_bytes(dataset.image(i).pixels, spec.seed));
      double q = spec.target_rate;
      for (int attempt = 0; attempt < 64; ++attempt) {
        q = spec.target_rate + spec.rate_spread * standard_normal(srng);
        if (q >= 0.0 && q <= 1.0) break;
      }
      base_rate[i] = std::clamp(q, 0.0, 1.0);
      draw[i] = uniform01(srng);
    }
  }

  // Realized-rate calibration: pick a global scale c so that exactly
  // round(target * N) samples satisfy draw < c * rate (ties between
  // byte-identical images can only move together).
  const auto wanted =
      static_cast<std::size_t>(std::llround(spec.target_rate * n));
  double scale = 0.0;
  if (wanted > 0) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> thresholds(n);
    for (std::size_t i = 0; i < n; ++i) {
      thresholds[i] = base_rate[i] > 0.0 ? draw[i] / base_rate[i] : kInf;
    }
    std::sort(thresholds.begin(), thresholds.end());
    const double lo = thresholds[wanted - 1];
    const double hi = wanted < n ? thresholds[wanted] : kInf;
    if (std::isinf(lo)) {
      scale = std::numeric_limits<double>::max();
    } else if (std::isinf(hi)) {
      scale = lo * 2.0 + 1.0;
    } else if (hi > lo) {
      scale = 0.5 * (lo + hi);
    } else {
      scale = std::nextafter(lo, kInf);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double rate = std::min(1.0, scale * base_rate[i]);
    ledger.per_sample_flip_rate[i] = rate;
    if (draw[i] < rate) {
      ledger.flipped[i] = 1;
      ledger.corrupted_label[i] = target[i];
    }
  }
  dataset.set_noisy_labels(ledger.corrupted_label);
  return {std::move(dataset), std::move(ledger)};
}

NoiseReport noise_statistics(const LabeledImageDataset& dataset,
                             const FlipLedger& ledger) {
  const std::size_t n = dataset.size();
  if (ledger.flipped.size() != n || ledger.original_label.size() != n ||
      ledger.corrupted_label.size() != n) {
    throw IntegrityError("flip ledger has " +
                         std::to_string(ledger.flipped.size()) +
                         " entries but the dataset has " + std::to_string(n));
  }
  const int k = dataset.num_classes();
  const OracleKey key;
  const std::vector<int>& clean = dataset.clean_labels(key);
  const std::vector<int>& noisy = dataset.noisy_labels();

  NoiseReport report;
  report.class_counts.assign(k, 0);
  report.per_class_flip_rate.assign(k, 0.0);
  report.confusion.assign(k, std::vector<std::int64_t>(k, 0));
  std::vector<std::int64_t> class_flips(k, 0);
  std::int64_t flips = 0;
  for (std::size_t i = 0; i < n; ++i) {
    report.class_counts[clean[i]] += 1;
    report.confusion[clean[i]][noisy[i]] += 1;
    if (ledger.flipped[i]) {
      ++flips;
      class_flips[clean[i]] += 1;
    }
  }
  report.overall_rate = n == 0 ? 0.0 : static_cast<double>(flips) / n;
  for (int c = 0; c < k; ++c) {
    if (report.class_counts[c] > 0) {
      report.per_class_flip_rate[c] =
          static_cast<double>(class_flips[c]) / report.class_counts[c];
    }
  }
  return report;
}

void write_ledger(const FlipLedger& ledger, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ledger file " + path.string());
  out << "sample_id\tclean\tnoisy\tflip_rate\n";
  char rate[64];
  for (std::size_t i = 0; i < ledger.size(); ++i) {
    std::snprintf(rate, sizeof(rate), "%.17g", ledger.per_sample_flip_rate[i]);
    out << ledger.sample_ids[i] << '\t' << ledger.original_label[i] << '\t'
        << ledger.corrupted_label[i] << '\t' << rate << '\n';
  }
  if (!out) throw IoError("failed while writing ledger file " + path.string());
}

FlipLedger read_ledger(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open ledger file " + path.string());
  std::string line;
  if (!std::getline(in, line) ||
      line != "sample_id\tclean\tnoisy\tflip_rate") {
    throw IngestionError("ledger file " + path.string() +
                         " has an unexpected header");
  }
  FlipLedger ledger;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::int64_t id;
    int clean, noisy;
    std::string rate_text;
    if (!(fields >> id >> clean >> noisy >> rate_text)) {
      throw IngestionError("ledger file " + path.string() +
                           " is malformed at line " + std::to_string(row));
    }
    ledger.sample_ids.push_back(id);
    ledger.original_label.push_back(clean);
    ledger.corrupted_label.push_back(noisy);
    ledger.flipped.push_back(clean != noisy ? 1 : 0);
    ledger.per_sample_flip_rate.push_back(std::stod(rate_text));
  }
  return ledger;
}

void apply_ledger(LabeledImageDataset& dataset, const FlipLedger& ledger) {
  const std::size_t n = dataset.size();
  if (ledger.size() != n || ledger.sample_ids.size() != n) {
    throw IntegrityError("ledger lists " + std::to_string(ledger.size()) +
                         " samples, dataset has " + std::to_string(n));
  }
  const OracleKey key;
  const std::vector<int>& clean = dataset.clean_labels(key);
  for (std::size_t i = 0; i < n; ++i) {
    if (ledger.sample_ids[i] != dataset.sample_ids()[i] ||
        ledger.original_label[i] != clean[i]) {
      throw IntegrityError("ledger row " + std::to_string(i) +
                           " does not describe this dataset");
    }
  }
  dataset.set_noisy_labels(ledger.corrupted_label);
}

}  // namespace stagerefine
