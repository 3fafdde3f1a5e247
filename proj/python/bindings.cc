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


// Python bindings: loss functions, data generation, noise injection,
// consensus selection and a config-driven pipeline entry point.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "stagerefine/config.h"
#include "stagerefine/datasets.h"
#include "stagerefine/errors.h"
#include "stagerefine/eval.h"
#include "stagerefine/pipeline.h"
#include "stagerefine/pretrain.h"
#include "stagerefine/refinery.h"
#include "stagerefine/rng.h"
#include "stagerefine/trainer.h"

namespace py = pybind11;

namespace stagerefine {
namespace {

using ImageArray = py::array_t<std::uint8_t, py::array::c_style>;

ImageArray to_array(const std::vector<Image>& images) {
  if (images.empty()) return ImageArray(std::vector<py::ssize_t>{0, 0, 0, 0});
  const Image& first = images.front();
  ImageArray out({static_cast<py::ssize_t>(images.size()),
                  static_cast<py::ssize_t>(first.height),
                  static_cast<py::ssize_t>(first.width),
                  static_cast<py::ssize_t>(first.channels)});
  std::uint8_t* dst = out.mutable_data();
  for (const Image& img : images) {
    std::memcpy(dst, img.pixels.data(), img.pixels.size());
    dst += img.pixels.size();
  }
  return out;
}

std::vector<Image> from_array(const ImageArray& array) {
  if (array.ndim() != 4) {
    throw ContractError("images must have shape (N, H, W, C)");
  }
  const auto n = array.shape(0);
  const int h = static_cast<int>(array.shape(1));
  const int w = static_cast<int>(array.shape(2));
  const int c = static_cast<int>(array.shape(3));
  std::vector<Image> images;
  images.reserve(static_cast<std::size_t>(n));
  const std::uint8_t* src = array.data();
  for (py::ssize_t i = 0; i < n; ++i) {
    Image img(h, w, c);
    std::memcpy(img.pixels.data(), src, img.pixels.size());
    src += img.pixels.size();
    images.push_back(std::move(img));
  }
  return images;
}

py::dict dataset_dict(const LabeledImageDataset& d) {
  py::dict out;
  out["images"] = to_array(d.images());
  out["labels"] = d.noisy_labels();
  out["clean_labels"] = LabelOracle::clean_labels(d);
  out["num_classes"] = d.num_classes();
  return out;
}

py::dict quality_dict(const QualityRow& r) {
  py::dict out;
  out["iteration"] = r.iteration;
  out["working_label_accuracy"] = r.working_label_accuracy;
  out["base_clean_fraction"] = r.base_clean_fraction;
  out["consensus_size"] = r.consensus_size;
  out["consensus_clean_fraction"] = r.consensus_clean_fraction;
  out["pseudo_label_precision"] = r.pseudo_label_precision;
  out["labels_changed"] = r.labels_changed;
  return out;
}

}  // namespace
}  // namespace stagerefine

PYBIND11_MODULE(_core, m) {
  using namespace stagerefine;
  m.doc() = "Stage-scheduled pseudo-label refinement for noisy labels";

  // Translators run newest first, so the base class is registered first.
  const auto& base =
      py::register_exception<Error>(m, "StageRefineError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<IngestionError>(m, "IngestionError", base);
  py::register_exception<IntegrityError>(m, "IntegrityError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<VersioningError>(m, "VersioningError", base);
  py::register_exception<PhaseError>(m, "PhaseError", base);

  m.def(
      "derive_seed",
      [](std::uint64_t master, const std::string& tag,
         std::optional<std::uint64_t> index) {
        return index ? derive_seed(master, tag, *index)
                     : derive_seed(master, tag);
      },
      py::arg("master"), py::arg("tag"), py::arg("index") = py::none());

  m.def(
      "nt_xent_loss",
      [](const Eigen::MatrixXd& projections, double temperature) {
        const NtXentResult r = nt_xent_loss(projections, temperature);
        return py::make_tuple(r.loss, r.gradient);
      },
      py::arg("projections"), py::arg("temperature"),
      "Returns (loss, gradient) for unit-norm rows where 2i and 2i+1 are "
      "views of one image.");

  m.def(
      "cross_entropy",
      [](const Eigen::VectorXd& logits, int label) {
        return cross_entropy(logits, label);
      },
      py::arg("logits"), py::arg("label"));

  m.def(
      "make_blobs",
      [](int num_samples, int num_classes, int image_size, std::uint64_t seed,
         bool test_split) {
        BlobsOptions o;
        o.num_samples = num_samples;
        o.num_test_samples = num_samples;
        o.num_classes = num_classes;
        o.image_size = image_size;
        o.seed = seed;
        return dataset_dict(
            make_blobs(o, test_split ? Split::kTest : Split::kTrain));
      },
      py::arg("num_samples") = 3000, py::arg("num_classes") = 3,
      py::arg("image_size") = 12, py::arg("seed") = 20240601,
      py::arg("test_split") = false,
      "Synthetic plaid images as a dict with images (N, H, W, C), labels and "
      "clean_labels.");

  m.def(
      "inject_idn",
      [](const ImageArray& images, std::vector<int> labels, int num_classes,
         double rate, std::uint64_t seed) {
        LabeledImageDataset d("array", from_array(images), std::move(labels),
                              num_classes);
        IdnSpec spec;
        spec.target_rate = rate;
        spec.seed = seed;
        auto [noisy, ledger] = inject_idn(std::move(d), spec);
        py::dict out;
        out["labels"] = noisy.noisy_labels();
        out["flipped"] = std::vector<bool>(ledger.flipped.begin(),
                                           ledger.flipped.end());
        out["per_sample_flip_rate"] = ledger.per_sample_flip_rate;
        out["realized_rate"] = ledger.flip_fraction();
        return out;
      },
      py::arg("images"), py::arg("labels"), py::arg("num_classes"),
      py::arg("rate"), py::arg("seed"),
      "Instance-dependent label noise calibrated to the target rate.");

  m.def(
      "consensus",
      [](const std::vector<std::vector<double>>& stage_losses,
         const std::vector<int>& stage_epochs, double threshold) {
        if (stage_losses.size() != stage_epochs.size() ||
            stage_epochs.empty()) {
          throw ContractError("one loss vector per stage epoch is required");
        }
        SelectionLedger ledger;
        for (std::size_t s = 0; s < stage_losses.size(); ++s) {
          record_stage(ledger, 1, stage_epochs[s], stage_losses[s], threshold);
        }
        return consensus(ledger, 1, {stage_epochs.back(), stage_epochs});
      },
      py::arg("stage_losses"), py::arg("stage_epochs"), py::arg("threshold"),
      "Indices whose loss is below the threshold at every stage.");

  m.def(
      "default_config",
      [] { return to_json(RunConfig{}); },
      "Canonical JSON of the default (toy) run configuration.");

  m.def(
      "run",
      [](const std::string& config_json) {
        const RunConfig config = parse_run_config(config_json);
        PreparedData data;
        std::optional<PipelineResult> result;
        {
          py::gil_scoped_release release;
          data = prepare_data(config);
          result.emplace(run_pipeline(config.pipeline, data.train, &data.test));
        }
        py::list quality;
        for (const QualityRow& r : label_quality(result->refinement, data.train)) {
          quality.append(quality_dict(r));
        }
        py::dict out;
        out["warmup_test_accuracy"] = result->warmup_test_accuracy;
        out["final_test_accuracy"] = result->final_test_accuracy;
        out["working_labels"] = data.train.working_labels();
        out["quality"] = quality;
        return out;
      },
      py::arg("config_json") = "{}",
      "Prepares the configured data and runs the full pipeline in memory.");
}
