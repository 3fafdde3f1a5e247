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

#ifndef STAGEREFINE_AUGMENT_H_
#define STAGEREFINE_AUGMENT_H_

#include <array>
#include <utility>

#include "stagerefine/image.h"
#include "stagerefine/rng.h"

namespace stagerefine {

// Strong augmentation used for contrastive views and for re-injected
// pseudo-labeled copies. Transforms run in this order: random resized crop,
// color jitter (with probability jitter_apply_prob, sub-transforms in random
// order), Gaussian blur, random grayscale.
struct AugmentationPolicy {
  std::pair<double, double> crop_scale_range{0.2, 1.0};
  std::pair<double, double> crop_ratio_range{3.0 / 4.0, 4.0 / 3.0};
  // brightness, contrast, saturation, hue
  std::array<double, 4> jitter_strengths{0.4, 0.4, 0.4, 0.1};
  double jitter_apply_prob = 0.8;
  std::pair<double, double> blur_sigma_range{0.1, 2.0};
  double blur_apply_prob = 0.5;
  double grayscale_prob = 0.2;
  // {0, 0} keeps the input size.
  std::array<int, 2> output_size{0, 0};

  // Full-frame crop, no jitter, blur or grayscale.
  static AugmentationPolicy identity();

  // Throws ConfigError on out-of-range fields.
  void validate() const;

  bool operator==(const AugmentationPolicy&) const = default;
};

// Deterministic given (image, policy, rng state). Throws AugmentationError on
// an empty image or a zero-area crop/output window.
Image apply_policy(const Image& image, const AugmentationPolicy& policy,
                   Rng& rng);

// Two independent draws of apply_policy on the same input.
std::pair<Image, Image> make_view_pair(const Image& image,
                                       const AugmentationPolicy& policy,
                                       Rng& rng);

// Light augmentation for supervised epochs: zero-padded random crop back to
// the input size plus horizontal flip.
struct LightAugmentation {
  int padding = 2;
  bool horizontal_flip = true;

  bool operator==(const LightAugmentation&) const = default;
};

Image apply_light(const Image& image, const LightAugmentation& light,
                  Rng& rng);

// Building blocks, exposed for tests.
FloatImage resize_bilinear(const FloatImage& image, int out_h, int out_w);
FloatImage gaussian_blur(const FloatImage& image, double sigma);
void to_grayscale(FloatImage& image);

}  // namespace stagerefine

#endif  // STAGEREFINE_AUGMENT_H_
