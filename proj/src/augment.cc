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

#include "stagerefine/augment.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "stagerefine/errors.h"

namespace stagerefine {

FloatImage to_float(const Image& image) {
  FloatImage out(image.height, image.width, image.channels);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    out.data[i] = static_cast<float>(image.pixels[i]) / 255.0f;
  }
  return out;
}

Image quantize(const FloatImage& image) {
  Image out(image.height, image.width, image.channels);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    const float v = std::clamp(image.data[i], 0.0f, 1.0f);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

AugmentationPolicy AugmentationPolicy::identity() {
  AugmentationPolicy p;
  p.crop_scale_range = {1.0, 1.0};
  p.jitter_strengths = {0.0, 0.0, 0.0, 0.0};
  p.jitter_apply_prob = 0.0;
  p.blur_apply_prob = 0.0;
  p.grayscale_prob = 0.0;
  return p;
}

void AugmentationPolicy::validate() const {
  auto prob = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError(std::string("augmentation.") + name +
                        " must lie in [0, 1]");
    }
  };
  prob(jitter_apply_prob, "jitter_apply_prob");
  prob(blur_apply_prob, "blur_apply_prob");
  prob(grayscale_prob, "grayscale_prob");
  const auto [smin, smax] = crop_scale_range;
  if (!(smin > 0.0 && smax <= 1.0 && smin <= smax)) {
    throw ConfigError(
        "augmentation.crop_scale_range must satisfy 0 < min <= max <= 1");
  }
  const auto [rmin, rmax] = crop_ratio_range;
  if (!(rmin > 0.0 && rmin <= rmax)) {
    throw ConfigError(
        "augmentation.crop_ratio_range must satisfy 0 < min <= max");
  }
  for (double s : jitter_strengths) {
    if (!(s >= 0.0)) {
      throw ConfigError("augmentation.jitter_strengths must be non-negative");
    }
  }
  if (jitter_strengths[3] > 0.5) {
    throw ConfigError("augmentation hue strength must be at most 0.5");
  }
  const auto [bmin, bmax] = blur_sigma_range;
  if (!(bmin > 0.0 && bmin <= bmax)) {
    throw ConfigError(
        "augmentation.blur_sigma_range must satisfy 0 < min <= max");
  }
  if (output_size[0] < 0 || output_size[1] < 0) {
    throw ConfigError("augmentation.output_size must be non-negative");
  }
}

namespace {

struct CropWindow {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};

// Random resized crop window, following the usual sampling scheme: up to ten
// attempts at a random (area, log-aspect) pair, then a center crop clamped
// to the ratio range.
CropWindow sample_crop(int h, int w, const AugmentationPolicy& policy,
                       Rng& rng) {
  const auto [smin, smax] = policy.crop_scale_range;
  if (smin >= 1.0 && smax >= 1.0) return {0, 0, h, w};
  const double area = static_cast<double>(h) * w;
  const double log_rmin = std::log(policy.crop_ratio_range.first);
  const double log_rmax = std::log(policy.crop_ratio_range.second);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, smin, smax);
    const double ratio = std::exp(uniform(rng, log_rmin, log_rmax));
    const int cw = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int ch = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (cw > 0 && ch > 0 && cw <= w && ch <= h) {
      const int top = static_cast<int>(uniform_index(rng, h - ch + 1));
      const int left = static_cast<int>(uniform_index(rng, w - cw + 1));
      return {top, left, ch, cw};
    }
  }
  const double in_ratio = static_cast<double>(w) / h;
  int cw = w;
  int ch = h;
  if (in_ratio < policy.crop_ratio_range.first) {
    ch = static_cast<int>(std::lround(w / policy.crop_ratio_range.first));
  } else if (in_ratio > policy.crop_ratio_range.second) {
    cw = static_cast<int>(std::lround(h * policy.crop_ratio_range.second));
  }
  return {(h - ch) / 2, (w - cw) / 2, ch, cw};
}

FloatImage crop_and_resize(const FloatImage& src, const CropWindow& win,
                           int out_h, int out_w) {
  FloatImage out(out_h, out_w, src.channels);
  const double sy = static_cast<double>(win.height) / out_h;
  const double sx = static_cast<double>(win.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(win.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, win.height - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(win.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, win.width - 1);
      const float wx = static_cast<float>(fx - x0);
      for (int c = 0; c < src.channels; ++c) {
        const float a = src.at(win.top + y0, win.left + x0, c);
        const float b = src.at(win.top + y0, win.left + x1, c);
        const float d = src.at(win.top + y1, win.left + x0, c);
        const float e = src.at(win.top + y1, win.left + x1, c);
        if (wx == 0.0f && wy == 0.0f) {
          out.at(y, x, c) = a;
        } else {
          const float top = a + (b - a) * wx;
          const float bottom = d + (e - d) * wx;
          out.at(y, x, c) = top + (bottom - top) * wy;
        }
      }
    }
  }
  return out;
}

float luma(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

void clamp01(FloatImage& img) {
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

void adjust_brightness(FloatImage& img, float factor) {
  for (float& v : img.data) v *= factor;
  clamp01(img);
}

void adjust_contrast(FloatImage& img, float factor) {
  double mean = 0.0;
  const std::size_t pixels = static_cast<std::size_t>(img.height) * img.width;
  if (img.channels == 3) {
    for (std::size_t p = 0; p < pixels; ++p) {
      mean += luma(img.data[3 * p], img.data[3 * p + 1], img.data[3 * p + 2]);
    }
  } else {
    for (float v : img.data) mean += v;
  }
  mean /= static_cast<double>(img.channels == 3 ? pixels : img.data.size());
  const float m = static_cast<float>(mean);
  for (float& v : img.data) v = m + factor * (v - m);
  clamp01(img);
}

void adjust_saturation(FloatImage& img, float factor) {
  if (img.channels != 3) return;
  const std::size_t pixels = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t p = 0; p < pixels; ++p) {
    float* px = &img.data[3 * p];
    const float g = luma(px[0], px[1], px[2]);
    for (int c = 0; c < 3; ++c) px[c] = g + factor * (px[c] - g);
  }
  clamp01(img);
}

// Rotates hue by `shift` turns through HSV.
void adjust_hue(FloatImage& img, float shift) {
  if (img.channels != 3) return;
  const std::size_t pixels = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t p = 0; p < pixels; ++p) {
    float* px = &img.data[3 * p];
    const float r = px[0], g = px[1], b = px[2];
    const float maxc = std::max({r, g, b});
    const float minc = std::min({r, g, b});
    const float delta = maxc - minc;
    if (delta <= 0.0f) continue;
    float h;
    if (maxc == r) {
      h = std::fmod((g - b) / delta, 6.0f);
    } else if (maxc == g) {
      h = (b - r) / delta + 2.0f;
    } else {
      h = (r - g) / delta + 4.0f;
    }
    h /= 6.0f;
    h += shift;
    h -= std::floor(h);
    const float s = delta / maxc;
    const float v = maxc;
    const float hh = h * 6.0f;
    const int sector = static_cast<int>(hh) % 6;
    const float f = hh - std::floor(hh);
    const float pp = v * (1.0f - s);
    const float q = v * (1.0f - s * f);
    const float t = v * (1.0f - s * (1.0f - f));
    switch (sector) {
      case 0: px[0] = v; px[1] = t; px[2] = pp; break;
      case 1: px[0] = q; px[1] = v; px[2] = pp; break;
      case 2: px[0] = pp; px[1] = v; px[2] = t; break;
      case 3: px[0] = pp; px[1] = q; px[2] = v; break;
      case 4: px[0] = t; px[1] = pp; px[2] = v; break;
      default: px[0] = v; px[1] = pp; px[2] = q; break;
    }
  }
  clamp01(img);
}

void color_jitter(FloatImage& img, const std::array<double, 4>& strengths,
                  Rng& rng) {
  std::array<int, 4> order{0, 1, 2, 3};
  shuffle_in_place(std::span<int>(order), rng);
  for (int which : order) {
    const double s = strengths[which];
    if (s <= 0.0) continue;
    if (which == 3) {
      adjust_hue(img, static_cast<float>(uniform(rng, -s, s)));
      continue;
    }
    const float factor =
        static_cast<float>(uniform(rng, std::max(0.0, 1.0 - s), 1.0 + s));
    if (which == 0) adjust_brightness(img, factor);
    if (which == 1) adjust_contrast(img, factor);
    if (which == 2) adjust_saturation(img, factor);
  }
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

FloatImage resize_bilinear(const FloatImage& image, int out_h, int out_w) {
  if (image.height <= 0 || image.width <= 0 || out_h <= 0 || out_w <= 0) {
    throw AugmentationError("resize with an empty source or target");
  }
  return crop_and_resize(image, {0, 0, image.height, image.width}, out_h,
                         out_w);
}

FloatImage gaussian_blur(const FloatImage& image, double sigma) {
  if (!(sigma > 0.0)) throw AugmentationError("blur sigma must be positive");
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] =
        static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
  }
  const float total = std::accumulate(kernel.begin(), kernel.end(), 0.0f);
  for (float& k : kernel) k /= total;

  FloatImage tmp(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[i + radius] *
                 image.at(y, reflect(x + i, image.width), c);
        }
        tmp.at(y, x, c) = acc;
      }
    }
  }
  FloatImage out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[i + radius] *
                 tmp.at(reflect(y + i, image.height), x, c);
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  clamp01(out);
  return out;
}

void to_grayscale(FloatImage& image) {
  if (image.channels != 3) return;
  const std::size_t pixels =
      static_cast<std::size_t>(image.height) * image.width;
  for (std::size_t p = 0; p < pixels; ++p) {
    float* px = &image.data[3 * p];
    const float g = std::clamp(luma(px[0], px[1], px[2]), 0.0f, 1.0f);
    px[0] = px[1] = px[2] = g;
  }
}

Image apply_policy(const Image& image, const AugmentationPolicy& policy,
                   Rng& rng) {
  if (image.height <= 0 || image.width <= 0 || image.channels <= 0) {
    throw AugmentationError("cannot augment an empty image");
  }
  const int out_h = policy.output_size[0] > 0 ? policy.output_size[0]
                                              : image.height;
  const int out_w = policy.output_size[1] > 0 ? policy.output_size[1]
                                              : image.width;
  const CropWindow win = sample_crop(image.height, image.width, policy, rng);
  if (win.height <= 0 || win.width <= 0) {
    throw AugmentationError("degenerate crop window of zero area");
  }

  FloatImage work = crop_and_resize(to_float(image), win, out_h, out_w);
  if (uniform01(rng) < policy.jitter_apply_prob) {
    color_jitter(work, policy.jitter_strengths, rng);
  }
  if (uniform01(rng) < policy.blur_apply_prob) {
    const double sigma = uniform(rng, policy.blur_sigma_range.first,
                                 policy.blur_sigma_range.second);
    work = gaussian_blur(work, sigma);
  }
  if (uniform01(rng) < policy.grayscale_prob) to_grayscale(work);
  return quantize(work);
}

std::pair<Image, Image> make_view_pair(const Image& image,
                                       const AugmentationPolicy& policy,
                                       Rng& rng) {
  Image a = apply_policy(image, policy, rng);
  Image b = apply_policy(image, policy, rng);
  return {std::move(a), std::move(b)};
}

Image apply_light(const Image& image, const LightAugmentation& light,
                  Rng& rng) {
  const int pad = std::max(0, light.padding);
  const int dy = pad > 0 ? static_cast<int>(uniform_index(rng, 2 * pad + 1)) -
                               pad
                         : 0;
  const int dx = pad > 0 ? static_cast<int>(uniform_index(rng, 2 * pad + 1)) -
                               pad
                         : 0;
  const bool flip = light.horizontal_flip && uniform01(rng) < 0.5;
  Image out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y) {
    const int sy = y + dy;
    if (sy < 0 || sy >= image.height) continue;
    for (int x = 0; x < image.width; ++x) {
      int sx = x + dx;
      if (sx < 0 || sx >= image.width) continue;
      if (flip) sx = image.width - 1 - sx;
      for (int c = 0; c < image.channels; ++c) {
        out.at(y, x, c) = image.at(sy, sx, c);
      }
    }
  }
  return out;
}

}  // namespace stagerefine
