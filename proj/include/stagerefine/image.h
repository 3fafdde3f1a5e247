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

#ifndef STAGEREFINE_IMAGE_H_
#define STAGEREFINE_IMAGE_H_

#include <cstddef>
#include <cstdint>
#include <vector>

namespace stagerefine {

// 8-bit image stored interleaved: pixels[(y * width + x) * channels + c].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, int c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c),
        pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  std::uint8_t at(int y, int x, int c) const { return pixels[index(y, x, c)]; }
  std::uint8_t& at(int y, int x, int c) { return pixels[index(y, x, c)]; }

  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width &&
           channels == other.channels;
  }
  bool operator==(const Image&) const = default;
};

// Float image in [0, 1], same layout as Image. Augmentation works on this
// representation and only quantizes at the end.
struct FloatImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  FloatImage() = default;
  FloatImage(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float at(int y, int x, int c) const { return data[index(y, x, c)]; }
  float& at(int y, int x, int c) { return data[index(y, x, c)]; }
};

FloatImage to_float(const Image& image);

// Rounds to nearest and clamps into [0, 255].
Image quantize(const FloatImage& image);

}  // namespace stagerefine

#endif  // STAGEREFINE_IMAGE_H_
