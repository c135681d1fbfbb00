// Copyright (c) the quip authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <vector>

namespace quip {

/// Grayscale raster, row-major, nominal range [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}
  Image(std::size_t h, std::size_t w, std::vector<double> px);

  double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
  bool same_shape(const Image& other) const { return height == other.height && width == other.width; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Copy with every pixel clamped to [0,1].
Image clipped(Image image);

/// Throws ShapeError naming `what` unless both images have the same shape.
void require_same_shape(const Image& a, const Image& b, const char* what);

}  // namespace quip
