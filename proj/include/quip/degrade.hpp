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

// Synthetic degradations y = O x + e.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "quip/image.hpp"

namespace quip::degrade {

enum class Kind { awgn, gaussian_blur, motion_blur, bicubic_down, gaussian_down, random_mask };

std::string_view kind_name(Kind kind);
/// Accepts the names printed by kind_name ("awgn", "gaussian-blur", ...).
Kind parse_kind(std::string_view name);

/// Rectangular blur kernel, nonnegative, sums to 1.
struct Kernel {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

/// size x size sampled Gaussian, normalized.
Kernel gaussian_kernel(std::size_t size, double sigma);

/// Parses whitespace-separated rows of decimals. The kernel is normalized to
/// sum 1; if the raw sum was off by more than 1e-6, `warning` receives a
/// message.
Kernel parse_kernel(std::string_view text, std::string* warning = nullptr);
Kernel load_kernel(const std::filesystem::path& path, std::string* warning = nullptr);

struct DegradationSpec {
  Kind kind = Kind::awgn;
  double sigma = 0.0;  // AWGN standard deviation on the 0-255 scale
  std::optional<Kernel> kernel;
  std::size_t scale = 2;
  double mask_rate = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Degraded {
  Image observed;
  /// random-mask only: 1 where observed, 0 where missing.
  std::optional<Image> mask;
};

/// Deterministic given spec.seed. Noise is added after blurring or
/// decimation; masked pixels are exactly 0.
Degraded apply(const DegradationSpec& spec, const Image& image);

/// Same-size network input for restoration: the observation itself, or for
/// the downsampling kinds the bicubic upsampling of the low-resolution
/// observation. Image sides must be multiples of spec.scale for those.
Image restoration_input(const DegradationSpec& spec, const Image& clean);

/// Adds N(0, (sigma/255)^2) per pixel and clips to [0,1].
Image add_noise(Image image, double sigma, std::mt19937_64& rng);

/// 'Same' convolution with symmetric (mirrored) boundary.
Image convolve(const Image& image, const Kernel& kernel);

enum class Direction { up, down };

/// Bicubic (a = -0.5) resampling by an integer factor in {2,3,4}, with the
/// kernel widened on downsampling for antialiasing. Output sides are
/// round(side * scale) or round(side / scale).
Image bicubic_resize(const Image& image, std::size_t scale, Direction direction);

/// Resampling to an explicit size with the same kernel.
Image resize(const Image& image, std::size_t height, std::size_t width);

}  // namespace quip::degrade
