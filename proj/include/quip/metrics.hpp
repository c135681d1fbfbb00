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
#include <string>
#include <vector>

#include "quip/image.hpp"

namespace quip::metrics {

/// SSIM configuration: 11x11 Gaussian window, sigma 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1. Only windows fully inside the image count.
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct QualityScore {
  double psnr = 0.0;  // dB, +inf for identical images
  double ssim = 0.0;
};

double mse(const Image& reference, const Image& test);
/// 10 log10(1 / MSE) for peak value 1.
double psnr(const Image& reference, const Image& test);
double ssim(const Image& reference, const Image& test);
QualityScore score(const Image& reference, const Image& test);

/// Normalized 1-D Gaussian taps of the SSIM window.
std::vector<double> ssim_taps();

/// Image without `border` pixels on each side.
Image crop_border(const Image& image, std::size_t border);

/// "PSNR/SSIM" with two decimals each and SSIM in percent, e.g.
/// "32.92/95.41". Infinite PSNR prints as "inf".
std::string format_score(const QualityScore& score);
std::string format_psnr(double psnr);

}  // namespace quip::metrics
