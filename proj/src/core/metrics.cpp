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

#include "quip/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "quip/error.hpp"

namespace quip::metrics {

double mse(const Image& reference, const Image& test) {
  require_same_shape(reference, test, "mse");
  if (reference.empty()) throw ShapeError("mse: empty images");
  double acc = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = reference.pixels[i] - test.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(reference.size());
}

double psnr(const Image& reference, const Image& test) {
  const double e = mse(reference, test);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

std::vector<double> ssim_taps() {
  std::vector<double> taps(kSsimWindow);
  const double c = (kSsimWindow - 1) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double x = static_cast<double>(i) - c;
    taps[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

namespace {

// Separable 'valid' Gaussian filtering of a product image.
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                 const std::vector<double>& taps) {
  const std::size_t k = taps.size();
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += taps[j] * src[r * w + c + j];
      rows[r * ow + c] = acc;
    }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += taps[i] * rows[(r + i) * ow + c];
      out[r * ow + c] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Image& reference, const Image& test) {
  require_same_shape(reference, test, "ssim");
  if (reference.height < kSsimWindow || reference.width < kSsimWindow)
    throw ShapeError("ssim: image " + std::to_string(reference.height) + "x" + std::to_string(reference.width) +
                     " is smaller than the " + std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow) +
                     " window");
  const std::size_t h = reference.height, w = reference.width, n = reference.size();
  const auto taps = ssim_taps();
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = reference.pixels[i], y = test.pixels[i];
    xx[i] = x * x;
    yy[i] = y * y;
    xy[i] = x * y;
  }
  const auto mx = filter_valid(reference.pixels, h, w, taps);
  const auto my = filter_valid(test.pixels, h, w, taps);
  const auto sxx = filter_valid(xx, h, w, taps);
  const auto syy = filter_valid(yy, h, w, taps);
  const auto sxy = filter_valid(xy, h, w, taps);
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double ux = mx[i], uy = my[i];
    const double vx = sxx[i] - ux * ux, vy = syy[i] - uy * uy, cxy = sxy[i] - ux * uy;
    acc += ((2.0 * ux * uy + kSsimC1) * (2.0 * cxy + kSsimC2)) /
           ((ux * ux + uy * uy + kSsimC1) * (vx + vy + kSsimC2));
  }
  return acc / static_cast<double>(mx.size());
}

QualityScore score(const Image& reference, const Image& test) { return {psnr(reference, test), ssim(reference, test)}; }

Image crop_border(const Image& image, std::size_t border) {
  if (border == 0) return image;
  if (2 * border >= image.height || 2 * border >= image.width)
    throw ShapeError("crop_border: border " + std::to_string(border) + " leaves nothing of a " +
                     std::to_string(image.height) + "x" + std::to_string(image.width) + " image");
  Image out(image.height - 2 * border, image.width - 2 * border);
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c) out.at(r, c) = image.at(r + border, c + border);
  return out;
}

std::string format_psnr(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  return buf;
}

std::string format_score(const QualityScore& s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * s.ssim);
  return format_psnr(s.psnr) + "/" + buf;
}

}  // namespace quip::metrics
