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

#include "quip/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "quip/error.hpp"

namespace quip::degrade {

std::string_view kind_name(Kind kind) {
  switch (kind) {
    case Kind::awgn: return "awgn";
    case Kind::gaussian_blur: return "gaussian-blur";
    case Kind::motion_blur: return "motion-blur";
    case Kind::bicubic_down: return "bicubic-down";
    case Kind::gaussian_down: return "gaussian-down";
    case Kind::random_mask: return "random-mask";
  }
  return "unknown";
}

Kind parse_kind(std::string_view name) {
  for (Kind k : {Kind::awgn, Kind::gaussian_blur, Kind::motion_blur, Kind::bicubic_down, Kind::gaussian_down,
                 Kind::random_mask})
    if (kind_name(k) == name) return k;
  throw ArgumentError("unknown degradation kind '" + std::string(name) + "'");
}

Kernel gaussian_kernel(std::size_t size, double sigma) {
  if (size == 0 || size % 2 == 0) throw ArgumentError("gaussian kernel size must be odd");
  if (!(sigma > 0.0)) throw ArgumentError("gaussian kernel sigma must be positive");
  Kernel k{size, size, std::vector<double>(size * size)};
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t q = 0; q < size; ++q) {
      const double dr = static_cast<double>(r) - c, dq = static_cast<double>(q) - c;
      k.values[r * size + q] = std::exp(-(dr * dr + dq * dq) / (2.0 * sigma * sigma));
    }
  const double total = std::accumulate(k.values.begin(), k.values.end(), 0.0);
  for (double& v : k.values) v /= total;
  return k;
}

Kernel parse_kernel(std::string_view text, std::string* warning) {
  Kernel k;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::vector<double> values;
    std::string token;
    while (row >> token) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size()) throw IoError("kernel: '" + token + "' is not a number");
      values.push_back(v);
    }
    if (values.empty()) continue;
    if (k.cols == 0) k.cols = values.size();
    if (values.size() != k.cols)
      throw IoError("kernel: row " + std::to_string(k.rows + 1) + " has " + std::to_string(values.size()) +
                    " values, expected " + std::to_string(k.cols));
    k.values.insert(k.values.end(), values.begin(), values.end());
    ++k.rows;
  }
  if (k.rows == 0) throw IoError("kernel: no values");
  for (double v : k.values)
    if (!(v >= 0.0) || !std::isfinite(v)) throw IoError("kernel: entries must be finite and nonnegative");
  const double total = std::accumulate(k.values.begin(), k.values.end(), 0.0);
  if (!(total > 0.0)) throw IoError("kernel: entries sum to zero");
  if (std::abs(total - 1.0) > 1e-6 && warning)
    *warning = "kernel entries sum to " + std::to_string(total) + "; normalized to 1";
  for (double& v : k.values) v /= total;
  return k;
}

Kernel load_kernel(const std::filesystem::path& path, std::string* warning) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read kernel file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_kernel(ss.str(), warning);
}

void DegradationSpec::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ArgumentError("noise sigma must be >= 0");
  switch (kind) {
    case Kind::gaussian_blur:
    case Kind::motion_blur:
      if (!kernel) throw ArgumentError(std::string(kind_name(kind)) + " requires a blur kernel");
      break;
    case Kind::bicubic_down:
    case Kind::gaussian_down:
      if (scale < 2 || scale > 4) throw ArgumentError("downsampling scale must be 2, 3 or 4");
      break;
    case Kind::random_mask:
      if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ArgumentError("mask rate must lie in (0,1)");
      break;
    case Kind::awgn: break;
  }
  if (kernel) {
    if (kernel->rows == 0 || kernel->cols == 0 || kernel->values.size() != kernel->rows * kernel->cols)
      throw ArgumentError("malformed blur kernel");
    const double total = std::accumulate(kernel->values.begin(), kernel->values.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("blur kernel must sum to 1");
    for (double v : kernel->values)
      if (v < 0.0) throw ArgumentError("blur kernel must be nonnegative");
  }
}

Image add_noise(Image image, double sigma, std::mt19937_64& rng) {
  if (sigma == 0.0) return image;
  std::normal_distribution<double> noise(0.0, sigma / 255.0);
  for (double& v : image.pixels) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return image;
}

namespace {

// Symmetric (half-sample) mirroring of an index into [0, len).
std::ptrdiff_t mirror(std::ptrdiff_t i, std::ptrdiff_t len) {
  const std::ptrdiff_t period = 2 * len;
  i %= period;
  if (i < 0) i += period;
  return i < len ? i : period - 1 - i;
}

double cubic(double x) {
  const double a = std::abs(x);
  if (a <= 1.0) return (1.5 * a - 2.5) * a * a + 1.0;
  if (a <= 2.0) return ((-0.5 * a + 2.5) * a - 4.0) * a + 2.0;
  return 0.0;
}

struct AxisWeights {
  std::size_t taps = 0;
  std::vector<std::ptrdiff_t> index;  // out_len x taps
  std::vector<double> weight;         // out_len x taps
};

// Resampling weights along one axis; `scale` is out/in.
AxisWeights axis_weights(std::size_t in_len, std::size_t out_len, double scale) {
  const bool shrink = scale < 1.0;
  const double width = shrink ? 4.0 / scale : 4.0;
  AxisWeights w;
  w.taps = static_cast<std::size_t>(std::ceil(width)) + 2;
  w.index.resize(out_len * w.taps);
  w.weight.resize(out_len * w.taps);
  for (std::size_t o = 0; o < out_len; ++o) {
    const double u = (static_cast<double>(o) + 1.0) / scale + 0.5 * (1.0 - 1.0 / scale);
    const double left = std::floor(u - width / 2.0);
    double total = 0.0;
    for (std::size_t t = 0; t < w.taps; ++t) {
      const double pos = left + static_cast<double>(t);
      const double d = u - pos;
      const double h = shrink ? scale * cubic(scale * d) : cubic(d);
      w.index[o * w.taps + t] = mirror(static_cast<std::ptrdiff_t>(pos) - 1, static_cast<std::ptrdiff_t>(in_len));
      w.weight[o * w.taps + t] = h;
      total += h;
    }
    for (std::size_t t = 0; t < w.taps; ++t) w.weight[o * w.taps + t] /= total;
  }
  return w;
}

Image resample(const Image& image, std::size_t out_h, std::size_t out_w, double scale_h, double scale_w) {
  if (out_h < 1 || out_w < 1) throw ArgumentError("resize: output would be empty");
  const AxisWeights wr = axis_weights(image.height, out_h, scale_h);
  const AxisWeights wc = axis_weights(image.width, out_w, scale_w);
  Image tmp(image.height, out_w);
  for (std::size_t r = 0; r < image.height; ++r)
    for (std::size_t c = 0; c < out_w; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < wc.taps; ++t)
        acc += wc.weight[c * wc.taps + t] * image.at(r, static_cast<std::size_t>(wc.index[c * wc.taps + t]));
      tmp.at(r, c) = acc;
    }
  Image out(out_h, out_w);
  for (std::size_t r = 0; r < out_h; ++r)
    for (std::size_t c = 0; c < out_w; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < wr.taps; ++t)
        acc += wr.weight[r * wr.taps + t] * tmp.at(static_cast<std::size_t>(wr.index[r * wr.taps + t]), c);
      out.at(r, c) = acc;
    }
  return out;
}

}  // namespace

Image convolve(const Image& image, const Kernel& kernel) {
  const auto H = static_cast<std::ptrdiff_t>(image.height), W = static_cast<std::ptrdiff_t>(image.width);
  const auto kh = static_cast<std::ptrdiff_t>(kernel.rows), kw = static_cast<std::ptrdiff_t>(kernel.cols);
  const std::ptrdiff_t ch = (kh - 1) / 2, cw = (kw - 1) / 2;
  Image out(image.height, image.width);
  for (std::ptrdiff_t r = 0; r < H; ++r)
    for (std::ptrdiff_t c = 0; c < W; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t i = 0; i < kh; ++i) {
        const std::size_t sr = static_cast<std::size_t>(mirror(r + i - ch, H));
        for (std::ptrdiff_t j = 0; j < kw; ++j) {
          const std::size_t sc = static_cast<std::size_t>(mirror(c + j - cw, W));
          acc += kernel.values[static_cast<std::size_t>(i * kw + j)] * image.at(sr, sc);
        }
      }
      out.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  return out;
}

Image bicubic_resize(const Image& image, std::size_t scale, Direction direction) {
  if (scale < 2 || scale > 4) throw ArgumentError("resize scale must be 2, 3 or 4");
  const double s = static_cast<double>(scale);
  if (direction == Direction::up)
    return resample(image, image.height * scale, image.width * scale, s, s);
  const auto oh = static_cast<std::size_t>(std::lround(static_cast<double>(image.height) / s));
  const auto ow = static_cast<std::size_t>(std::lround(static_cast<double>(image.width) / s));
  if (oh < 1 || ow < 1)
    throw ArgumentError("resize: " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                        " downsampled by " + std::to_string(scale) + " is empty");
  return resample(image, oh, ow, 1.0 / s, 1.0 / s);
}

Image resize(const Image& image, std::size_t height, std::size_t width) {
  if (image.empty()) throw ArgumentError("resize: empty image");
  return resample(image, height, width, static_cast<double>(height) / static_cast<double>(image.height),
                  static_cast<double>(width) / static_cast<double>(image.width));
}

Degraded apply(const DegradationSpec& spec, const Image& image) {
  if (image.empty()) throw ArgumentError("degrade: empty image");
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  Degraded out;
  switch (spec.kind) {
    case Kind::awgn:
      out.observed = add_noise(image, spec.sigma, rng);
      break;
    case Kind::gaussian_blur:
    case Kind::motion_blur:
      out.observed = add_noise(clipped(convolve(image, *spec.kernel)), spec.sigma, rng);
      break;
    case Kind::bicubic_down:
      out.observed = add_noise(clipped(bicubic_resize(image, spec.scale, Direction::down)), spec.sigma, rng);
      break;
    case Kind::gaussian_down: {
      const Kernel k = spec.kernel ? *spec.kernel : gaussian_kernel(7, 1.6);
      const Image blurred = convolve(image, k);
      Image low(blurred.height / spec.scale, blurred.width / spec.scale);
      if (low.empty()) throw ArgumentError("degrade: image too small for the downsampling scale");
      for (std::size_t r = 0; r < low.height; ++r)
        for (std::size_t c = 0; c < low.width; ++c) low.at(r, c) = blurred.at(r * spec.scale, c * spec.scale);
      out.observed = add_noise(clipped(std::move(low)), spec.sigma, rng);
      break;
    }
    case Kind::random_mask: {
      const std::size_t n = image.size();
      const auto missing = static_cast<std::size_t>(std::llround(spec.mask_rate * static_cast<double>(n)));
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      Image mask(image.height, image.width, 1.0);
      for (std::size_t i = 0; i < missing; ++i) mask.pixels[order[i]] = 0.0;
      Image observed = add_noise(image, spec.sigma, rng);
      for (std::size_t i = 0; i < n; ++i)
        if (mask.pixels[i] == 0.0) observed.pixels[i] = 0.0;
      out.observed = std::move(observed);
      out.mask = std::move(mask);
      break;
    }
  }
  return out;
}

Image restoration_input(const DegradationSpec& spec, const Image& clean) {
  Degraded d = apply(spec, clean);
  if (spec.kind != Kind::bicubic_down && spec.kind != Kind::gaussian_down) return std::move(d.observed);
  if (clean.height % spec.scale || clean.width % spec.scale)
    throw ArgumentError("restoration input: image sides must be multiples of the scale " + std::to_string(spec.scale));
  return clipped(bicubic_resize(d.observed, spec.scale, Direction::up));
}

}  // namespace quip::degrade
