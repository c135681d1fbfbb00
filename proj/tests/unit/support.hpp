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


// Shared helpers for the unit suites.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "quip/image.hpp"
#include "quip/tensor.hpp"

namespace quip::testing {

inline std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

inline tensor::Tensor random_tensor(tensor::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = tensor::numel(shape);
  return tensor::Tensor(std::move(shape), uniform(n, rng, lo, hi));
}

inline Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  return Image(h, w, uniform(h * w, rng, 0.0, 1.0));
}

/// Smooth texture in [0.2, 0.8].
inline Image texture(std::size_t h, std::size_t w) {
  Image out(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out.at(r, c) = 0.5 + 0.2 * std::sin(0.37 * r) * std::cos(0.23 * c) + 0.1 * std::sin(0.11 * (r + 2 * c));
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Loss built on a fresh tape from bound parameters.
using LossFn = std::function<tensor::Var(tensor::Tape&, std::vector<tensor::Var>&)>;

/// Worst relative error between backward() and central differences over
/// every coordinate of every parameter.
inline double gradient_error(std::vector<tensor::Parameter>& params, const LossFn& loss, double h = 1e-5) {
  auto evaluate = [&](bool backprop) {
    tensor::Tape tape;
    std::vector<tensor::Var> vars;
    for (auto& p : params) vars.push_back(tape.parameter(p));
    tensor::Var l = loss(tape, vars);
    const double value = l.value().item();
    if (backprop) tape.backward(l);
    return value;
  };
  for (auto& p : params) p.zero_grad();
  evaluate(true);
  double worst = 0.0;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + h;
      const double up = evaluate(false);
      p.value[i] = keep - h;
      const double down = evaluate(false);
      p.value[i] = keep;
      worst = std::max(worst, relative_error(p.grad[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("quip-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace quip::testing
