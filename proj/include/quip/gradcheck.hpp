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


// End-to-end finite-difference verification of DIVA gradients.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace quip::gradcheck {

struct Options {
  std::uint64_t seed = 0;
  std::size_t image_size = 8;
  std::size_t patch_size = 3;
  std::size_t window = 7;
  std::size_t max_group = 4;
  std::size_t depth = 2;
  std::size_t features = 4;
  bool neutralization = false;
  double step = 1e-5;
};

struct GroupError {
  std::string name;
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
};

struct Report {
  std::vector<GroupError> groups;
  double worst() const;
  bool passed(double tolerance = 1e-4) const { return worst() < tolerance; }
};

/// |a - n| / max(|a|, |n|, 1e-8) for analytic a and numeric n.
double relative_error(double analytic, double numeric);

/// Compares the analytic gradient of the residual loss with central
/// differences on every coordinate of every parameter of a randomly
/// initialized model.
Report run(const Options& options);

}  // namespace quip::gradcheck
