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

// Patch extraction, local groups and overlap-normalized aggregation.

#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <vector>

#include "quip/image.hpp"

namespace quip::patch {

/// Upper-left pixel of a patch.
struct Position {
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const Position&) const = default;
};

/// Displacement of a group member relative to the group center.
struct Offset {
  int drow = 0;
  int dcol = 0;
  double distance() const;
  auto operator<=>(const Offset&) const = default;
};

struct PatchGeometry {
  std::size_t patch_size = 15;      // n: patches are n x n
  std::size_t window = 35;          // W: local window side
  std::size_t stride = 7;           // step of the patch grid
  std::size_t neighbor_stride = 7;  // step of member enumeration inside the window
  std::size_t max_group = 16;       // cap on group cardinality, center included

  /// Geometry with the default strides (n/2, at least 1) and group cap.
  static PatchGeometry with_defaults(std::size_t patch_size, std::size_t window);

  std::size_t pixels() const { return patch_size * patch_size; }
  /// Group cardinality kappa (center included).
  std::size_t group_size() const;
  /// Throws ArgumentError on an illegal geometry.
  void validate() const;

  friend bool operator==(const PatchGeometry&, const PatchGeometry&) = default;
};

/// Member offsets of every local group: center first, then by increasing
/// distance (ties broken lexicographically), truncated to max_group.
std::vector<Offset> group_offsets(const PatchGeometry& geometry);

struct PatchGrid {
  PatchGeometry geometry;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::vector<Position> anchors;
  std::vector<double> patches;  // zeta x n^2, row-major per patch

  std::size_t count() const { return anchors.size(); }
  std::span<const double> patch(std::size_t i) const;
};

struct LocalGroup {
  Position center;
  std::vector<Position> members;  // kappa positions, center first
  std::vector<double> values;     // kappa x n^2
  std::vector<double> distances;  // kappa; distances[0] == 0 is the center

  std::size_t size() const { return members.size(); }
  std::span<const double> member(std::size_t i, std::size_t pixels) const;
};

/// Anchor coordinates along one axis: multiples of `stride`, plus the
/// flush position `extent - n` when the grid would miss the last pixels.
std::vector<std::size_t> grid_coordinates(std::size_t extent, std::size_t patch_size, std::size_t stride);

PatchGrid extract(const Image& image, const PatchGeometry& geometry);

/// Position of the member at `offset` from `center`. Out-of-image offsets
/// are reflected through the center, then clamped.
Position member_position(Position center, Offset offset, std::size_t image_height, std::size_t image_width,
                         std::size_t patch_size);

std::vector<LocalGroup> local_groups(const PatchGrid& grid, const Image& image);

/// Pixel-wise mean of all patch contributions; no clipping. Pixels that no
/// patch covers are 0.
Image aggregate_mean(std::span<const double> patches, std::span<const Position> anchors, std::size_t patch_size,
                     std::size_t height, std::size_t width);

/// aggregate_mean followed by clipping to [0,1].
Image aggregate(std::span<const double> patches, std::span<const Position> anchors, std::size_t patch_size,
                std::size_t height, std::size_t width);

/// Copies the n x n patch at `pos` into `out` (n^2 values).
void read_patch(const Image& image, Position pos, std::size_t patch_size, std::span<double> out);

}  // namespace quip::patch
