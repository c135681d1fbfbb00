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

#include "quip/patch.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "quip/error.hpp"

namespace quip {

Image::Image(std::size_t h, std::size_t w, std::vector<double> px) : height(h), width(w), pixels(std::move(px)) {
  if (pixels.size() != h * w)
    throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) + " cannot hold " +
                     std::to_string(pixels.size()) + " pixels");
}

Image clipped(Image image) {
  for (double& v : image.pixels) v = std::clamp(v, 0.0, 1.0);
  return image;
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                     ")");
}

namespace patch {

double Offset::distance() const { return std::hypot(static_cast<double>(drow), static_cast<double>(dcol)); }

PatchGeometry PatchGeometry::with_defaults(std::size_t patch_size, std::size_t window) {
  PatchGeometry g;
  g.patch_size = patch_size;
  g.window = window;
  g.stride = std::max<std::size_t>(1, patch_size / 2);
  g.neighbor_stride = std::max<std::size_t>(1, patch_size / 2);
  g.max_group = 16;
  return g;
}

void PatchGeometry::validate() const {
  if (patch_size < 2) throw ArgumentError("patch size must be at least 2, got " + std::to_string(patch_size));
  if (window < patch_size)
    throw ArgumentError("window (" + std::to_string(window) + ") must be at least the patch size (" +
                        std::to_string(patch_size) + ")");
  if (stride < 1 || stride > patch_size)
    throw ArgumentError("patch stride must lie in [1, " + std::to_string(patch_size) + "], got " +
                        std::to_string(stride));
  if (neighbor_stride < 1) throw ArgumentError("neighbor stride must be at least 1");
  if (max_group < 1) throw ArgumentError("group cap must be at least 1");
}

std::size_t PatchGeometry::group_size() const { return group_offsets(*this).size(); }

std::vector<Offset> group_offsets(const PatchGeometry& geometry) {
  geometry.validate();
  const int span = static_cast<int>(geometry.window - geometry.patch_size);
  const int lo = span / 2;
  const int hi = span - lo;
  const int step = static_cast<int>(geometry.neighbor_stride);
  std::vector<int> axis;
  for (int o = -(lo / step) * step; o <= hi; o += step) axis.push_back(o);

  std::vector<Offset> offsets;
  for (int dr : axis)
    for (int dc : axis)
      if (dr != 0 || dc != 0) offsets.push_back({dr, dc});
  std::stable_sort(offsets.begin(), offsets.end(), [](const Offset& a, const Offset& b) {
    const int da = a.drow * a.drow + a.dcol * a.dcol;
    const int db = b.drow * b.drow + b.dcol * b.dcol;
    return da != db ? da < db : a < b;
  });
  offsets.insert(offsets.begin(), Offset{0, 0});
  if (offsets.size() > geometry.max_group) offsets.resize(geometry.max_group);
  return offsets;
}

std::span<const double> PatchGrid::patch(std::size_t i) const {
  const std::size_t m = geometry.pixels();
  return std::span<const double>(patches).subspan(i * m, m);
}

std::span<const double> LocalGroup::member(std::size_t i, std::size_t pixels) const {
  return std::span<const double>(values).subspan(i * pixels, pixels);
}

std::vector<std::size_t> grid_coordinates(std::size_t extent, std::size_t patch_size, std::size_t stride) {
  std::vector<std::size_t> coords;
  const std::size_t last = extent - patch_size;
  for (std::size_t c = 0; c <= last; c += stride) coords.push_back(c);
  if (coords.back() != last) coords.push_back(last);
  return coords;
}

void read_patch(const Image& image, Position pos, std::size_t n, std::span<double> out) {
  for (std::size_t r = 0; r < n; ++r) {
    const double* src = image.pixels.data() + (pos.row + r) * image.width + pos.col;
    std::copy_n(src, n, out.data() + r * n);
  }
}

PatchGrid extract(const Image& image, const PatchGeometry& geometry) {
  geometry.validate();
  const std::size_t n = geometry.patch_size;
  if (image.height < n || image.width < n)
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is smaller than one " + std::to_string(n) + "x" + std::to_string(n) + " patch");
  PatchGrid grid;
  grid.geometry = geometry;
  grid.image_height = image.height;
  grid.image_width = image.width;
  const auto rows = grid_coordinates(image.height, n, geometry.stride);
  const auto cols = grid_coordinates(image.width, n, geometry.stride);
  grid.anchors.reserve(rows.size() * cols.size());
  for (auto r : rows)
    for (auto c : cols) grid.anchors.push_back({r, c});
  const std::size_t m = geometry.pixels();
  grid.patches.resize(grid.anchors.size() * m);
  for (std::size_t i = 0; i < grid.anchors.size(); ++i)
    read_patch(image, grid.anchors[i], n, std::span<double>(grid.patches).subspan(i * m, m));
  return grid;
}

namespace {

std::size_t reflect_coordinate(std::size_t center, int offset, std::size_t limit) {
  const long long c = static_cast<long long>(center);
  const long long lim = static_cast<long long>(limit);
  long long p = c + offset;
  if (p < 0 || p > lim) p = c - offset;
  return static_cast<std::size_t>(std::clamp(p, 0LL, lim));
}

}  // namespace

Position member_position(Position center, Offset offset, std::size_t image_height, std::size_t image_width,
                         std::size_t patch_size) {
  return {reflect_coordinate(center.row, offset.drow, image_height - patch_size),
          reflect_coordinate(center.col, offset.dcol, image_width - patch_size)};
}

std::vector<LocalGroup> local_groups(const PatchGrid& grid, const Image& image) {
  if (image.height != grid.image_height || image.width != grid.image_width)
    throw ShapeError("local_groups: grid was extracted from a different image size");
  const auto offsets = group_offsets(grid.geometry);
  const std::size_t n = grid.geometry.patch_size;
  const std::size_t m = grid.geometry.pixels();
  std::vector<LocalGroup> groups;
  groups.reserve(grid.count());
  for (const Position& a : grid.anchors) {
    LocalGroup g;
    g.center = a;
    g.members.reserve(offsets.size());
    g.values.resize(offsets.size() * m);
    g.distances.reserve(offsets.size());
    for (std::size_t j = 0; j < offsets.size(); ++j) {
      const Position b = member_position(a, offsets[j], image.height, image.width, n);
      g.members.push_back(b);
      const double dr = static_cast<double>(b.row) - static_cast<double>(a.row);
      const double dc = static_cast<double>(b.col) - static_cast<double>(a.col);
      g.distances.push_back(std::hypot(dr, dc));
      read_patch(image, b, n, std::span<double>(g.values).subspan(j * m, m));
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

Image aggregate_mean(std::span<const double> patches, std::span<const Position> anchors, std::size_t n,
                     std::size_t height, std::size_t width) {
  const std::size_t m = n * n;
  if (patches.size() != anchors.size() * m)
    throw ShapeError("aggregate: " + std::to_string(patches.size()) + " values for " +
                     std::to_string(anchors.size()) + " patches of " + std::to_string(m) + " pixels");
  Image sum(height, width, 0.0);
  std::vector<std::uint32_t> count(height * width, 0);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Position a = anchors[i];
    if (a.row + n > height || a.col + n > width)
      throw ArgumentError("aggregate: anchor (" + std::to_string(a.row) + "," + std::to_string(a.col) +
                          ") lies outside the " + std::to_string(height) + "x" + std::to_string(width) + " image");
    const double* src = patches.data() + i * m;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t idx = (a.row + r) * width + a.col + c;
        sum.pixels[idx] += src[r * n + c];
        ++count[idx];
      }
  }
  for (std::size_t i = 0; i < sum.pixels.size(); ++i)
    if (count[i]) sum.pixels[i] /= count[i];
  return sum;
}

Image aggregate(std::span<const double> patches, std::span<const Position> anchors, std::size_t n,
                std::size_t height, std::size_t width) {
  return clipped(aggregate_mean(patches, anchors, n, height, width));
}

}  // namespace patch
}  // namespace quip
