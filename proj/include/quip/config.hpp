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


// Run configuration shared by every command: a flat table of
// "section.key" settings, read from "key = value" files with [section]
// headers and overridden one key at a time.

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "quip/degrade.hpp"
#include "quip/dequip.hpp"
#include "quip/diva.hpp"
#include "quip/train.hpp"

namespace quip::config {

using Entry = std::pair<std::string, std::string>;

/// "key = value" lines; "[name]" opens section "name" and prefixes later
/// keys with "name.". '#' and ';' start comments. Throws ArgumentError
/// with the line number on a malformed line.
std::vector<Entry> parse(std::string_view text);
std::vector<Entry> parse_file(const std::string& path);

struct KeyInfo {
  std::string_view key;       // "section.name"
  std::string_view fallback;  // value when unset; empty when derived from other keys
  std::string_view help;
};

/// Every accepted key, in documentation order.
const std::vector<KeyInfo>& keys();

class RunConfig {
 public:
  /// Accepts "section.name", or a bare "name" that is unique across
  /// sections. Throws ArgumentError on an unknown key or a bad value.
  void set(std::string_view key, std::string_view value);
  void set_all(const std::vector<Entry>& entries);
  /// Text last assigned to `key`, or its documented fallback.
  std::string get(std::string_view key) const;

  /// Resolved settings; throws ArgumentError when the combination is
  /// invalid. Loads the blur kernel file if one is named.
  diva::ModelConfig model() const;
  train::TrainConfig training() const;
  degrade::DegradationSpec degradation() const;
  dequip::DequipParams dequip() const;
  patch::PatchGeometry geometry() const;
  std::size_t crop_border() const { return crop_border_; }
  std::uint64_t model_seed() const { return model_seed_; }

  /// Validates every section at once.
  void validate() const;
  /// Messages produced while resolving (kernel normalization, sign notes).
  std::vector<std::string> warnings() const;

 private:
  void set_value(const std::string& key, std::string_view value);

  std::map<std::string, std::string> values_;
  std::size_t patch_size_ = 15, window_ = 35, max_group_ = 16;
  std::optional<std::size_t> stride_, neighbor_stride_;
  std::size_t depth_ = 2, features_ = 64;
  diva::Mode mode_ = diva::Mode::denoise;
  bool interaction_ = true;
  diva::ProjectionKind projection_ = diva::ProjectionKind::hamiltonian;
  std::uint64_t model_seed_ = 0;

  train::TrainConfig train_;
  std::optional<double> sigma_lo_, sigma_hi_;

  degrade::Kind kind_ = degrade::Kind::awgn;
  std::optional<double> sigma_;
  std::optional<std::string> kernel_path_;
  std::size_t blur_size_ = 7;
  double blur_sigma_ = 1.6;
  std::size_t scale_ = 2;
  double mask_rate_ = 0.5;
  std::uint64_t degrade_seed_ = 0;

  double p_ = 1.0, planck_ = 1.0;
  dequip::ThresholdRule::Mode threshold_mode_ = dequip::ThresholdRule::Mode::hard;
  double threshold_ = std::numeric_limits<double>::infinity();

  std::size_t crop_border_ = 0;
};

bool parse_bool(std::string_view text);

}  // namespace quip::config
