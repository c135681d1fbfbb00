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


#include "quip/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "quip/error.hpp"

namespace quip::config {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string strip_comment(std::string_view line) {
  const auto pos = line.find_first_of("#;");
  return std::string(pos == std::string_view::npos ? line : line.substr(0, pos));
}

}  // namespace

std::vector<Entry> parse(std::string_view text) {
  std::vector<Entry> out;
  std::string section;
  std::size_t number = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++number;
    const std::string stripped = strip_comment(raw);
    const std::string_view line = trim(stripped);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ArgumentError("config line " + std::to_string(number) + ": unterminated section");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) throw ArgumentError("config line " + std::to_string(number) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ArgumentError("config line " + std::to_string(number) + ": expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    if (key.empty()) throw ArgumentError("config line " + std::to_string(number) + ": missing key");
    std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    out.emplace_back(std::move(full), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

std::vector<Entry> parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ArgumentError& e) {
    throw ArgumentError(path + ": " + e.what());
  }
}

const std::vector<KeyInfo>& keys() {
  static const std::vector<KeyInfo> table = {
      {"model.patch_size", "15", "patch side n"},
      {"model.window", "35", "local window side W"},
      {"model.stride", "", "patch grid step (default max(1, n/2))"},
      {"model.neighbor_stride", "", "group member step inside the window (default max(1, n/2))"},
      {"model.max_group", "16", "cap on group size, center included"},
      {"model.depth", "2", "projection depth d"},
      {"model.features", "64", "neutralization width F"},
      {"model.mode", "denoise", "denoise | restore (restore adds the neutralization layer)"},
      {"model.interaction", "true", "true | false"},
      {"model.projection", "hamiltonian", "hamiltonian | plain"},
      {"model.seed", "0", "initialization seed"},
      {"train.epochs", "60", "number of epochs"},
      {"train.batch_size", "128", "crops per optimizer step"},
      {"train.lr_start", "1e-3", "first-epoch learning rate"},
      {"train.lr_end", "1e-6", "last-epoch learning rate"},
      {"train.sigma_lo", "", "blind mode: lowest training sigma"},
      {"train.sigma_hi", "", "blind mode: highest training sigma"},
      {"train.seed", "0", "data synthesis seed"},
      {"train.validation_fraction", "0.1", "share of training images held out for validation"},
      {"train.crop_size", "0", "training crop side (0: W + n rounded up to a multiple of 12)"},
      {"train.crops_per_image", "16", "crops drawn per image and epoch"},
      {"degradation.kind", "awgn", "awgn | gaussian-blur | motion-blur | bicubic-down | gaussian-down | random-mask"},
      {"degradation.sigma", "", "noise standard deviation on the 0-255 scale"},
      {"degradation.kernel", "", "blur kernel file (whitespace-separated rows)"},
      {"degradation.blur_size", "7", "gaussian kernel side when no kernel file is given"},
      {"degradation.blur_sigma", "1.6", "gaussian kernel width when no kernel file is given"},
      {"degradation.scale", "2", "downsampling factor 2, 3 or 4"},
      {"degradation.mask_rate", "0.5", "fraction of missing pixels"},
      {"degradation.seed", "0", "synthesis seed for restore/eval"},
      {"dequip.p", "1", "interaction proportionality constant"},
      {"dequip.planck", "1", "Laplacian weight"},
      {"dequip.threshold", "inf", "energy cutoff (inf keeps every mode)"},
      {"dequip.threshold_mode", "hard", "hard | soft"},
      {"eval.crop_border", "0", "pixels dropped on each side before scoring"},
  };
  return table;
}

bool parse_bool(std::string_view text) {
  std::string t(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ArgumentError("'" + std::string(text) + "' is not a boolean");
}

namespace {

std::string resolve(std::string_view key) {
  for (const KeyInfo& k : keys())
    if (k.key == key) return std::string(key);
  if (key.find('.') == std::string_view::npos) {
    std::string found;
    for (const KeyInfo& k : keys()) {
      const std::string_view name = k.key.substr(k.key.find('.') + 1);
      if (name != key) continue;
      if (!found.empty())
        throw ArgumentError("ambiguous key '" + std::string(key) + "' (" + found + ", " + std::string(k.key) + ")");
      found = std::string(k.key);
    }
    if (!found.empty()) return found;
  }
  throw ArgumentError("unknown config key '" + std::string(key) + "'");
}

double to_double(std::string_view key, std::string_view v) {
  std::string s(v);
  std::string lower = s;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "inf" || lower == "+inf" || lower == "infinity") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double d = std::stod(s, &used);
    if (used != s.size() || std::isnan(d)) throw std::invalid_argument(s);
    return d;
  } catch (const std::exception&) {
    throw ArgumentError(std::string(key) + ": '" + s + "' is not a number");
  }
}

std::uint64_t to_unsigned(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ArgumentError(std::string(key) + ": '" + std::string(v) + "' is not a nonnegative integer");
  return out;
}

}  // namespace

std::string RunConfig::get(std::string_view raw_key) const {
  const std::string key = resolve(trim(raw_key));
  if (const auto it = values_.find(key); it != values_.end()) return it->second;
  for (const KeyInfo& k : keys())
    if (k.key == key) return std::string(k.fallback);
  return {};
}

void RunConfig::set(std::string_view raw_key, std::string_view raw_value) {
  const std::string key = resolve(trim(raw_key));
  const std::string_view v = trim(raw_value);
  set_value(key, v);
  values_[key] = std::string(v);
}

void RunConfig::set_value(const std::string& key, std::string_view v) {
  const auto u = [&] { return static_cast<std::size_t>(to_unsigned(key, v)); };
  const auto d = [&] { return to_double(key, v); };
  if (key == "model.patch_size") patch_size_ = u();
  else if (key == "model.window") window_ = u();
  else if (key == "model.stride") stride_ = u();
  else if (key == "model.neighbor_stride") neighbor_stride_ = u();
  else if (key == "model.max_group") max_group_ = u();
  else if (key == "model.depth") depth_ = u();
  else if (key == "model.features") features_ = u();
  else if (key == "model.mode") {
    if (v == "denoise") mode_ = diva::Mode::denoise;
    else if (v == "restore") mode_ = diva::Mode::restore;
    else throw ArgumentError(key + ": expected denoise or restore, got '" + std::string(v) + "'");
  } else if (key == "model.interaction") interaction_ = parse_bool(v);
  else if (key == "model.projection") {
    if (v == "hamiltonian") projection_ = diva::ProjectionKind::hamiltonian;
    else if (v == "plain") projection_ = diva::ProjectionKind::plain;
    else throw ArgumentError(key + ": expected hamiltonian or plain, got '" + std::string(v) + "'");
  } else if (key == "model.seed") model_seed_ = to_unsigned(key, v);
  else if (key == "train.epochs") train_.epochs = u();
  else if (key == "train.batch_size") train_.batch_size = u();
  else if (key == "train.lr_start") train_.lr_start = d();
  else if (key == "train.lr_end") train_.lr_end = d();
  else if (key == "train.sigma_lo") sigma_lo_ = d();
  else if (key == "train.sigma_hi") sigma_hi_ = d();
  else if (key == "train.seed") train_.seed = to_unsigned(key, v);
  else if (key == "train.validation_fraction") train_.validation_fraction = d();
  else if (key == "train.crop_size") train_.crop_size = u();
  else if (key == "train.crops_per_image") train_.crops_per_image = u();
  else if (key == "degradation.kind") {
    try {
      kind_ = degrade::parse_kind(v);
    } catch (const Error& e) {
      throw ArgumentError(key + ": " + e.what());
    }
  } else if (key == "degradation.sigma") sigma_ = d();
  else if (key == "degradation.kernel") kernel_path_ = std::string(v);
  else if (key == "degradation.blur_size") blur_size_ = u();
  else if (key == "degradation.blur_sigma") blur_sigma_ = d();
  else if (key == "degradation.scale") scale_ = u();
  else if (key == "degradation.mask_rate") mask_rate_ = d();
  else if (key == "degradation.seed") degrade_seed_ = to_unsigned(key, v);
  else if (key == "dequip.p") p_ = d();
  else if (key == "dequip.planck") planck_ = d();
  else if (key == "dequip.threshold") threshold_ = d();
  else if (key == "dequip.threshold_mode") {
    if (v == "hard") threshold_mode_ = dequip::ThresholdRule::Mode::hard;
    else if (v == "soft") threshold_mode_ = dequip::ThresholdRule::Mode::soft;
    else throw ArgumentError(key + ": expected hard or soft, got '" + std::string(v) + "'");
  } else if (key == "eval.crop_border") crop_border_ = u();
}

void RunConfig::set_all(const std::vector<Entry>& entries) {
  for (const auto& [k, v] : entries) set(k, v);
}

patch::PatchGeometry RunConfig::geometry() const {
  patch::PatchGeometry g = patch::PatchGeometry::with_defaults(patch_size_, window_);
  if (stride_) g.stride = *stride_;
  if (neighbor_stride_) g.neighbor_stride = *neighbor_stride_;
  g.max_group = max_group_;
  g.validate();
  return g;
}

diva::ModelConfig RunConfig::model() const {
  diva::ModelConfig c;
  c.geometry = geometry();
  c.depth = depth_;
  c.features = features_;
  c.mode = mode_;
  c.interaction = interaction_;
  c.projection = projection_;
  c.validate();
  return c;
}

degrade::DegradationSpec RunConfig::degradation() const {
  degrade::DegradationSpec s;
  s.kind = kind_;
  s.sigma = sigma_.value_or(kind_ == degrade::Kind::awgn ? 25.0 : 0.0);
  s.scale = scale_;
  s.mask_rate = mask_rate_;
  s.seed = degrade_seed_;
  if (kernel_path_) s.kernel = degrade::load_kernel(*kernel_path_);
  else if (kind_ == degrade::Kind::gaussian_blur) s.kernel = degrade::gaussian_kernel(blur_size_, blur_sigma_);
  s.validate();
  return s;
}

train::TrainConfig RunConfig::training() const {
  train::TrainConfig t = train_;
  t.degradation = degradation();
  if (sigma_lo_.has_value() != sigma_hi_.has_value())
    throw ArgumentError("blind training needs both train.sigma_lo and train.sigma_hi");
  t.sigma = sigma_lo_ ? train::SigmaRange{*sigma_lo_, *sigma_hi_} : train::SigmaRange::fixed(t.degradation.sigma);
  t.validate();
  (void)t.crop_for(geometry());
  return t;
}

dequip::DequipParams RunConfig::dequip() const {
  dequip::DequipParams d;
  d.p = p_;
  d.planck = planck_;
  d.rule.mode = threshold_mode_;
  d.rule.cutoff = threshold_;
  if (!(p_ >= 0.0) || !std::isfinite(p_)) throw ArgumentError("dequip.p must be finite and nonnegative");
  if (!std::isfinite(planck_)) throw ArgumentError("dequip.planck must be finite");
  if (threshold_mode_ == dequip::ThresholdRule::Mode::soft && !(threshold_ > 0.0))
    throw ArgumentError("dequip.threshold must be positive in soft mode");
  return d;
}

void RunConfig::validate() const {
  (void)model();
  (void)training();
  (void)dequip();
}

std::vector<std::string> RunConfig::warnings() const {
  std::vector<std::string> out;
  if (planck_ < 0.0)
    out.push_back("negative dequip.planck " + std::to_string(planck_) +
                  ": the Laplacian term enters with its sign flipped");
  if (kernel_path_) {
    std::string w;
    try {
      (void)degrade::load_kernel(*kernel_path_, &w);
    } catch (const Error&) {
    }
    if (!w.empty()) out.push_back(*kernel_path_ + ": " + w);
  }
  return out;
}

}  // namespace quip::config
