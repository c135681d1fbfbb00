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


// Supervised training of DIVA models on synthesized degradation pairs.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "quip/degrade.hpp"
#include "quip/diva.hpp"
#include "quip/image.hpp"

namespace quip::train {

/// Noise level on the 0-255 scale; lo < hi draws one sigma per sample
/// uniformly from [lo, hi] (blind mode).
struct SigmaRange {
  double lo = 25.0;
  double hi = 25.0;

  static SigmaRange fixed(double sigma) { return {sigma, sigma}; }
  bool blind() const { return lo != hi; }
  double midpoint() const { return 0.5 * (lo + hi); }
};

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 128;  // crops per optimizer step
  double lr_start = 1e-3;
  double lr_end = 1e-6;
  SigmaRange sigma;
  /// Degradation operator; its sigma and seed are replaced per sample.
  degrade::DegradationSpec degradation;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  /// Side of the square training crops; 0 selects default_crop().
  std::size_t crop_size = 0;
  std::size_t crops_per_image = 16;
  /// Best-validation weights are written here after every improvement.
  std::optional<std::filesystem::path> checkpoint;

  /// lr_start > lr_end > 0; a single epoch uses lr_start alone, which may be 0.
  void validate() const;
  /// W + n rounded up to a multiple of 12, so that every supported scale
  /// factor divides it.
  static std::size_t default_crop(const patch::PatchGeometry& geometry);
  std::size_t crop_for(const patch::PatchGeometry& geometry) const;
};

/// lr_start * (lr_end / lr_start)^(epoch / (epochs - 1)); lr_start when
/// epochs == 1.
double lr_at(std::size_t epoch, const TrainConfig& config);

struct SamplePair {
  Image clean;
  Image degraded;  // network input (upsampled observation for SR)
  Image residual;  // degraded - clean
  double sigma = 0.0;
};

/// Element 0..5 of {identity, rot90} x {identity, h-flip, v-flip}: the
/// rotation (counter-clockwise) is applied first.
Image augment(const Image& image, std::size_t transform);
inline constexpr std::size_t kTransformCount = 6;

struct Dataset {
  std::vector<Image> images;
  std::size_t crop_size = 0;
  std::vector<std::string> warnings;  // one per skipped image
};

/// Keeps the images that fit one crop. Throws ArgumentError when none does.
Dataset make_dataset(std::vector<Image> images, const TrainConfig& config, const patch::PatchGeometry& geometry);

/// Every pair of one epoch in shuffled order; a pure function of the
/// dataset, the config and the epoch index.
std::vector<SamplePair> epoch_pairs(const Dataset& dataset, const TrainConfig& config, std::size_t epoch);

/// Synthesizes the network input of `clean` for one sample.
SamplePair make_pair(const Image& clean, const degrade::DegradationSpec& spec, double sigma, std::uint64_t seed);

struct Split {
  std::vector<Image> train;
  std::vector<Image> validation;
};

/// Deterministic seeded split. With a positive fraction and at least two
/// images, at least one image goes to each side.
Split split_validation(std::vector<Image> images, double fraction, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean over batches
  double val_psnr = 0.0;    // NaN without a validation set
  double val_ssim = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<double> batch_losses;
  std::size_t best_epoch = 0;
  double best_psnr = 0.0;
  std::vector<std::string> warnings;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::ostream* log = nullptr;
};

/// Validation pairs: one per image, with a fixed seed per image and the
/// midpoint sigma.
std::vector<SamplePair> validation_pairs(const std::vector<Image>& images, const TrainConfig& config);

/// Mean PSNR/SSIM of the restored validation inputs.
struct Quality {
  double psnr = 0.0;
  double ssim = 0.0;
};
Quality evaluate(const diva::DivaModel& model, const std::vector<SamplePair>& pairs);

/// Mini-batch ADAM on the residual loss. With a validation set the model
/// ends with the best-validation weights; without one, with the last.
/// Throws NumericError naming the batch on a non-finite loss.
TrainReport train(diva::DivaModel& model, const std::vector<Image>& train_images,
                  const std::vector<Image>& validation_images, const TrainConfig& config, const TrainHooks& hooks = {});

/// Tab-separated: epoch, lr, train-loss, val-psnr, val-ssim, seconds.
void write_results(const TrainReport& report, std::ostream& out);
std::string format_record(const EpochRecord& record);

}  // namespace quip::train
