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


#include "quip/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "quip/error.hpp"
#include "quip/metrics.hpp"

namespace quip::train {

using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

void TrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("epochs must be at least 1");
  if (batch_size < 1) throw ArgumentError("batch size must be at least 1");
  if (epochs == 1) {
    if (!(lr_start >= 0.0) || !std::isfinite(lr_start)) throw ArgumentError("learning rate must be >= 0");
  } else if (!(lr_start > lr_end && lr_end > 0.0) || !std::isfinite(lr_start)) {
    throw ArgumentError("learning rates must satisfy lr-start > lr-end > 0");
  }
  if (!(sigma.lo >= 0.0 && sigma.hi >= sigma.lo)) throw ArgumentError("sigma range must satisfy 0 <= lo <= hi");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ArgumentError("validation fraction must lie in [0, 1)");
  if (crops_per_image < 1) throw ArgumentError("crops per image must be at least 1");
  degradation.validate();
}

std::size_t TrainConfig::default_crop(const patch::PatchGeometry& geometry) {
  const std::size_t raw = geometry.window + geometry.patch_size;
  return (raw + 11) / 12 * 12;
}

std::size_t TrainConfig::crop_for(const patch::PatchGeometry& geometry) const {
  const std::size_t crop = crop_size == 0 ? default_crop(geometry) : crop_size;
  if (crop < geometry.window)
    throw ArgumentError("crop size " + std::to_string(crop) + " is smaller than the window " +
                        std::to_string(geometry.window));
  const bool resampled =
      degradation.kind == degrade::Kind::bicubic_down || degradation.kind == degrade::Kind::gaussian_down;
  if (resampled && crop % degradation.scale != 0)
    throw ArgumentError("crop size " + std::to_string(crop) + " is not a multiple of the scale factor " +
                        std::to_string(degradation.scale));
  return crop;
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  if (epoch >= config.epochs)
    throw ArgumentError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) + ")");
  if (config.epochs == 1 || epoch == 0) return config.lr_start;
  if (epoch + 1 == config.epochs) return config.lr_end;
  const double t = static_cast<double>(epoch) / static_cast<double>(config.epochs - 1);
  return config.lr_start * std::pow(config.lr_end / config.lr_start, t);
}

Image augment(const Image& image, std::size_t transform) {
  if (transform >= kTransformCount) throw ArgumentError("augment: transform index " + std::to_string(transform));
  Image x = image;
  if (transform / 3 == 1) {
    Image r(image.width, image.height);
    for (std::size_t i = 0; i < image.height; ++i)
      for (std::size_t j = 0; j < image.width; ++j) r.at(image.width - 1 - j, i) = image.at(i, j);
    x = std::move(r);
  }
  const std::size_t flip = transform % 3;
  if (flip == 0) return x;
  Image out(x.height, x.width);
  for (std::size_t i = 0; i < x.height; ++i)
    for (std::size_t j = 0; j < x.width; ++j)
      out.at(i, j) = flip == 1 ? x.at(i, x.width - 1 - j) : x.at(x.height - 1 - i, j);
  return out;
}

Dataset make_dataset(std::vector<Image> images, const TrainConfig& config, const patch::PatchGeometry& geometry) {
  if (images.empty()) throw ArgumentError("make_dataset: no training images");
  Dataset data;
  data.crop_size = config.crop_for(geometry);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height < data.crop_size || images[i].width < data.crop_size) {
      data.warnings.push_back("skipping training image " + std::to_string(i) + " (" +
                              std::to_string(images[i].height) + "x" + std::to_string(images[i].width) +
                              ") smaller than the " + std::to_string(data.crop_size) + "-pixel crop");
      continue;
    }
    data.images.push_back(std::move(images[i]));
  }
  if (data.images.empty()) throw ArgumentError("make_dataset: every training image is smaller than the crop");
  return data;
}

SamplePair make_pair(const Image& clean, const degrade::DegradationSpec& spec, double sigma, std::uint64_t seed) {
  degrade::DegradationSpec s = spec;
  s.sigma = sigma;
  s.seed = seed;
  SamplePair pair;
  pair.sigma = sigma;
  pair.clean = clean;
  pair.degraded = degrade::restoration_input(s, clean);
  pair.residual = Image(clean.height, clean.width);
  for (std::size_t i = 0; i < clean.size(); ++i) pair.residual.pixels[i] = pair.degraded.pixels[i] - clean.pixels[i];
  return pair;
}

namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

Image crop(const Image& image, std::size_t row, std::size_t col, std::size_t side) {
  Image out(side, side);
  for (std::size_t r = 0; r < side; ++r)
    std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>((row + r) * image.width + col), side,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(r * side));
  return out;
}

}  // namespace

std::vector<SamplePair> epoch_pairs(const Dataset& dataset, const TrainConfig& config, std::size_t epoch) {
  std::mt19937_64 rng = epoch_rng(config.seed, epoch, 1);
  std::uniform_real_distribution<double> sigma_dist(config.sigma.lo, config.sigma.hi);
  std::uniform_int_distribution<std::size_t> transform_dist(0, kTransformCount - 1);
  const std::size_t side = dataset.crop_size;
  std::vector<SamplePair> pairs;
  pairs.reserve(dataset.images.size() * config.crops_per_image);
  for (const Image& image : dataset.images) {
    std::uniform_int_distribution<std::size_t> row_dist(0, image.height - side);
    std::uniform_int_distribution<std::size_t> col_dist(0, image.width - side);
    for (std::size_t k = 0; k < config.crops_per_image; ++k) {
      const std::size_t r = row_dist(rng);
      const std::size_t c = col_dist(rng);
      const std::size_t t = transform_dist(rng);
      const double sigma = config.sigma.blind() ? sigma_dist(rng) : config.sigma.lo;
      const std::uint64_t seed = rng();
      pairs.push_back(make_pair(augment(crop(image, r, c, side), t), config.degradation, sigma, seed));
    }
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);
  return pairs;
}

Split split_validation(std::vector<Image> images, double fraction, std::uint64_t seed) {
  Split split;
  std::size_t count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(images.size())));
  if (fraction > 0.0 && images.size() >= 2) count = std::clamp<std::size_t>(count, 1, images.size() - 1);
  else if (images.size() < 2) count = 0;
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng = epoch_rng(seed, 0, 2);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> held(images.size(), false);
  for (std::size_t i = 0; i < count; ++i) held[order[i]] = true;
  for (std::size_t i = 0; i < images.size(); ++i)
    (held[i] ? split.validation : split.train).push_back(std::move(images[i]));
  return split;
}

std::vector<SamplePair> validation_pairs(const std::vector<Image>& images, const TrainConfig& config) {
  std::vector<SamplePair> pairs;
  std::mt19937_64 rng = epoch_rng(config.seed, 0, 3);
  for (const Image& image : images) pairs.push_back(make_pair(image, config.degradation, config.sigma.midpoint(), rng()));
  return pairs;
}

Quality evaluate(const diva::DivaModel& model, const std::vector<SamplePair>& pairs) {
  Quality q;
  if (pairs.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  for (const SamplePair& pair : pairs) {
    const diva::ForwardResult out = diva::model_forward(model, pair.degraded);
    const metrics::QualityScore s = metrics::score(pair.clean, out.restored);
    q.psnr += s.psnr;
    q.ssim += s.ssim;
  }
  q.psnr /= static_cast<double>(pairs.size());
  q.ssim /= static_cast<double>(pairs.size());
  return q;
}

namespace {

Tensor flatten(const std::vector<const Image*>& images) {
  std::size_t total = 0;
  for (const Image* img : images) total += img->size();
  std::vector<double> values;
  values.reserve(total);
  for (const Image* img : images) values.insert(values.end(), img->pixels.begin(), img->pixels.end());
  return Tensor({total}, std::move(values));
}

void say(const TrainHooks& hooks, const std::string& line) {
  if (hooks.log) *hooks.log << line << '\n' << std::flush;
}

}  // namespace

TrainReport train(diva::DivaModel& model, const std::vector<Image>& train_images,
                  const std::vector<Image>& validation_images, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const patch::PatchGeometry& geometry = model.config().geometry;
  const Dataset dataset = make_dataset(train_images, config, geometry);
  TrainReport report;
  report.warnings = dataset.warnings;
  for (const std::string& w : dataset.warnings) say(hooks, "warning: " + w);
  const std::vector<SamplePair> validation = validation_pairs(validation_images, config);

  tensor::Adam adam(model.trainable());
  adam.zero_grad();
  std::optional<diva::DivaModel> best;
  report.best_psnr = -std::numeric_limits<double>::infinity();
  std::size_t batch_index = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, config);
    const std::vector<SamplePair> pairs = epoch_pairs(dataset, config, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < pairs.size(); first += config.batch_size, ++batch_index) {
      const std::size_t last = std::min(pairs.size(), first + config.batch_size);
      std::vector<Image> inputs;
      std::vector<const Image*> degraded, clean;
      for (std::size_t i = first; i < last; ++i) {
        inputs.push_back(pairs[i].degraded);
        degraded.push_back(&pairs[i].degraded);
        clean.push_back(&pairs[i].clean);
      }
      const diva::PatchBatch batch = diva::make_batch(inputs, geometry);
      Tape tape;
      const diva::BoundModel bound = diva::bind(tape, model);
      const Var predicted = diva::residual_forward(tape, bound, model.config(), batch);
      const Var loss =
          diva::residual_loss(predicted, tape.constant(flatten(degraded)), tape.constant(flatten(clean)));
      const double value = loss.value().item();
      if (!std::isfinite(value))
        throw NumericError("non-finite training loss at batch " + std::to_string(batch_index) + " (epoch " +
                           std::to_string(epoch + 1) + ")");
      tape.backward(loss);
      adam.step(lr);
      adam.zero_grad();
      report.batch_losses.push_back(value);
      loss_sum += value;
      ++batches;
    }

    EpochRecord record;
    record.epoch = epoch + 1;
    record.lr = lr;
    record.train_loss = loss_sum / static_cast<double>(batches);
    const Quality q = evaluate(model, validation);
    record.val_psnr = q.psnr;
    record.val_ssim = q.ssim;
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.epochs.push_back(record);

    const bool improved = validation.empty() || q.psnr > report.best_psnr;
    if (improved) {
      report.best_epoch = record.epoch;
      report.best_psnr = q.psnr;
      if (!validation.empty()) best = model;
      if (config.checkpoint) diva::save_model(model, *config.checkpoint);
    }
    say(hooks, format_record(record) + (improved && !validation.empty() ? "  *" : ""));
    if (hooks.on_epoch) hooks.on_epoch(record);
  }
  if (best) {
    const diva::DivaModel& b = *best;
    auto dst = model.parameters();
    auto src = b.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
  }
  return report;
}

std::string format_record(const EpochRecord& r) {
  char line[256];
  std::snprintf(line, sizeof line, "epoch %3zu  lr %.3e  loss %.6e  val %s  %.1fs", r.epoch, r.lr, r.train_loss,
                std::isnan(r.val_psnr) ? "n/a" : metrics::format_score({r.val_psnr, r.val_ssim}).c_str(), r.seconds);
  return line;
}

void write_results(const TrainReport& report, std::ostream& out) {
  out << "epoch\tlr\ttrain_loss\tval_psnr\tval_ssim\tseconds\n";
  char line[256];
  for (const EpochRecord& r : report.epochs) {
    char psnr[32];
    if (std::isinf(r.val_psnr))
      std::snprintf(psnr, sizeof psnr, "%s", r.val_psnr > 0 ? "inf" : "-inf");
    else
      std::snprintf(psnr, sizeof psnr, "%.6f", r.val_psnr);
    std::snprintf(line, sizeof line, "%zu\t%.9e\t%.12e\t%s\t%.9f\t%.3f\n", r.epoch, r.lr, r.train_loss, psnr,
                  r.val_ssim, r.seconds);
    out << line;
  }
}

}  // namespace quip::train
