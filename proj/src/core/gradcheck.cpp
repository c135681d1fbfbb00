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


#include "quip/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "quip/diva.hpp"

namespace quip::gradcheck {

using tensor::Tape;
using tensor::Tensor;

double Report::worst() const {
  double w = 0.0;
  for (const GroupError& g : groups) w = std::max(w, g.max_relative_error);
  return w;
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

namespace {

double loss_value(diva::DivaModel& model, const diva::PatchBatch& batch, const Image& degraded, const Image& clean,
                  bool backward) {
  Tape tape;
  const diva::BoundModel bound = diva::bind(tape, model);
  const auto predicted = diva::residual_forward(tape, bound, model.config(), batch);
  const auto loss = diva::residual_loss(predicted, tape.constant(Tensor({degraded.size()}, degraded.pixels)),
                                        tape.constant(Tensor({clean.size()}, clean.pixels)));
  const double value = loss.value().item();
  if (backward) tape.backward(loss);
  return value;
}

}  // namespace

Report run(const Options& options) {
  diva::ModelConfig config;
  config.geometry = patch::PatchGeometry::with_defaults(options.patch_size, options.window);
  config.geometry.max_group = options.max_group;
  config.depth = options.depth;
  config.features = options.features;
  config.mode = options.neutralization ? diva::Mode::restore : diva::Mode::denoise;
  diva::DivaModel model = diva::DivaModel::initialized(config, options.seed);

  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.1);
  // Nonzero biases and planck scalars so that every term carries gradient.
  for (tensor::Parameter* p : model.parameters())
    if (p->value.rank() == 1)
      for (double& v : p->value.data()) v += 0.1 * (unit(rng) - 0.5);

  const std::size_t s = options.image_size;
  Image clean(s, s), degraded(s, s);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    clean.pixels[i] = unit(rng);
    degraded.pixels[i] = std::clamp(clean.pixels[i] + noise(rng), 0.0, 1.0);
  }
  const diva::PatchBatch batch = diva::make_batch(std::span<const Image>(&degraded, 1), config.geometry);

  for (tensor::Parameter* p : model.parameters()) p->zero_grad();
  loss_value(model, batch, degraded, clean, true);

  Report report;
  const double h = options.step;
  for (tensor::Parameter* p : model.parameters()) {
    GroupError group{p->name, p->size(), 0.0};
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = loss_value(model, batch, degraded, clean, false);
      p->value[i] = saved - h;
      const double down = loss_value(model, batch, degraded, clean, false);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      group.max_relative_error = std::max(group.max_relative_error, relative_error(p->grad[i], numeric));
    }
    report.groups.push_back(group);
  }
  return report;
}

}  // namespace quip::gradcheck
