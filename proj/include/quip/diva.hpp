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

// Unfolded quantum-interactive-patches networks.
//
// The per-patch pipeline, with parameters shared by all patches:
//
//   I     = ReLU(sum_b C1[b] * |J - J_b| / D_b^2 + c1)        interaction
//   z_0   = J
//   z_l   = ReLU(H_l z_{l-1} + c2_l),  l < d                     projection
//   alpha = H_d z_{d-1} + c2_d,  H_l = eta_l Lap + diag(J + I)
//   R     = ReLU(alpha)                                          thresholding
//   Jhat  = C3 R + c3                                            inverse projection
//   Jtil  = conv3(conv2(ReLU(conv1(Jhat))))                      neutralization (restore mode)
//
// The aggregated patch outputs are the predicted residual y - x; the
// restored image is clip(y - residual).

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quip/image.hpp"
#include "quip/patch.hpp"
#include "quip/tensor.hpp"

namespace quip::diva {

enum class Mode { denoise, restore };

enum class ProjectionKind {
  /// Data-dependent operator eta_l Lap + diag(J + I).
  hamiltonian,
  /// Ablation: structure-free s_l * z with one learned scalar per depth, the
  /// same parameter count as the Hamiltonian kernel.
  plain,
};

struct ModelConfig {
  patch::PatchGeometry geometry = patch::PatchGeometry::with_defaults(15, 35);
  std::size_t depth = 2;
  std::size_t features = 64;  // neutralization width F
  Mode mode = Mode::denoise;
  /// false: the interaction layer is removed (its output is fixed at 0 and
  /// its parameters are not trained).
  bool interaction = true;
  ProjectionKind projection = ProjectionKind::hamiltonian;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct InteractionLayerParams {
  tensor::Parameter weight;  // [max(kappa-1,1), n^2]
  tensor::Parameter bias;    // [n^2]
};

struct HamiltonianLayerParams {
  std::vector<tensor::Parameter> planck;  // d scalars (s_l for the plain kind)
  std::vector<tensor::Parameter> bias;    // d x [n^2]
};

struct InverseProjParams {
  tensor::Parameter weight;  // [n^2, n^2]
  tensor::Parameter bias;    // [n^2]
};

struct NeutralizationParams {
  tensor::Parameter conv1_weight;  // [F,1,3,3]
  tensor::Parameter conv1_bias;    // [F]
  tensor::Parameter conv2_weight;  // [F,F,3,3]
  tensor::Parameter conv2_bias;    // [F]
  tensor::Parameter conv3_weight;  // [1,F,3,3]
  tensor::Parameter conv3_bias;    // [1]
};

class DivaModel {
 public:
  DivaModel() = default;
  /// Every parameter zero.
  explicit DivaModel(ModelConfig config);
  /// Random initialization: interaction weights ~ U(0, 2/kappa), planck
  /// scalars ~ U(0, 0.1) (1 for the plain kind), dense and conv kernels ~
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0.
  static DivaModel initialized(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t group_size() const { return group_size_; }
  bool restores() const { return neutralization.has_value(); }

  InteractionLayerParams interaction;
  HamiltonianLayerParams projection;
  InverseProjParams inverse;
  std::optional<NeutralizationParams> neutralization;

  /// Parameters updated by training. Excludes the interaction layer when it
  /// is disabled. Pointers are invalidated by moving the model.
  std::vector<tensor::Parameter*> trainable();
  std::vector<const tensor::Parameter*> parameters() const;
  std::vector<tensor::Parameter*> parameters();
  tensor::Parameter* find(std::string_view name);
  std::size_t trainable_count() const;

 private:
  ModelConfig config_;
  std::size_t group_size_ = 1;
};

// ---------------------------------------------------------------------------
// Layers over batches of P patches ([P, n^2] tensors).

/// L_b^k = |J^k - J_b^k| / D_b^2 for every non-center member, [kappa-1, n^2].
/// A member at distance 0 contributes 0. For kappa == 1 a single zero row.
std::vector<double> interaction_features(const patch::LocalGroup& group, std::size_t pixels);

/// features: [P, kappa-1, n^2].
tensor::Var interaction_layer(tensor::Var features, tensor::Var weight, tensor::Var bias);

/// Neumann 5-point Laplacian of every patch.
tensor::Var patch_laplacian(tensor::Var patches, std::size_t patch_size);

/// interaction may be an invalid Var (interaction removed).
tensor::Var projection_layer(tensor::Var patches, tensor::Var interaction, std::span<const tensor::Var> planck,
                             std::span<const tensor::Var> bias, std::size_t patch_size,
                             ProjectionKind kind = ProjectionKind::hamiltonian);

tensor::Var threshold_layer(tensor::Var alpha);

tensor::Var inverse_projection_layer(tensor::Var coefficients, tensor::Var weight, tensor::Var bias);

struct NeutralizationVars {
  tensor::Var conv1_weight, conv1_bias, conv2_weight, conv2_bias, conv3_weight, conv3_bias;
};

tensor::Var neutralization_layer(tensor::Var patches, const NeutralizationVars& vars, std::size_t patch_size);

// ---------------------------------------------------------------------------
// Single-patch conveniences (no gradient).

std::vector<double> interaction_forward(const patch::LocalGroup& group, const InteractionLayerParams& params);
std::vector<double> projection_forward(std::span<const double> patch, std::span<const double> interaction,
                                       const HamiltonianLayerParams& params);
std::vector<double> threshold_forward(std::span<const double> alpha);
std::vector<double> inverse_projection_forward(std::span<const double> coefficients, const InverseProjParams& params);
std::vector<double> neutralization_forward(std::span<const double> patch, const NeutralizationParams& params);

// ---------------------------------------------------------------------------
// Whole-image forward.

/// Constant inputs of one forward pass over several images.
struct PatchBatch {
  std::size_t patch_count = 0;
  tensor::Tensor values;    // [P, n^2]
  tensor::Tensor features;  // [P, max(kappa-1,1), n^2]
  std::shared_ptr<const tensor::ScatterPlan> plan;
  std::vector<std::size_t> heights, widths;
  std::vector<std::size_t> pixel_offsets;  // start of each image in the flat output
  std::size_t total_pixels = 0;
};

PatchBatch make_batch(std::span<const Image> images, const patch::PatchGeometry& geometry);

/// Parameters bound to a tape; trainable ones as parameters, the rest as
/// constants.
struct BoundModel {
  tensor::Var interaction_weight, interaction_bias;
  std::vector<tensor::Var> planck, projection_bias;
  tensor::Var inverse_weight, inverse_bias;
  std::optional<NeutralizationVars> neutralization;
};

BoundModel bind(tensor::Tape& tape, DivaModel& model);
/// Every parameter as a constant (inference).
BoundModel bind_constants(tensor::Tape& tape, const DivaModel& model);

/// Concatenated residual images of the batch, flat [total_pixels].
tensor::Var residual_forward(tensor::Tape& tape, const BoundModel& bound, const ModelConfig& config,
                             const PatchBatch& batch);

struct ForwardResult {
  Image residual;
  Image restored;
};

ForwardResult model_forward(const DivaModel& model, const Image& image);

/// Mean over pixels of (predicted - (degraded - clean))^2, differentiable
/// in `predicted`.
tensor::Var residual_loss(tensor::Var predicted, tensor::Var degraded, tensor::Var clean);
double residual_loss(const Image& predicted, const Image& degraded, const Image& clean);

// ---------------------------------------------------------------------------
// Weight files ("DIVA1" container, see docs/model_format.md).

void save_model(const DivaModel& model, std::ostream& out);
void save_model(const DivaModel& model, const std::filesystem::path& path);
DivaModel load_model(std::istream& in);
DivaModel load_model(const std::filesystem::path& path);

}  // namespace quip::diva
