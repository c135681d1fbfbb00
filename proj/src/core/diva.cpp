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

#include "quip/diva.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>

#include "quip/error.hpp"

namespace quip::diva {

using tensor::Parameter;
using tensor::Shape;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

void ModelConfig::validate() const {
  geometry.validate();
  if (depth < 1) throw ArgumentError("projection depth must be at least 1");
  if (mode == Mode::restore && features < 1) throw ArgumentError("neutralization width must be at least 1");
}

namespace {

std::size_t feature_rows(std::size_t group_size) { return std::max<std::size_t>(group_size, 2) - 1; }

}  // namespace

DivaModel::DivaModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  group_size_ = config_.geometry.group_size();
  const std::size_t m = config_.geometry.pixels();
  interaction.weight = Parameter("interaction.weight", Tensor({feature_rows(group_size_), m}));
  interaction.bias = Parameter("interaction.bias", Tensor({m}));
  for (std::size_t l = 0; l < config_.depth; ++l) {
    projection.planck.emplace_back("projection." + std::to_string(l) + ".planck", Tensor({1}));
    projection.bias.emplace_back("projection." + std::to_string(l) + ".bias", Tensor({m}));
  }
  inverse.weight = Parameter("inverse.weight", Tensor({m, m}));
  inverse.bias = Parameter("inverse.bias", Tensor({m}));
  if (config_.mode == Mode::restore) {
    const std::size_t f = config_.features;
    NeutralizationParams p;
    p.conv1_weight = Parameter("neutralization.conv1.weight", Tensor({f, 1, 3, 3}));
    p.conv1_bias = Parameter("neutralization.conv1.bias", Tensor({f}));
    p.conv2_weight = Parameter("neutralization.conv2.weight", Tensor({f, f, 3, 3}));
    p.conv2_bias = Parameter("neutralization.conv2.bias", Tensor({f}));
    p.conv3_weight = Parameter("neutralization.conv3.weight", Tensor({1, f, 3, 3}));
    p.conv3_bias = Parameter("neutralization.conv3.bias", Tensor({1}));
    neutralization = std::move(p);
  }
}

DivaModel DivaModel::initialized(ModelConfig config, std::uint64_t seed) {
  DivaModel model(std::move(config));
  std::mt19937_64 rng(seed);
  const auto uniform = [&rng](Parameter& p, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : p.value.data()) v = dist(rng);
  };
  const auto fan_in = [&uniform](Parameter& p, std::size_t fan) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan));
    uniform(p, -bound, bound);
  };
  const std::size_t m = model.config_.geometry.pixels();
  uniform(model.interaction.weight, 0.0, 2.0 / static_cast<double>(model.group_size_));
  for (auto& p : model.projection.planck) {
    if (model.config_.projection == ProjectionKind::hamiltonian)
      uniform(p, 0.0, 0.1);
    else
      p.value.fill(1.0);
  }
  fan_in(model.inverse.weight, m);
  if (model.neutralization) {
    const std::size_t f = model.config_.features;
    fan_in(model.neutralization->conv1_weight, 9);
    fan_in(model.neutralization->conv2_weight, 9 * f);
    fan_in(model.neutralization->conv3_weight, 9 * f);
  }
  return model;
}

std::vector<Parameter*> DivaModel::parameters() {
  std::vector<Parameter*> out{&interaction.weight, &interaction.bias};
  for (std::size_t l = 0; l < projection.planck.size(); ++l) {
    out.push_back(&projection.planck[l]);
    out.push_back(&projection.bias[l]);
  }
  out.push_back(&inverse.weight);
  out.push_back(&inverse.bias);
  if (neutralization) {
    auto& n = *neutralization;
    for (Parameter* p : {&n.conv1_weight, &n.conv1_bias, &n.conv2_weight, &n.conv2_bias, &n.conv3_weight,
                         &n.conv3_bias})
      out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> DivaModel::parameters() const {
  auto mut = const_cast<DivaModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<Parameter*> DivaModel::trainable() {
  auto all = parameters();
  if (config_.interaction) return all;
  std::erase_if(all, [this](Parameter* p) { return p == &interaction.weight || p == &interaction.bias; });
  return all;
}

Parameter* DivaModel::find(std::string_view name) {
  for (Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

std::size_t DivaModel::trainable_count() const {
  std::size_t total = 0;
  for (Parameter* p : const_cast<DivaModel*>(this)->trainable()) total += p->size();
  return total;
}

// ---------------------------------------------------------------------------
// Layers

std::vector<double> interaction_features(const patch::LocalGroup& group, std::size_t m) {
  const std::size_t rows = feature_rows(group.size());
  std::vector<double> out(rows * m, 0.0);
  const auto center = group.member(0, m);
  for (std::size_t b = 1; b < group.size(); ++b) {
    const double d = group.distances[b];
    if (!(d > 0.0)) continue;
    const double d2 = d * d;
    const auto other = group.member(b, m);
    for (std::size_t k = 0; k < m; ++k) out[(b - 1) * m + k] = std::abs(center[k] - other[k]) / d2;
  }
  return out;
}

Var interaction_layer(Var features, Var weight, Var bias) {
  return tensor::relu(tensor::add(tensor::sum_axis(tensor::mul(features, weight), 1), bias));
}

namespace {

Tensor laplacian_kernel() {
  return Tensor({1, 1, 3, 3}, {0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0});
}

}  // namespace

Var patch_laplacian(Var patches, std::size_t n) {
  Tape& tape = *patches.tape();
  const std::size_t count = patches.shape().at(0);
  const Var grid = tensor::reshape(patches, {count, 1, n, n});
  // Replicate padding makes a missing neighbor equal to the pixel itself,
  // which is the mirrored (Neumann) boundary of the stencil.
  const Var lap = tensor::conv2d(grid, tape.constant(laplacian_kernel()), Var{}, tensor::Padding::replicate);
  return tensor::reshape(lap, {count, n * n});
}

Var projection_layer(Var patches, Var interaction, std::span<const Var> planck, std::span<const Var> bias,
                     std::size_t n, ProjectionKind kind) {
  if (planck.empty() || planck.size() != bias.size())
    throw ArgumentError("projection: need one planck scalar and one bias per depth");
  const std::size_t depth = planck.size();
  Var potential;
  if (kind == ProjectionKind::hamiltonian)
    potential = interaction.valid() ? tensor::add(patches, interaction) : patches;
  Var z = patches;
  for (std::size_t l = 0; l < depth; ++l) {
    Var hz;
    if (kind == ProjectionKind::hamiltonian)
      hz = tensor::add(tensor::scale(patch_laplacian(z, n), planck[l]), tensor::mul(potential, z));
    else
      hz = tensor::scale(z, planck[l]);
    hz = tensor::add(hz, bias[l]);
    z = l + 1 < depth ? tensor::relu(hz) : hz;
  }
  return z;
}

Var threshold_layer(Var alpha) { return tensor::relu(alpha); }

Var inverse_projection_layer(Var coefficients, Var weight, Var bias) {
  return tensor::add(tensor::matmul(coefficients, tensor::transpose(weight)), bias);
}

Var neutralization_layer(Var patches, const NeutralizationVars& v, std::size_t n) {
  const std::size_t count = patches.shape().at(0);
  Var x = tensor::reshape(patches, {count, 1, n, n});
  x = tensor::relu(tensor::conv2d(x, v.conv1_weight, v.conv1_bias));
  x = tensor::conv2d(x, v.conv2_weight, v.conv2_bias);
  x = tensor::conv2d(x, v.conv3_weight, v.conv3_bias);
  return tensor::reshape(x, {count, n * n});
}

// ---------------------------------------------------------------------------
// Single-patch conveniences

namespace {

std::size_t side_of(std::size_t m) {
  const auto n = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(m))));
  if (n * n != m) throw ShapeError("patch of " + std::to_string(m) + " values is not square");
  return n;
}

std::vector<double> to_vector(const Var& v) { return v.value().values(); }

NeutralizationVars constants(Tape& tape, const NeutralizationParams& p) {
  return {tape.constant(p.conv1_weight.value), tape.constant(p.conv1_bias.value),
          tape.constant(p.conv2_weight.value), tape.constant(p.conv2_bias.value),
          tape.constant(p.conv3_weight.value), tape.constant(p.conv3_bias.value)};
}

}  // namespace

std::vector<double> interaction_forward(const patch::LocalGroup& group, const InteractionLayerParams& params) {
  const std::size_t m = params.bias.size();
  const std::size_t rows = feature_rows(group.size());
  if (params.weight.value.shape() != Shape{rows, m})
    throw ShapeError("interaction: weights " + tensor::to_string(params.weight.value.shape()) + " do not match a group of " +
                     std::to_string(group.size()) + " members with " + std::to_string(m) + " pixels");
  Tape tape;
  const Var features = tape.constant(Tensor({1, rows, m}, interaction_features(group, m)));
  const Var out = interaction_layer(features, tape.constant(params.weight.value), tape.constant(params.bias.value));
  return to_vector(out);
}

std::vector<double> projection_forward(std::span<const double> patch, std::span<const double> interaction,
                                       const HamiltonianLayerParams& params) {
  if (patch.size() != interaction.size()) throw ShapeError("projection: patch and interaction sizes differ");
  const std::size_t m = patch.size();
  Tape tape;
  std::vector<Var> planck, bias;
  for (std::size_t l = 0; l < params.planck.size(); ++l) {
    planck.push_back(tape.constant(params.planck[l].value));
    bias.push_back(tape.constant(params.bias[l].value));
  }
  const Var j = tape.constant(Tensor({1, m}, {patch.begin(), patch.end()}));
  const Var i = tape.constant(Tensor({1, m}, {interaction.begin(), interaction.end()}));
  return to_vector(projection_layer(j, i, planck, bias, side_of(m)));
}

std::vector<double> threshold_forward(std::span<const double> alpha) {
  std::vector<double> out(alpha.begin(), alpha.end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return out;
}

std::vector<double> inverse_projection_forward(std::span<const double> coefficients, const InverseProjParams& params) {
  const std::size_t m = coefficients.size();
  Tape tape;
  const Var r = tape.constant(Tensor({1, m}, {coefficients.begin(), coefficients.end()}));
  return to_vector(
      inverse_projection_layer(r, tape.constant(params.weight.value), tape.constant(params.bias.value)));
}

std::vector<double> neutralization_forward(std::span<const double> patch, const NeutralizationParams& params) {
  const std::size_t m = patch.size();
  Tape tape;
  const Var j = tape.constant(Tensor({1, m}, {patch.begin(), patch.end()}));
  return to_vector(neutralization_layer(j, constants(tape, params), side_of(m)));
}

// ---------------------------------------------------------------------------
// Whole-image forward

PatchBatch make_batch(std::span<const Image> images, const patch::PatchGeometry& geometry) {
  if (images.empty()) throw ArgumentError("make_batch: no images");
  const std::size_t n = geometry.patch_size;
  const std::size_t m = geometry.pixels();
  const auto offsets = patch::group_offsets(geometry);
  const std::size_t rows = feature_rows(offsets.size());

  PatchBatch batch;
  std::vector<std::vector<patch::Position>> anchors;
  for (const Image& img : images) {
    if (img.height < n || img.width < n)
      throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                       " is smaller than one patch");
    const auto rs = patch::grid_coordinates(img.height, n, geometry.stride);
    const auto cs = patch::grid_coordinates(img.width, n, geometry.stride);
    auto& a = anchors.emplace_back();
    for (auto r : rs)
      for (auto c : cs) a.push_back({r, c});
    batch.patch_count += a.size();
    batch.heights.push_back(img.height);
    batch.widths.push_back(img.width);
    batch.pixel_offsets.push_back(batch.total_pixels);
    batch.total_pixels += img.size();
  }

  std::vector<double> values(batch.patch_count * m);
  std::vector<double> features(batch.patch_count * rows * m, 0.0);
  std::vector<std::uint32_t> index(batch.patch_count * m);
  std::vector<double> member(m);
  std::size_t p = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    for (const patch::Position a : anchors[i]) {
      double* center = values.data() + p * m;
      patch::read_patch(img, a, n, std::span<double>(center, m));
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
          index[p * m + r * n + c] =
              static_cast<std::uint32_t>(batch.pixel_offsets[i] + (a.row + r) * img.width + a.col + c);
      for (std::size_t j = 1; j < offsets.size(); ++j) {
        const patch::Position b = patch::member_position(a, offsets[j], img.height, img.width, n);
        const double dr = static_cast<double>(b.row) - static_cast<double>(a.row);
        const double dc = static_cast<double>(b.col) - static_cast<double>(a.col);
        const double d = std::hypot(dr, dc);
        if (d == 0.0) continue;
        const double d2 = d * d;
        patch::read_patch(img, b, n, member);
        double* f = features.data() + (p * rows + (j - 1)) * m;
        for (std::size_t k = 0; k < m; ++k) f[k] = std::abs(center[k] - member[k]) / d2;
      }
      ++p;
    }
  }
  batch.values = Tensor({batch.patch_count, m}, std::move(values));
  batch.features = Tensor({batch.patch_count, rows, m}, std::move(features));
  batch.plan = std::make_shared<tensor::ScatterPlan>(tensor::ScatterPlan::build(std::move(index), batch.total_pixels));
  return batch;
}

BoundModel bind(Tape& tape, DivaModel& model) {
  BoundModel b;
  if (model.config().interaction) {
    b.interaction_weight = tape.parameter(model.interaction.weight);
    b.interaction_bias = tape.parameter(model.interaction.bias);
  }
  for (std::size_t l = 0; l < model.projection.planck.size(); ++l) {
    b.planck.push_back(tape.parameter(model.projection.planck[l]));
    b.projection_bias.push_back(tape.parameter(model.projection.bias[l]));
  }
  b.inverse_weight = tape.parameter(model.inverse.weight);
  b.inverse_bias = tape.parameter(model.inverse.bias);
  if (model.neutralization) {
    auto& n = *model.neutralization;
    b.neutralization = NeutralizationVars{tape.parameter(n.conv1_weight), tape.parameter(n.conv1_bias),
                                          tape.parameter(n.conv2_weight), tape.parameter(n.conv2_bias),
                                          tape.parameter(n.conv3_weight), tape.parameter(n.conv3_bias)};
  }
  return b;
}

BoundModel bind_constants(Tape& tape, const DivaModel& model) {
  BoundModel b;
  if (model.config().interaction) {
    b.interaction_weight = tape.constant(model.interaction.weight.value);
    b.interaction_bias = tape.constant(model.interaction.bias.value);
  }
  for (std::size_t l = 0; l < model.projection.planck.size(); ++l) {
    b.planck.push_back(tape.constant(model.projection.planck[l].value));
    b.projection_bias.push_back(tape.constant(model.projection.bias[l].value));
  }
  b.inverse_weight = tape.constant(model.inverse.weight.value);
  b.inverse_bias = tape.constant(model.inverse.bias.value);
  if (model.neutralization) b.neutralization = constants(tape, *model.neutralization);
  return b;
}

Var residual_forward(Tape& tape, const BoundModel& bound, const ModelConfig& config, const PatchBatch& batch) {
  const std::size_t n = config.geometry.patch_size;
  const Var patches = tape.constant(batch.values);
  Var interaction;
  if (bound.interaction_weight.valid())
    interaction =
        interaction_layer(tape.constant(batch.features), bound.interaction_weight, bound.interaction_bias);
  const Var alpha = projection_layer(patches, interaction, bound.planck, bound.projection_bias, n, config.projection);
  Var out = inverse_projection_layer(threshold_layer(alpha), bound.inverse_weight, bound.inverse_bias);
  if (bound.neutralization) out = neutralization_layer(out, *bound.neutralization, n);
  return tensor::scatter_mean(out, batch.plan);
}

ForwardResult model_forward(const DivaModel& model, const Image& image) {
  const Image* one = &image;
  const PatchBatch batch = make_batch(std::span<const Image>(one, 1), model.config().geometry);
  Tape tape;
  const BoundModel bound = bind_constants(tape, model);
  const Var residual = residual_forward(tape, bound, model.config(), batch);
  ForwardResult result;
  result.residual = Image(image.height, image.width, residual.value().values());
  result.restored = Image(image.height, image.width);
  for (std::size_t i = 0; i < image.size(); ++i)
    result.restored.pixels[i] = std::clamp(image.pixels[i] - result.residual.pixels[i], 0.0, 1.0);
  return result;
}

Var residual_loss(Var predicted, Var degraded, Var clean) {
  if (predicted.shape() != degraded.shape() || predicted.shape() != clean.shape())
    throw ShapeError("residual_loss: shapes " + tensor::to_string(predicted.shape()) + ", " +
                     tensor::to_string(degraded.shape()) + ", " + tensor::to_string(clean.shape()) + " differ");
  return tensor::mean(tensor::square(tensor::sub(predicted, tensor::sub(degraded, clean))));
}

double residual_loss(const Image& predicted, const Image& degraded, const Image& clean) {
  require_same_shape(predicted, degraded, "residual_loss");
  require_same_shape(predicted, clean, "residual_loss");
  Tape tape;
  const auto as_var = [&tape](const Image& img) { return tape.constant(Tensor({img.size()}, img.pixels)); };
  return residual_loss(as_var(predicted), as_var(degraded), as_var(clean)).value().item();
}

// ---------------------------------------------------------------------------
// Weight files

namespace {

constexpr char kMagic[5] = {'D', 'I', 'V', 'A', '1'};
constexpr std::uint8_t kRevision = 1;

template <typename T>
void put(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw FormatError(std::string("not a DIVA1 model: truncated at ") + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

std::uint32_t u32(std::size_t v) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw ArgumentError("model field exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void save_model(const DivaModel& model, std::ostream& out) {
  const ModelConfig& c = model.config();
  out.write(kMagic, sizeof kMagic);
  put<std::uint8_t>(out, kRevision);
  for (std::size_t v : {c.geometry.patch_size, c.geometry.window, c.geometry.stride, c.geometry.neighbor_stride,
                        c.geometry.max_group, c.depth, c.features})
    put(out, u32(v));
  put(out, u32(c.mode == Mode::restore ? 1 : 0));
  put(out, u32(c.interaction ? 1 : 0));
  put(out, u32(c.projection == ProjectionKind::plain ? 1 : 0));
  const auto params = model.parameters();
  put(out, u32(params.size()));
  for (const Parameter* p : params) {
    put(out, u32(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put(out, u32(p->value.rank()));
    for (std::size_t d : p->value.shape()) put<std::uint64_t>(out, d);
    for (double v : p->value.data()) put(out, v);
  }
  if (!out) throw IoError("failed to write model");
}

void save_model(const DivaModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  save_model(model, out);
}

DivaModel load_model(std::istream& in) {
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic)))
    throw FormatError("not a DIVA1 model");
  const auto revision = get<std::uint8_t>(in, "revision");
  if (revision != kRevision)
    throw FormatError("not a DIVA1 model: unsupported revision " + std::to_string(revision));
  ModelConfig c;
  c.geometry.patch_size = get<std::uint32_t>(in, "patch_size");
  c.geometry.window = get<std::uint32_t>(in, "window");
  c.geometry.stride = get<std::uint32_t>(in, "stride");
  c.geometry.neighbor_stride = get<std::uint32_t>(in, "neighbor_stride");
  c.geometry.max_group = get<std::uint32_t>(in, "max_group");
  c.depth = get<std::uint32_t>(in, "depth");
  c.features = get<std::uint32_t>(in, "features");
  const auto flag = [&in](const char* what) {
    const auto v = get<std::uint32_t>(in, what);
    if (v > 1) throw FormatError(std::string("not a DIVA1 model: bad ") + what + " flag " + std::to_string(v));
    return v == 1;
  };
  c.mode = flag("mode") ? Mode::restore : Mode::denoise;
  c.interaction = flag("interaction");
  c.projection = flag("projection") ? ProjectionKind::plain : ProjectionKind::hamiltonian;
  DivaModel model = [&c] {
    try {
      return DivaModel(c);
    } catch (const ArgumentError& e) {
      throw FormatError(std::string("not a DIVA1 model: ") + e.what());
    }
  }();
  auto params = model.parameters();
  const auto count = get<std::uint32_t>(in, "parameter count");
  if (count != params.size())
    throw FormatError("not a DIVA1 model: " + std::to_string(count) + " parameters, expected " +
                      std::to_string(params.size()));
  for (Parameter* p : params) {
    const auto len = get<std::uint32_t>(in, "name length");
    if (len > 256) throw FormatError("not a DIVA1 model: name length " + std::to_string(len));
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("not a DIVA1 model: truncated name");
    if (name != p->name) throw FormatError("not a DIVA1 model: found " + name + ", expected " + p->name);
    const auto rank = get<std::uint32_t>(in, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, "dimension"));
    if (shape != p->value.shape())
      throw FormatError("not a DIVA1 model: " + name + " has shape " + tensor::to_string(shape) + ", expected " +
                        tensor::to_string(p->value.shape()));
    for (double& v : p->value.data()) v = get<double>(in, name.c_str());
  }
  return model;
}

DivaModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return load_model(in);
}

}  // namespace quip::diva
