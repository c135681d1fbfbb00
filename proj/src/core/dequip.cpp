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

#include "quip/dequip.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "quip/error.hpp"

namespace quip::dequip {

InteractionField baseline_interaction(const patch::LocalGroup& group, std::size_t m, double p) {
  if (group.size() < 1) throw ArgumentError("interaction: empty local group");
  if (group.values.size() != group.size() * m) throw ShapeError("interaction: group values do not match n^2");
  InteractionField field;
  field.neighbors = group.size() - 1;
  field.pixels = m;
  field.contrast.resize(field.neighbors * m);
  field.weighted.resize(field.neighbors * m);
  field.total.assign(m, 0.0);
  const auto center = group.member(0, m);
  for (std::size_t b = 1; b < group.size(); ++b) {
    const double d = group.distances[b];
    if (!(d > 0.0)) continue;
    const double d2 = d * d;
    const auto other = group.member(b, m);
    double* k = field.contrast.data() + (b - 1) * m;
    double* l = field.weighted.data() + (b - 1) * m;
    for (std::size_t i = 0; i < m; ++i) {
      k[i] = std::abs(center[i] - other[i]);
      l[i] = k[i] / d2;
    }
  }
  // Sum over members first, then scale by p.
  for (std::size_t b = 0; b < field.neighbors; ++b)
    for (std::size_t i = 0; i < m; ++i) field.total[i] += field.weighted[b * m + i];
  for (double& v : field.total) v *= p;
  return field;
}

Eigen::MatrixXd laplacian_matrix(std::size_t n) {
  const auto m = static_cast<Eigen::Index>(n * n);
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(m, m);
  const auto idx = [n](std::size_t r, std::size_t c) { return static_cast<Eigen::Index>(r * n + c); };
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const auto i = idx(r, c);
      // A missing neighbor mirrors onto the pixel itself, so its +1 and -1
      // cancel and only existing neighbors contribute.
      if (r > 0) lap(i, idx(r - 1, c)) += 1.0, lap(i, i) -= 1.0;
      if (r + 1 < n) lap(i, idx(r + 1, c)) += 1.0, lap(i, i) -= 1.0;
      if (c > 0) lap(i, idx(r, c - 1)) += 1.0, lap(i, i) -= 1.0;
      if (c + 1 < n) lap(i, idx(r, c + 1)) += 1.0, lap(i, i) -= 1.0;
    }
  return lap;
}

HamiltonianMatrix build_hamiltonian(std::span<const double> patch, std::span<const double> interaction,
                                    double planck) {
  if (patch.size() != interaction.size())
    throw ShapeError("hamiltonian: patch has " + std::to_string(patch.size()) + " values, interaction " +
                     std::to_string(interaction.size()));
  const auto n = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(patch.size()))));
  if (n * n != patch.size()) throw ShapeError("hamiltonian: patch is not square");
  HamiltonianMatrix h;
  h.planck = planck;
  h.matrix = -planck * laplacian_matrix(n);
  for (std::size_t i = 0; i < patch.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    h.matrix(k, k) += patch[i] + interaction[i];
  }
  return h;
}

AdaptiveBasis eigendecompose(const HamiltonianMatrix& hamiltonian) {
  const Eigen::MatrixXd& h = hamiltonian.matrix;
  if (h.rows() != h.cols()) throw ShapeError("eigendecompose: matrix is not square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(h, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success)
    throw NumericError("eigendecompose: QL iteration did not converge for " + std::to_string(h.rows()) + "x" +
                       std::to_string(h.cols()) + " matrix (limit " +
                       std::to_string(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>::m_maxIterations) +
                       " iterations per eigenvalue, off-diagonal norm " +
                       std::to_string((h - Eigen::MatrixXd(h.diagonal().asDiagonal())).norm()) + ")");
  AdaptiveBasis basis;
  basis.eigenvalues = solver.eigenvalues();
  basis.vectors = solver.eigenvectors();
  for (Eigen::Index j = 0; j < basis.vectors.cols(); ++j) {
    Eigen::Index arg = 0;
    basis.vectors.col(j).cwiseAbs().maxCoeff(&arg);
    if (basis.vectors(arg, j) < 0.0) basis.vectors.col(j) *= -1.0;
  }
  return basis;
}

double ThresholdRule::gain(double eigenvalue) const {
  if (mode == Mode::hard) return eigenvalue <= cutoff ? 1.0 : 0.0;
  if (std::isinf(cutoff) && cutoff > 0) return 1.0;
  return std::clamp(1.0 - eigenvalue / cutoff, 0.0, 1.0);
}

std::vector<double> denoise_patch(std::span<const double> patch, const AdaptiveBasis& basis,
                                  const ThresholdRule& rule) {
  const auto m = static_cast<Eigen::Index>(patch.size());
  if (basis.vectors.rows() != m || basis.vectors.cols() != m)
    throw ShapeError("denoise_patch: basis is " + std::to_string(basis.vectors.rows()) + "x" +
                     std::to_string(basis.vectors.cols()) + ", patch has " + std::to_string(m) + " values");
  const Eigen::Map<const Eigen::VectorXd> j(patch.data(), m);
  Eigen::VectorXd coeff = basis.vectors.transpose() * j;
  for (Eigen::Index i = 0; i < m; ++i) coeff[i] *= rule.gain(basis.eigenvalues[i]);
  const Eigen::VectorXd out = basis.vectors * coeff;
  return {out.data(), out.data() + m};
}

Image dequip_denoise(const Image& image, const patch::PatchGeometry& geometry, const DequipParams& params) {
  const patch::PatchGrid grid = patch::extract(image, geometry);
  const auto groups = patch::local_groups(grid, image);
  const std::size_t m = geometry.pixels();
  std::vector<double> restored(grid.patches.size());
  for (std::size_t a = 0; a < grid.count(); ++a) {
    const auto j = grid.patch(a);
    const InteractionField field = baseline_interaction(groups[a], m, params.p);
    const HamiltonianMatrix h = build_hamiltonian(j, field.total, params.planck);
    const AdaptiveBasis basis = eigendecompose(h);
    const auto out = denoise_patch(j, basis, params.rule);
    std::copy(out.begin(), out.end(), restored.begin() + static_cast<std::ptrdiff_t>(a * m));
  }
  return patch::aggregate(restored, grid.anchors, geometry.patch_size, image.height, image.width);
}

}  // namespace quip::dequip
