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

// Classical quantum-interactive-patches denoiser.
//
// Every patch J_a gets a Hamiltonian
//
//     H_a = -planck * Lap + diag(J_a + I_a),
//     I_a = p * sum_{b != a} |J_a - J_b| / D_ab^2,
//
// whose eigenvectors form an adaptive basis. The patch is projected on that
// basis, coefficients of high-energy modes are thresholded away, and the
// reconstructed patches are averaged back into the image.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "quip/image.hpp"
#include "quip/patch.hpp"

namespace quip::dequip {

struct InteractionField {
  std::size_t neighbors = 0;     // kappa - 1
  std::size_t pixels = 0;        // n^2
  std::vector<double> contrast;  // K_ab, neighbors x pixels
  std::vector<double> weighted;  // L_ab = K_ab / D_ab^2, neighbors x pixels
  std::vector<double> total;     // I_a, pixels
};

/// Power-law interaction of the group center with its members. A member at
/// distance 0 (clamped onto the center) contributes 0.
InteractionField baseline_interaction(const patch::LocalGroup& group, std::size_t pixels, double p);

/// 5-point Laplacian on an n x n grid with mirrored (Neumann) boundary.
/// Symmetric, rows sum to 0.
Eigen::MatrixXd laplacian_matrix(std::size_t n);

struct HamiltonianMatrix {
  Eigen::MatrixXd matrix;
  double planck = 0.0;
};

HamiltonianMatrix build_hamiltonian(std::span<const double> patch, std::span<const double> interaction, double planck);

struct AdaptiveBasis {
  Eigen::MatrixXd vectors;      // columns, ascending eigenvalue
  Eigen::VectorXd eigenvalues;  // ascending
};

/// Symmetric eigendecomposition. Each eigenvector's largest-magnitude entry
/// is made positive. Throws NumericError when the solver does not converge.
AdaptiveBasis eigendecompose(const HamiltonianMatrix& hamiltonian);

struct ThresholdRule {
  enum class Mode { hard, soft };
  Mode mode = Mode::hard;
  /// Energy cutoff in eigenvalue units.
  double cutoff = std::numeric_limits<double>::infinity();

  static ThresholdRule keep_all() { return {}; }
  /// Multiplier applied to a coefficient whose mode has `eigenvalue`: hard
  /// keeps eigenvalue <= cutoff, soft is clamp(1 - eigenvalue / cutoff, 0, 1).
  double gain(double eigenvalue) const;
};

/// Project on the basis, threshold the coefficients, reconstruct.
std::vector<double> denoise_patch(std::span<const double> patch, const AdaptiveBasis& basis,
                                  const ThresholdRule& rule);

struct DequipParams {
  double p = 1.0;
  double planck = 1.0;
  ThresholdRule rule;
};

Image dequip_denoise(const Image& image, const patch::PatchGeometry& geometry, const DequipParams& params);

}  // namespace quip::dequip
