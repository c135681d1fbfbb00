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


#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "quip/degrade.hpp"
#include "quip/dequip.hpp"
#include "quip/error.hpp"
#include "quip/imageio.hpp"
#include "quip/metrics.hpp"
#include "support.hpp"

namespace {

using namespace quip;
using namespace quip::dequip;

patch::LocalGroup two_member_group(std::vector<double> center, std::vector<double> other, double distance) {
  patch::LocalGroup g;
  g.members = {{0, 0}, {0, 2}};
  g.values = center;
  g.values.insert(g.values.end(), other.begin(), other.end());
  g.distances = {0.0, distance};
  return g;
}

patch::LocalGroup random_group(std::mt19937_64& rng, std::size_t kappa, std::size_t pixels) {
  patch::LocalGroup g;
  g.values = testing::uniform(kappa * pixels, rng, 0.0, 1.0);
  g.members.resize(kappa);
  g.distances.push_back(0.0);
  for (std::size_t b = 1; b < kappa; ++b) g.distances.push_back(1.0 + static_cast<double>(rng() % 7));
  return g;
}

Eigen::MatrixXd random_symmetric(std::mt19937_64& rng, std::size_t m) {
  Eigen::MatrixXd a(m, m);
  const auto v = testing::uniform(m * m, rng);
  for (std::size_t i = 0; i < m * m; ++i) a.data()[i] = v[i];
  return 0.5 * (a + a.transpose());
}

}  // namespace

TEST_SUITE("dequip") {
  TEST_CASE("identical members give zero interaction") {
    const auto g = two_member_group({0.3, 0.6}, {0.3, 0.6}, 2.0);
    for (double v : baseline_interaction(g, 2, 4.0).total) CHECK(v == 0.0);
  }

  TEST_CASE("two-patch interaction by hand") {
    const auto f = baseline_interaction(two_member_group({0, 1}, {1, 1}, 2.0), 2, 4.0);
    CHECK(f.contrast == std::vector<double>{1.0, 0.0});
    CHECK(f.weighted == std::vector<double>{0.25, 0.0});
    CHECK(f.total == std::vector<double>{1.0, 0.0});
  }

  TEST_CASE("interaction is linear in p") {
    std::mt19937_64 rng(1);
    const auto g = random_group(rng, 5, 9);
    const auto a = baseline_interaction(g, 9, 0.7).total, b = baseline_interaction(g, 9, 1.4).total;
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(b[k] == 2 * a[k]);
  }

  TEST_CASE("singleton group has zero interaction") {
    patch::LocalGroup g;
    g.members = {{0, 0}};
    g.values = {0.1, 0.2, 0.3, 0.4};
    g.distances = {0.0};
    const auto f = baseline_interaction(g, 4, 3.0);
    CHECK(f.neighbors == 0);
    CHECK(f.total == std::vector<double>(4, 0.0));
  }

  TEST_CASE("member clamped onto the center contributes nothing") {
    const auto field = baseline_interaction(two_member_group({0, 1}, {1, 1}, 0.0), 2, 1.0);
    CHECK(field.weighted == std::vector<double>{0.0, 0.0});
    CHECK(field.total == std::vector<double>{0.0, 0.0});
  }

  TEST_CASE("interaction equals the term-by-term double loop") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      std::mt19937_64 rng(seed);
      const std::size_t kappa = 1 + rng() % 9, m = 4 + rng() % 12;
      const double p = 0.1 + static_cast<double>(rng() % 100) / 10;
      const auto g = random_group(rng, kappa, m);
      const auto f = baseline_interaction(g, m, p);
      for (std::size_t k = 0; k < m; ++k) {
        double acc = 0.0;
        for (std::size_t b = 1; b < kappa; ++b) {
          const double d = g.distances[b];
          acc += std::abs(g.values[k] - g.values[b * m + k]) / (d * d);
        }
        CHECK(f.total[k] == p * acc);
        CHECK(f.total[k] >= 0.0);
      }
    }
  }

  TEST_CASE("laplacian is symmetric with zero row sums") {
    for (std::size_t n : {1, 2, 3, 5}) {
      const Eigen::MatrixXd lap = laplacian_matrix(n);
      CHECK((lap - lap.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(lap.rowwise().sum().cwiseAbs().maxCoeff() < 1e-15);
    }
    // Interior row of a 3x3 grid is the 5-point stencil.
    const Eigen::MatrixXd lap = laplacian_matrix(3);
    CHECK(lap(4, 4) == -4.0);
    CHECK(lap(4, 1) == 1.0);
    CHECK(lap(4, 3) == 1.0);
    CHECK(lap(4, 0) == 0.0);
  }

  TEST_CASE("zero planck gives a diagonal hamiltonian") {
    const std::vector<double> patch{0.1, 0.2, 0.3, 0.4}, inter{1, 2, 3, 4};
    const auto h = build_hamiltonian(patch, inter, 0.0).matrix;
    Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(4, 4);
    for (int i = 0; i < 4; ++i) expected(i, i) = patch[i] + inter[i];
    CHECK(h == expected);
  }

  TEST_CASE("empty patch gives minus planck times the laplacian") {
    const std::vector<double> zero(9, 0.0);
    const auto h = build_hamiltonian(zero, zero, 0.8).matrix;
    CHECK((h + 0.8 * laplacian_matrix(3)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(h.rowwise().sum().cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("hamiltonian is symmetric for random inputs") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
      const auto h = build_hamiltonian(testing::uniform(25, rng, 0, 1), testing::uniform(25, rng, 0, 1), 0.5).matrix;
      CHECK((h - h.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("diagonal hamiltonian decomposes into sorted identity columns") {
    HamiltonianMatrix h{Eigen::MatrixXd::Zero(3, 3), 0.0};
    h.matrix.diagonal() << 0.7, 0.1, 0.4;
    const auto basis = eigendecompose(h);
    CHECK(basis.eigenvalues(0) == doctest::Approx(0.1));
    CHECK(basis.eigenvalues(1) == doctest::Approx(0.4));
    CHECK(basis.eigenvalues(2) == doctest::Approx(0.7));
    Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(3, 3);
    expected(1, 0) = expected(2, 1) = expected(0, 2) = 1.0;
    CHECK((basis.vectors - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("neumann laplacian has a constant ground mode at zero") {
    const HamiltonianMatrix h{-laplacian_matrix(4), 1.0};
    const auto basis = eigendecompose(h);
    CHECK(std::abs(basis.eigenvalues(0)) < 1e-12);
    for (int i = 0; i < 16; ++i) CHECK(basis.vectors(i, 0) == doctest::Approx(0.25).epsilon(1e-10));
  }

  TEST_CASE("eigenbases are orthonormal and reconstruct 200 random hamiltonians") {
    double ortho = 0.0, recon = 0.0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      std::mt19937_64 rng(seed);
      const std::size_t m = 4 + rng() % 46;
      const HamiltonianMatrix h{random_symmetric(rng, m), 0.0};
      const auto b = eigendecompose(h);
      ortho = std::max(ortho, (b.vectors.transpose() * b.vectors - Eigen::MatrixXd::Identity(m, m)).cwiseAbs().maxCoeff());
      recon = std::max(recon, (b.vectors * b.eigenvalues.asDiagonal() * b.vectors.transpose() - h.matrix)
                                  .cwiseAbs()
                                  .maxCoeff());
      for (Eigen::Index i = 1; i < b.eigenvalues.size(); ++i) REQUIRE(b.eigenvalues(i - 1) <= b.eigenvalues(i));
      for (Eigen::Index j = 0; j < b.vectors.cols(); ++j) {
        Eigen::Index arg = 0;
        b.vectors.col(j).cwiseAbs().maxCoeff(&arg);
        REQUIRE(b.vectors(arg, j) > 0.0);
      }
    }
    CHECK(ortho < 1e-10);
    CHECK(recon < 1e-9);
  }

  TEST_CASE("keep-all thresholding returns the patch") {
    std::mt19937_64 rng(3);
    const auto patch = testing::uniform(25, rng, 0, 1);
    const auto basis = eigendecompose(build_hamiltonian(patch, testing::uniform(25, rng, 0, 1), 0.3));
    CHECK(testing::max_abs_diff(denoise_patch(patch, basis, ThresholdRule::keep_all()), patch) < 1e-12);
  }

  TEST_CASE("cutoff below the spectrum zeroes the patch") {
    std::mt19937_64 rng(4);
    const auto patch = testing::uniform(16, rng, 0, 1);
    const auto basis = eigendecompose(build_hamiltonian(patch, std::vector<double>(16, 0.0), 0.3));
    const ThresholdRule rule{ThresholdRule::Mode::hard, basis.eigenvalues(0) - 1.0};
    for (double v : denoise_patch(patch, basis, rule)) CHECK(v == 0.0);
  }

  TEST_CASE("constant patch survives keeping only the ground mode") {
    const std::vector<double> patch(16, 0.42);
    const auto basis = eigendecompose({-laplacian_matrix(4), 1.0});
    const ThresholdRule rule{ThresholdRule::Mode::hard, 1e-9};
    CHECK(testing::max_abs_diff(denoise_patch(patch, basis, rule), patch) < 1e-12);
  }

  TEST_CASE("threshold gains") {
    const ThresholdRule hard{ThresholdRule::Mode::hard, 2.0};
    CHECK(hard.gain(1.9) == 1.0);
    CHECK(hard.gain(2.0) == 1.0);
    CHECK(hard.gain(2.1) == 0.0);
    const ThresholdRule soft{ThresholdRule::Mode::soft, 2.0};
    CHECK(soft.gain(0.5) == doctest::Approx(0.75));
    CHECK(soft.gain(3.0) == 0.0);
    CHECK(soft.gain(-1.0) == 1.0);
  }

  TEST_CASE("lowering the hard cutoff never retains more coefficients") {
    std::mt19937_64 rng(5);
    const auto basis = eigendecompose(build_hamiltonian(testing::uniform(25, rng, 0, 1), testing::uniform(25, rng, 0, 1), 0.5));
    std::size_t previous = 26;
    for (double cutoff = 6.0; cutoff > -2.0; cutoff -= 0.05) {
      const ThresholdRule rule{ThresholdRule::Mode::hard, cutoff};
      std::size_t kept = 0;
      for (Eigen::Index i = 0; i < basis.eigenvalues.size(); ++i) kept += rule.gain(basis.eigenvalues(i)) != 0.0;
      CHECK(kept <= previous);
      previous = kept;
    }
  }

  TEST_CASE("keep-all pipeline is the identity") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      std::mt19937_64 rng(seed);
      const Image image = testing::random_image(10 + seed, 13, rng);
      const patch::PatchGeometry g{2 + seed % 3, 7 + 2 * (seed % 2), 1 + seed % 3, 1 + seed % 2, 8};
      DequipParams params;
      params.p = 0.5 + seed;
      params.planck = 0.2 * seed;
      const Image out = dequip_denoise(image, g, params);
      CHECK(testing::max_abs_diff(out.pixels, image.pixels) < 1e-10);
    }
  }

  TEST_CASE("hard thresholding smooths a noisy constant image") {
    degrade::DegradationSpec spec;
    spec.sigma = 15;
    spec.seed = 9;
    const Image clean(32, 32, 0.5);
    const Image noisy = degrade::apply(spec, clean).observed;
    DequipParams params;
    params.planck = 1.0;
    params.rule = {ThresholdRule::Mode::hard, 1.0};
    const Image out = dequip_denoise(noisy, patch::PatchGeometry::with_defaults(6, 14), params);
    auto variance = [](const Image& im) {
      double mean = 0, var = 0;
      for (double v : im.pixels) mean += v;
      mean /= im.size();
      for (double v : im.pixels) var += (v - mean) * (v - mean);
      return var / im.size();
    };
    CHECK(variance(out) < variance(noisy));
    CHECK(metrics::psnr(clean, out) > metrics::psnr(clean, noisy));
  }

  TEST_CASE("thresholding improves a noisy textured image") {
    degrade::DegradationSpec spec;
    spec.sigma = 15;
    spec.seed = 10;
    const Image clean = testing::texture(48, 48);
    const Image noisy = degrade::apply(spec, clean).observed;
    DequipParams params;
    params.p = 1.0;
    params.planck = 1.0;
    params.rule = {ThresholdRule::Mode::hard, 1.2};
    const Image out = dequip_denoise(noisy, patch::PatchGeometry::with_defaults(6, 14), params);
    const double gain = metrics::psnr(clean, out) - metrics::psnr(clean, noisy);
    MESSAGE("dequip gain " << gain << " dB");
    CHECK(gain > 0.0);
  }

  TEST_CASE("fixed hyperparameters improve noisy natural images") {
    const auto files = io::list_images(std::filesystem::path(QUIP_CORPUS_DIR) / "heldout");
    REQUIRE(files.size() == 5);
    DequipParams params;
    params.p = 1.0;
    params.planck = 1.0;
    params.rule = {ThresholdRule::Mode::hard, 3.0};
    double input = 0.0, output = 0.0;
    for (std::size_t i = 0; i < files.size(); ++i) {
      const Image clean = io::read_image(files[i]);
      degrade::DegradationSpec spec;
      spec.sigma = 15;
      spec.seed = i;
      const Image noisy = degrade::apply(spec, clean).observed;
      input += metrics::psnr(clean, noisy) / files.size();
      output += metrics::psnr(clean, dequip_denoise(noisy, patch::PatchGeometry::with_defaults(8, 18), params)) / files.size();
    }
    MESSAGE("held-out mean PSNR " << input << " -> " << output);
    CHECK(input == doctest::Approx(24.64).epsilon(0.02));
    CHECK(output > input + 1.0);
  }
}
