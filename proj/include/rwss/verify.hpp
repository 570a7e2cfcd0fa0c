#pragma once

// Self-check suites shared by the command-line tool and the tests.

#include <cstdint>
#include <string>
#include <vector>

#include "rwss/rng.hpp"
#include "rwss/similarity.hpp"

namespace rwss {

struct CheckLine {
  std::string name;
  bool passed = false;
  double error = 0.0;
  std::string detail;
};

struct VerificationReport {
  std::string title;
  std::vector<CheckLine> lines;

  bool passed() const;
  std::size_t failures() const;
  // One line per check, then a PASS/FAIL summary.
  std::string to_text(bool failures_only = false) const;
};

// Random features on a grid with h, w <= max_side and h*w <= max_cells,
// 1..max_channels channels and a random overall scale.
FeatureGrid random_feature_grid(Rng& rng, std::size_t max_side, std::size_t max_cells,
                                std::size_t max_channels);

// Computing matrices against a coordinate-level oracle, and
// build(T(f)) against T(build(f)) for every flip and every translation with
// |dx|, |dy| <= max_shift on every grid up to max_grid x max_grid.
VerificationReport check_transform_algebra(std::size_t max_grid, int max_shift, std::uint64_t seed,
                                           double tol = 1e-12);

// check_spectral_identity on `count` random transition matrices.
VerificationReport run_spectral_suite(std::size_t count, std::size_t max_cells, std::uint64_t seed);

// Row sums, positivity and symmetry of W on `count` random feature grids.
VerificationReport run_stochasticity_suite(std::size_t count, std::size_t max_side,
                                           std::size_t max_channels, std::uint64_t seed);

// Finite-difference checks of the differentiable building blocks and of
// the full training loss through the model on an image_size^2 image.
VerificationReport run_gradient_suite(const std::vector<std::uint64_t>& seeds,
                                      std::size_t image_size, double tol = 1e-4);

}  // namespace rwss
