#pragma once

// Paired linear transforms of an image (t_phi) and of its feature grid
// (T_phi), and their action on transition matrices through fixed 0/1
// computing matrices: T_phi(P) = Tr * P * Tc.
//
// A transform maps every target cell i of the transformed grid to a source
// cell src(i) of the original grid, or to nothing (zero padding). Tr has a
// single 1 at (i, src(i)) per supported row and Tc = Tr^T.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "rwss/grid.hpp"
#include "rwss/rng.hpp"
#include "rwss/similarity.hpp"

namespace rwss {

struct TransformSpec {
  enum class Kind { flip, translation };
  Kind kind = Kind::flip;
  // Translation offsets in grid cells; content moves right/down for positive values.
  int dx = 0;
  int dy = 0;

  static TransformSpec flip() { return {Kind::flip, 0, 0}; }
  static TransformSpec translation(int dx, int dy) { return {Kind::translation, dx, dy}; }

  bool is_identity() const { return kind == Kind::translation && dx == 0 && dy == 0; }
  // Throws std::invalid_argument when offsets do not fit an M x N grid.
  void validate(std::size_t height, std::size_t width) const;
  std::string to_string() const;
  bool operator==(const TransformSpec&) const = default;
};

enum class TransformMode { flip, translation, random };

// Draws a transform for one batch. Translations use nonzero offsets with
// |dx| <= ceil(N/4), |dy| <= ceil(M/4); `random` picks flip or translation evenly.
TransformSpec sample_transform(TransformMode mode, std::size_t height, std::size_t width, Rng& rng);

struct ComputingMatrices {
  std::size_t height = 0;
  std::size_t width = 0;
  // source[i] = src(i) or -1.
  std::vector<std::ptrdiff_t> source;
  // Target cells with a source, ascending.
  std::vector<std::size_t> valid_rows;
  // Extent of the (rectangular) valid region.
  std::size_t valid_height = 0;
  std::size_t valid_width = 0;

  std::size_t cells() const { return height * width; }
  bool all_valid() const { return valid_rows.size() == cells(); }
  // Sources of the valid rows, in valid_rows order.
  std::vector<std::size_t> valid_sources() const;
  Mat Tr() const;
  Mat Tc() const;
};

ComputingMatrices computing_matrices(const TransformSpec& spec, std::size_t height,
                                     std::size_t width);

// Image-level transform; translations move by (dx*stride, dy*stride) pixels
// and zero the vacated pixels.
Image transform_image(const Image& img, const TransformSpec& spec, std::size_t stride);

// Grid-level transform; differentiable through gather_rows.
FeatureGrid transform_grid(const FeatureGrid& f, const TransformSpec& spec);

// Tr * P * Tc as a full n x n matrix (zero rows/columns outside the overlap).
Mat conjugate(const Mat& P, const ComputingMatrices& cm);

// T_phi(P) restricted to the valid block and row-renormalised when rows lost
// mass to cropped columns. Differentiable in tm.P. The result's grid is the
// valid region.
TransitionMatrix transform_transition(const TransitionMatrix& tm, const ComputingMatrices& cm);

// The matching valid block of a transition matrix built on the transformed
// input, renormalised the same way.
TransitionMatrix restrict_to_valid(const TransitionMatrix& tm, const ComputingMatrices& cm);

// The same two blocks for a bare P tensor (loss path; no affinity bookkeeping).
Tensor transform_transition(const Tensor& P, const ComputingMatrices& cm);
Tensor restrict_to_valid(const Tensor& P, const ComputingMatrices& cm);

}  // namespace rwss
