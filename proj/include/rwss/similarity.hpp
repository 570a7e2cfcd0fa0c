#pragma once

// Similarity measurement: the probabilistic transition matrix of a feature grid.
//
//   G = f f^T / temperature        (Gram matrix over grid cells)
//   P = softmax_rows(G)            (differentiable, on the tape)
//   W = exp(G - s), D = W 1        (affinity and degree, s = max(G))
//
// so that P = D^-1 W up to rounding. W shares one global shift s so it stays
// exactly symmetric; the per-row log-normaliser is kept for overflow-free
// symmetrisation in the spectral code.

#include <cstddef>

#include "rwss/grid.hpp"

namespace rwss {

struct TransitionMatrix {
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor P;           // n x n, row-stochastic
  Mat gram;           // n x n, symmetric
  Mat W;              // exp(gram - shift)
  Vec D;              // row sums of W
  Vec log_normalizer; // log sum_j exp(gram_ij)
  double shift = 0.0;

  std::size_t size() const { return P.rows(); }
  Mat P_mat() const { return to_mat(P); }
};

struct SimilarityOptions {
  // Divides the Gram matrix. 1.0 reproduces the plain inner product.
  double gram_temperature = 1.0;
};

TransitionMatrix build_transition_matrix(const FeatureGrid& f, const SimilarityOptions& opts = {});

// Affinity, degree and normaliser for a symmetric Gram matrix (no P).
void fill_affinity(TransitionMatrix& tm);

}  // namespace rwss
