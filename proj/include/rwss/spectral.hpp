#pragma once

// Eigen-analysis of transition matrices at desk scale.
//
// P = D^-1 W with W symmetric is similar to S = D^-1/2 W D^-1/2, so its
// spectrum is real. We decompose S with a symmetric solver and map the
// eigenvectors back: U_P = D^-1/2 V. The normalised Laplacian
// L = D^-1 (D - W) = I - P shares those eigenvectors with eigenvalues 1 - lambda.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwss/grid.hpp"
#include "rwss/similarity.hpp"
#include "rwss/transforms.hpp"

namespace rwss {

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SymmetricEigen {
  Vec values;   // ascending
  Mat vectors;  // orthonormal columns
};

// Householder tridiagonalisation followed by implicit QL with shifts.
// Throws ConvergenceError when an eigenvalue needs more than
// `max_iterations_per_value` QL sweeps.
SymmetricEigen symmetric_eigen(const Mat& symmetric, int max_iterations_per_value = 60);

struct EigenSystem {
  Vec values;   // descending
  Mat vectors;  // column k pairs with values[k]; unit norm, largest-|entry| positive
};

struct EigOptions {
  std::size_t max_size = 4096;
  int max_iterations_per_value = 60;
};

// Builds a transition matrix from a symmetric non-negative affinity with
// positive row sums (no Gram matrix; spectral code falls back to W and D).
TransitionMatrix transition_from_affinity(const Mat& W, std::size_t height, std::size_t width);

// D^-1/2 W D^-1/2, evaluated in the log domain when a Gram matrix is present.
Mat symmetrized(const TransitionMatrix& tm);

// L = D^-1 (D - W).
Mat laplacian(const TransitionMatrix& tm);

EigenSystem eig_row_stochastic(const TransitionMatrix& tm, const EigOptions& opts = {});
// Eigenpairs of the Laplacian, values ascending.
EigenSystem eig_laplacian(const TransitionMatrix& tm, const EigOptions& opts = {});

// Groups consecutive sorted eigenvalues closer than `gap` into [begin, end) ranges.
std::vector<std::pair<std::size_t, std::size_t>> eigen_clusters(const Vec& sorted_values,
                                                                double gap);

// Largest principal-angle sine bound between span(A) and span(B): the
// Frobenius norm of (I - Qa Qa^T) Qb with Qa, Qb orthonormal bases.
double subspace_sine(const Mat& a, const Mat& b);

struct SpectralReport {
  bool passed = false;
  double max_value_deviation = 0.0;  // |lambda_P - (1 - lambda_L)|
  double max_subspace_sine = 0.0;
  double perron_deviation = 0.0;     // |max lambda_P - 1|
  double trace_deviation = 0.0;      // |tr P - sum lambda_P|
  double max_residual = 0.0;         // max ||P u - lambda u||_D / ||u||_D
  double min_value = 0.0;
  std::string message;
};

struct SpectralTolerances {
  double value = 1e-8;
  double angle = 1e-6;
  double perron = 1e-8;
  double trace = 1e-8;
  double residual = 1e-8;
  double degenerate_gap = 1e-9;
};

SpectralReport check_spectral_identity(const TransitionMatrix& tm,
                                       const SpectralTolerances& tol = {},
                                       const EigOptions& opts = {});

// The k leading non-trivial eigenvectors as M x N maps normalised to [0, 1].
// The constant Perron direction is deflated first, so at most n - 1 maps exist.
std::vector<Mat> leading_eigenvector_maps(const TransitionMatrix& tm, std::size_t k,
                                          const EigOptions& opts = {});

struct EigenspaceReferenceOptions {
  // Compare only the leading `max_pairs` eigenpairs (0 = all).
  std::size_t max_pairs = 0;
  // Eigenvalues closer than this form one cluster.
  double degenerate_gap = 1e-9;
  // Clusters larger than this are compared as subspaces.
  std::size_t multiplicity_limit = 1;
  EigOptions eig;
};

// Explicit eigenspace consistency: mean squared eigenvector mismatch (after
// sign/subspace alignment) plus mean squared eigenvalue mismatch between
// T_phi(P(x)) and P(t_phi(x)). Diagnostic only; not differentiable.
double eigenspace_ss_reference(const TransitionMatrix& tm_a, const TransitionMatrix& tm_b,
                               const TransformSpec& spec,
                               const EigenspaceReferenceOptions& opts = {});

}  // namespace rwss
