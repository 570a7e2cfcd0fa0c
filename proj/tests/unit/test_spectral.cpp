#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "rwss/spectral.hpp"
#include "rwss/verify.hpp"

using namespace rwss;

namespace {

// Eigenvalues of a symmetric matrix with spectrum in [-1, 1] by power
// iteration on S + I, deflating by projecting out the vectors already found.
std::vector<double> power_deflation(const Mat& S, std::uint64_t seed) {
  const Eigen::Index n = S.rows();
  const Mat A = S + Mat::Identity(n, n);
  Rng rng(seed);
  std::vector<Vec> found;
  std::vector<double> values;
  const auto deflate = [&](Vec& v) {
    for (const Vec& u : found) v -= u.dot(v) * u;
  };
  for (Eigen::Index k = 0; k < n; ++k) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-1, 1);
    deflate(v);
    v.normalize();
    double lambda = v.dot(A * v);
    for (int it = 0; it < 2000000; ++it) {
      Vec w = A * v;
      deflate(w);
      deflate(w);
      const double norm = w.norm();
      if (norm < 1e-300) break;
      v = w / norm;
      Vec av = A * v;
      lambda = v.dot(av);
      av -= lambda * v;
      deflate(av);
      if (av.norm() < 1e-13) break;
    }
    found.push_back(v);
    values.push_back(lambda - 1.0);
  }
  std::sort(values.begin(), values.end(), std::greater<>());
  return values;
}

TransitionMatrix uniform_tm(std::size_t h, std::size_t w) {
  return transition_from_affinity(Mat::Ones(h * w, h * w), h, w);
}

}  // namespace

TEST_SUITE("spectral") {

TEST_CASE("laplacian") {
  const Mat eye = Mat::Identity(4, 4);
  CHECK(laplacian(transition_from_affinity(eye, 2, 2)).cwiseAbs().maxCoeff() == 0.0);

  const Mat L = laplacian(uniform_tm(2, 3));
  const Mat expect = Mat::Identity(6, 6) - Mat::Constant(6, 6, 1.0 / 6.0);
  CHECK((L - expect).cwiseAbs().maxCoeff() < 1e-15);

  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const TransitionMatrix tm = build_transition_matrix(random_feature_grid(rng, 6, 36, 6));
    const Mat sum = laplacian(tm) + tm.P_mat();
    CHECK((sum - Mat::Identity(sum.rows(), sum.cols())).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("identity and uniform spectra") {
  const EigenSystem ei = eig_row_stochastic(transition_from_affinity(Mat::Identity(5, 5), 1, 5));
  for (Eigen::Index k = 0; k < 5; ++k) CHECK(std::abs(ei.values[k] - 1.0) < 1e-14);
  const Mat gram = ei.vectors.transpose() * ei.vectors;
  CHECK((gram - Mat::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);

  const EigenSystem eu = eig_row_stochastic(uniform_tm(3, 3));
  CHECK(std::abs(eu.values[0] - 1.0) < 1e-14);
  for (Eigen::Index k = 1; k < 9; ++k) CHECK(std::abs(eu.values[k]) < 1e-14);
}

TEST_CASE("eigenvalues against power iteration with deflation") {
  Rng rng(16);
  for (int t = 0; t < 5; ++t) {
    FeatureGrid f = random_feature_grid(rng, 4, 16, 4);
    while (f.cells() != 16) f = random_feature_grid(rng, 4, 16, 4);
    const TransitionMatrix tm = build_transition_matrix(f);
    // Independent symmetrisation straight from W and D.
    Mat S = tm.W;
    for (Eigen::Index i = 0; i < S.rows(); ++i)
      for (Eigen::Index j = 0; j < S.cols(); ++j) S(i, j) /= std::sqrt(tm.D[i] * tm.D[j]);
    const std::vector<double> ref = power_deflation(S, 100 + t);
    const EigenSystem es = eig_row_stochastic(tm);
    for (std::size_t k = 0; k < ref.size(); ++k) CHECK(std::abs(es.values[k] - ref[k]) < 1e-6);
  }
}

TEST_CASE("spectral identity on trivial cases") {
  CHECK(check_spectral_identity(uniform_tm(2, 4)).passed);
  CHECK(check_spectral_identity(transition_from_affinity(Mat::Identity(6, 6), 2, 3)).passed);
}

TEST_CASE("spectral identity on 100 random matrices") {
  const VerificationReport rep = run_spectral_suite(100, 64, 11);
  CHECK_MESSAGE(rep.passed(), rep.to_text(true));
}

TEST_CASE("trace, Perron vector and permutation invariance") {
  Rng rng(21);
  for (int t = 0; t < 10; ++t) {
    const FeatureGrid f = random_feature_grid(rng, 6, 30, 5);
    const TransitionMatrix tm = build_transition_matrix(f);
    const EigenSystem es = eig_row_stochastic(tm);
    CHECK(std::abs(tm.P_mat().trace() - es.values.sum()) <= 1e-8);
    CHECK(std::abs(es.values[0] - 1.0) <= 1e-8);
    CHECK(es.vectors.col(0).minCoeff() > 0.0);
    CHECK(es.values.minCoeff() > -1.0);

    const std::size_t n = f.cells(), c = f.channels();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<double> v(n * c);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) v[i * c + k] = f.values[perm[i] * c + k];
    const EigenSystem ep =
        eig_row_stochastic(build_transition_matrix(FeatureGrid(f.height, f.width, Tensor::matrix(n, c, v))));
    CHECK((ep.values - es.values).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("size cap and convergence budget") {
  EigOptions opts;
  opts.max_size = 8;
  CHECK_THROWS_AS(eig_row_stochastic(uniform_tm(3, 3), opts), std::invalid_argument);
  Rng rng(2);
  const TransitionMatrix tm = build_transition_matrix(random_feature_grid(rng, 6, 36, 4));
  CHECK_THROWS_AS(symmetric_eigen(symmetrized(tm), 0), ConvergenceError);
}

TEST_CASE("leading eigenvector maps") {
  CHECK(leading_eigenvector_maps(uniform_tm(2, 2), 0).empty());

  // Two blocks of four cells: cells 0..3 (top row) and 4..7 (bottom row).
  Mat W = Mat::Zero(8, 8);
  W.block(0, 0, 4, 4).setConstant(1.0);
  W.block(4, 4, 4, 4).setConstant(2.0);
  const std::vector<Mat> maps = leading_eigenvector_maps(transition_from_affinity(W, 2, 4), 1);
  REQUIRE(maps.size() == 1);
  const Mat& m = maps[0];
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 4);
  const bool top_high = m(0, 0) > 0.5;
  for (Eigen::Index x = 0; x < 4; ++x) {
    CHECK((m(0, x) > 0.5) == top_high);
    CHECK((m(1, x) > 0.5) != top_high);
  }
  CHECK(m.minCoeff() == 0.0);
  CHECK(m.maxCoeff() == 1.0);

  CHECK(leading_eigenvector_maps(uniform_tm(2, 2), 10).size() == 3);
}

TEST_CASE("eigenspace reference") {
  Rng rng(4);
  const FeatureGrid f = random_feature_grid(rng, 5, 25, 3);
  const TransitionMatrix tm = build_transition_matrix(f);
  CHECK(eigenspace_ss_reference(tm, tm, TransformSpec::translation(0, 0)) == 0.0);

  // Left-right symmetric features: the flipped input gives the same P.
  const std::size_t h = 4, w = 6, c = 3;
  std::vector<double> v(h * w * c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w / 2; ++x)
      for (std::size_t k = 0; k < c; ++k) {
        const double value = rng.uniform(-1, 1);
        v[(y * w + x) * c + k] = value;
        v[(y * w + (w - 1 - x)) * c + k] = value;
      }
  const FeatureGrid sym(h, w, Tensor::matrix(h * w, c, v));
  const TransitionMatrix ts = build_transition_matrix(sym);
  const TransitionMatrix tf = build_transition_matrix(transform_grid(sym, TransformSpec::flip()));
  CHECK(eigenspace_ss_reference(ts, tf, TransformSpec::flip()) <= 1e-6);

  // A different image is not consistent.
  std::vector<double> r(h * w * c);
  for (double& x : r) x = rng.uniform(-1, 1);
  const TransitionMatrix other = build_transition_matrix(FeatureGrid(h, w, Tensor::matrix(h * w, c, r)));
  CHECK(eigenspace_ss_reference(ts, other, TransformSpec::flip()) > 1e-4);
}

}  // TEST_SUITE
