#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rwss/similarity.hpp"
#include "rwss/verify.hpp"

using namespace rwss;

TEST_SUITE("similarity") {

TEST_CASE("single cell") {
  const FeatureGrid f(1, 1, Tensor::matrix(1, 3, {0.3, -2.0, 5.0}));
  const TransitionMatrix tm = build_transition_matrix(f);
  REQUIRE(tm.size() == 1);
  CHECK(tm.P[0] == 1.0);
}

TEST_CASE("identical features give a uniform P") {
  std::vector<double> v;
  for (int i = 0; i < 6; ++i) v.insert(v.end(), {0.4, -1.1});
  const TransitionMatrix tm = build_transition_matrix(FeatureGrid(2, 3, Tensor::matrix(6, 2, v)));
  for (double p : tm.P.data()) CHECK(p == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
}

TEST_CASE("two cells by hand") {
  const TransitionMatrix tm = build_transition_matrix(FeatureGrid(1, 2, Tensor::matrix(2, 2, {1, 0, 0, 1})));
  CHECK(tm.gram(0, 0) == 1.0);
  CHECK(tm.gram(0, 1) == 0.0);
  CHECK(tm.P.at(0, 0) == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(tm.P.at(0, 1) == doctest::Approx(0.268941).epsilon(1e-6));
  CHECK(tm.P.at(1, 0) == doctest::Approx(0.268941).epsilon(1e-6));
  CHECK(tm.P.at(1, 1) == doctest::Approx(0.731059).epsilon(1e-6));
}

TEST_CASE("stochasticity and affinity over 100 random grids") {
  Rng rng(2024);
  for (int t = 0; t < 100; ++t) {
    const FeatureGrid f = random_feature_grid(rng, 8, 64, 16);
    const TransitionMatrix tm = build_transition_matrix(f);
    const Mat P = tm.P_mat();
    const std::size_t n = tm.size();
    CHECK((P.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-10);
    CHECK(P.minCoeff() > 0.0);
    CHECK((tm.W - tm.W.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(tm.W.minCoeff() > 0.0);
    // P = D^-1 W
    Mat dw = tm.W;
    for (std::size_t i = 0; i < n; ++i) dw.row(i) /= tm.D(i);
    CHECK((dw - P).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("permutation equivariance") {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const FeatureGrid f = random_feature_grid(rng, 6, 36, 5);
    const std::size_t n = f.cells();
    const std::size_t c = f.channels();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<double> permuted(n * c);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) permuted[i * c + k] = f.values[perm[i] * c + k];
    const Mat P = build_transition_matrix(f).P_mat();
    const Mat Q = build_transition_matrix(FeatureGrid(f.height, f.width, Tensor::matrix(n, c, permuted))).P_mat();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(Q(i, j) - P(perm[i], perm[j])) <= 1e-15);
  }
}

TEST_CASE("scaling features scales the Gram matrix by s squared") {
  Rng rng(9);
  const FeatureGrid f = random_feature_grid(rng, 5, 25, 4);
  const double s = 1.7;
  Tensor scaled = scale(f.values, s);
  const TransitionMatrix a = build_transition_matrix(FeatureGrid(f.height, f.width, scaled));
  const TransitionMatrix base = build_transition_matrix(f);
  const Tensor expect = softmax_rows(to_tensor(base.gram * (s * s)));
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(a.P[i] - expect[i]) < 1e-13);
}

TEST_CASE("gram temperature divides the Gram matrix") {
  Rng rng(10);
  const FeatureGrid f = random_feature_grid(rng, 4, 16, 3);
  SimilarityOptions opts;
  opts.gram_temperature = 4.0;
  const TransitionMatrix a = build_transition_matrix(f, opts);
  const Tensor expect = softmax_rows(to_tensor(build_transition_matrix(f).gram / 4.0));
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(a.P[i] - expect[i]) < 1e-13);
}

TEST_CASE("gradient through the transition matrix") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    const FeatureGrid f = random_feature_grid(rng, 4, 12, 3);
    Tensor v = f.values.clone(true);
    const FdReport r = finite_diff_check(
        [&](const Tensor& x) {
          return random_projection(build_transition_matrix(FeatureGrid(f.height, f.width, x)).P, seed);
        },
        v);
    CHECK_MESSAGE(r.passed, r.message);
  }
}

}  // TEST_SUITE
