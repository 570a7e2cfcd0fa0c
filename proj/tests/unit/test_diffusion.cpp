#include <doctest.h>

#include <cmath>

#include "rwss/diffusion.hpp"
#include "rwss/spectral.hpp"
#include "rwss/verify.hpp"

using namespace rwss;

namespace {

WalkParams walk(double alpha, bool grad = false) {
  WalkParams w;
  w.alpha = Tensor::scalar(alpha, grad);
  return w;
}

double region_variance(const Mat& x, std::size_t begin, std::size_t end) {
  const Mat block = x.middleRows(begin, end - begin);
  const Eigen::RowVectorXd mu = block.colwise().mean();
  return (block.rowwise() - mu).squaredNorm() / static_cast<double>(end - begin);
}

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("alpha zero is the identity") {
  Rng rng(1);
  const FeatureGrid f = random_feature_grid(rng, 5, 25, 4);
  const TransitionMatrix tm = build_transition_matrix(f);
  const FeatureGrid out = random_walk(f, tm, walk(0.0));
  for (std::size_t i = 0; i < f.values.size(); ++i) CHECK(out.values[i] == f.values[i]);
}

TEST_CASE("identity P scales by one plus alpha") {
  const Tensor eye = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const FeatureGrid f(1, 3, Tensor::matrix(3, 2, {1, -2, 0.5, 3, -4, 0}));
  const FeatureGrid out = random_walk(f, eye, walk(0.3));
  for (std::size_t i = 0; i < 6; ++i) CHECK(out.values[i] == doctest::Approx(1.3 * f.values[i]).epsilon(1e-15));
}

TEST_CASE("hand example") {
  const Tensor P = Tensor::matrix(2, 2, {0.75, 0.25, 0.25, 0.75});
  const FeatureGrid f(1, 2, Tensor::matrix(2, 2, {2, 0, 0, 2}));
  const FeatureGrid out = random_walk(f, P, walk(1.0));
  CHECK(out.values[0] == 3.5);
  CHECK(out.values[1] == 0.5);
  CHECK(out.values[2] == 0.5);
  CHECK(out.values[3] == 3.5);
}

TEST_CASE("several steps reuse P") {
  const Tensor P = Tensor::matrix(2, 2, {0.75, 0.25, 0.25, 0.75});
  const FeatureGrid f(1, 2, Tensor::matrix(2, 1, {1, 0}));
  WalkParams w = walk(1.0);
  w.steps = 2;
  const FeatureGrid out = random_walk(f, P, w);
  // (I + P)^2 f
  CHECK(out.values[0] == doctest::Approx(1.75 * 1.75 + 0.25 * 0.25));
  CHECK(out.values[1] == doctest::Approx(1.75 * 0.25 + 0.25 * 1.75));
}

TEST_CASE("dimension mismatch is rejected") {
  const Tensor P = Tensor::matrix(2, 2, {0.5, 0.5, 0.5, 0.5});
  const FeatureGrid f(1, 3, Tensor::zeros({3, 2}));
  CHECK_THROWS(random_walk(f, P, walk(0.5)));
}

TEST_CASE("linearity in the features") {
  Rng rng(3);
  const FeatureGrid f = random_feature_grid(rng, 4, 16, 3);
  FeatureGrid g = f;
  g.values = f.values.clone();
  for (double& v : g.values.mutable_data()) v = rng.uniform(-1, 1);
  const Tensor P = build_transition_matrix(f).P;
  const double a = 0.7, b = -1.3;
  const FeatureGrid mix(f.height, f.width, add(scale(f.values, a), scale(g.values, b)));
  const FeatureGrid lhs = random_walk(mix, P, walk(0.4));
  const FeatureGrid rf = random_walk(f, P, walk(0.4));
  const FeatureGrid rg = random_walk(g, P, walk(0.4));
  for (std::size_t i = 0; i < lhs.values.size(); ++i)
    CHECK(std::abs(lhs.values[i] - (a * rf.values[i] + b * rg.values[i])) < 1e-12);
}

TEST_CASE("block-uniform P contracts each block") {
  Mat W = Mat::Zero(6, 6);
  W.block(0, 0, 3, 3).setOnes();
  W.block(3, 3, 3, 3).setOnes();
  const TransitionMatrix tm = transition_from_affinity(W, 2, 3);
  Rng rng(8);
  std::vector<double> v(6 * 4);
  for (double& x : v) x = rng.uniform(-1, 1);
  const FeatureGrid fg(2, 3, Tensor::matrix(6, 4, v));
  for (double alpha : {0.0, 0.25, 1.0, 3.0}) {
    const Mat in = to_mat(fg.values);
    const Mat out = to_mat(random_walk(fg, tm, walk(alpha)).values);
    CHECK(region_variance(out, 0, 3) <= region_variance(in, 0, 3) + 1e-12);
    CHECK(region_variance(out, 3, 6) <= region_variance(in, 3, 6) + 1e-12);
  }
}

TEST_CASE("gradient with respect to alpha is P f") {
  Rng rng(4);
  const FeatureGrid f = random_feature_grid(rng, 3, 9, 2);
  const Tensor P = build_transition_matrix(f).P;
  WalkParams w = walk(0.5, true);
  {
    Tape tape;
    const Tensor out = sum(random_walk(f, P, w).values);
    tape.backward(out);
  }
  const Tensor pf = matmul(P, f.values);
  CHECK(w.alpha.grad()[0] == doctest::Approx(sum(pf).item()).epsilon(1e-12));
}

TEST_CASE("gradients in f, P and alpha") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    const FeatureGrid f = random_feature_grid(rng, 3, 9, 3);
    Tensor x = f.values.clone(true);
    Tensor logits = Tensor::zeros({f.cells(), f.cells()}, true);
    for (double& v : logits.mutable_data()) v = rng.uniform(-1, 1);
    WalkParams w = walk(0.6, true);
    w.steps = 2;
    const FdReport r = finite_diff_check(
        [&] {
          return random_projection(random_walk(FeatureGrid(f.height, f.width, x), softmax_rows(logits), w).values,
                                   seed);
        },
        {x, logits, w.alpha});
    CHECK_MESSAGE(r.passed, r.message);
  }
}

TEST_CASE("uniformity map") {
  const FeatureGrid one(1, 2, Tensor::matrix(2, 1, {-2.5, 4}));
  const Mat m1 = uniformity_map(one);
  CHECK(m1(0, 0) == 2.5);
  CHECK(m1(0, 1) == 4.0);
  const FeatureGrid two(1, 1, Tensor::matrix(1, 2, {3, -4}));
  CHECK(uniformity_map(two)(0, 0) == 7.0);
}

TEST_CASE("region variance does not grow on a two-region scene") {
  // Left and right halves with distinct noisy features; P comes from a
  // region embedding, so it is uniform within a half with slight leakage.
  const std::size_t h = 4, w = 6;
  Rng rng(12);
  std::vector<double> v, e;
  std::vector<int> regions;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const bool left = x < w / 2;
      v.push_back((left ? 3.0 : -3.0) + 0.3 * rng.normal());
      v.push_back((left ? 1.5 : 2.0) + 0.3 * rng.normal());
      e.push_back(left ? 2.0 : 0.0);
      e.push_back(left ? 0.0 : 2.0);
      regions.push_back(left ? 0 : 1);
    }
  const FeatureGrid f(h, w, Tensor::matrix(h * w, 2, v));
  const TransitionMatrix tm = build_transition_matrix(FeatureGrid(h, w, Tensor::matrix(h * w, 2, e)));
  const double before = within_region_variance(uniformity_map(f), regions);
  for (double alpha : {0.25, 0.5, 1.0}) {
    const double after = within_region_variance(uniformity_map(random_walk(f, tm, walk(alpha))), regions);
    CHECK(after <= before + 1e-12);
  }
}

}  // TEST_SUITE
