#include <doctest.h>

#include <cmath>

#include "rwss/losses.hpp"
#include "rwss/verify.hpp"

using namespace rwss;

namespace {

Tensor random_probs(std::size_t rows, std::size_t classes, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<double> v(rows * classes);
  for (double& x : v) x = rng.uniform(-2, 2);
  return softmax_rows(Tensor::matrix(rows, classes, v, grad));
}

Tensor random_logits(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-2, 2);
  return Tensor::matrix(rows, cols, v, true);
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("partial cross-entropy") {
  const Tensor onehot = Tensor::matrix(3, 2, {1, 0, 0, 1, 1, 0});
  const std::vector<std::uint8_t> labels = {0, 1, kUnlabeled};
  CHECK(partial_cross_entropy(onehot, labels).value.item() == doctest::Approx(0.0).epsilon(1e-11));

  const Tensor half = Tensor::matrix(2, 2, {0.5, 0.5, 0.9, 0.1});
  const std::vector<std::uint8_t> one = {1, kUnlabeled};
  const PartialCrossEntropy pce = partial_cross_entropy(half, one);
  CHECK(pce.labeled == 1);
  CHECK(pce.value.item() == doctest::Approx(0.693147).epsilon(1e-6));

  const std::vector<std::uint8_t> none = {kUnlabeled, kUnlabeled};
  const PartialCrossEntropy empty = partial_cross_entropy(half, none);
  CHECK(empty.empty);
  CHECK(empty.value.item() == 0.0);

  const std::vector<std::uint8_t> bad = {2, 0};
  CHECK_THROWS_AS(partial_cross_entropy(half, bad), std::invalid_argument);
}

TEST_CASE("soft eigenspace loss by hand") {
  const Tensor P = Tensor::matrix(2, 2, {0.75, 0.25, 0.25, 0.75});
  const Tensor U = Tensor::matrix(2, 2, {0.5, 0.5, 0.5, 0.5});
  const ComputingMatrices id = computing_matrices(TransformSpec::translation(0, 0), 1, 2);
  SoftSsOptions opts;
  opts.gamma = 0.01;
  const SoftSs same = soft_eigenspace_ss(P, P, id, opts);
  CHECK(same.value.item() == doctest::Approx(0.0).epsilon(1e-11));

  const SoftSs r = soft_eigenspace_ss(P, U, id, opts);
  const double kl = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(kl == doctest::Approx(0.130812).epsilon(1e-6));
  CHECK(r.kl == doctest::Approx(kl).epsilon(1e-10));
  CHECK(r.trace_term == doctest::Approx(0.0025).epsilon(1e-12));
  CHECK(r.value.item() == doctest::Approx(kl + 0.0025).epsilon(1e-10));
}

TEST_CASE("soft eigenspace loss is non-negative and vanishes on consistent pairs") {
  Rng rng(14);
  for (int t = 0; t < 20; ++t) {
    const FeatureGrid f = random_feature_grid(rng, 5, 25, 3);
    const FeatureGrid g = random_feature_grid(rng, 5, 25, 3);
    if (f.height != g.height || f.width != g.width) continue;
    const TransitionMatrix a = build_transition_matrix(f);
    const TransitionMatrix b = build_transition_matrix(g);
    CHECK(soft_eigenspace_ss(a, b, TransformSpec::flip()).kl >= 0.0);
    const TransitionMatrix fa = build_transition_matrix(transform_grid(f, TransformSpec::flip()));
    CHECK(std::abs(soft_eigenspace_ss(a, fa, TransformSpec::flip()).value.item()) < 1e-12);
  }
}

TEST_CASE("symmetric image gives zero flip loss") {
  const std::size_t h = 3, w = 4, c = 2;
  Rng rng(15);
  std::vector<double> v(h * w * c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w / 2; ++x)
      for (std::size_t k = 0; k < c; ++k)
        v[(y * w + x) * c + k] = v[(y * w + w - 1 - x) * c + k] = rng.uniform(-1, 1);
  const FeatureGrid f(h, w, Tensor::matrix(h * w, c, v));
  const TransitionMatrix a = build_transition_matrix(f);
  const TransitionMatrix b = build_transition_matrix(transform_grid(f, TransformSpec::flip()));
  CHECK(std::abs(soft_eigenspace_ss(a, b, TransformSpec::flip()).value.item()) < 1e-12);
}

TEST_CASE("stop-gradient target blocks the second branch") {
  Tensor la = random_logits(4, 4, 1);
  Tensor lb = random_logits(4, 4, 2);
  const ComputingMatrices cm = computing_matrices(TransformSpec::flip(), 2, 2);
  SoftSsOptions opts;
  opts.stop_gradient_target = true;
  {
    Tape tape;
    const SoftSs r = soft_eigenspace_ss(softmax_rows(la), softmax_rows(lb), cm, opts);
    tape.backward(r.value);
  }
  double a_norm = 0.0;
  for (double g : la.grad()) a_norm += std::abs(g);
  CHECK(a_norm > 0.0);
  for (double g : lb.grad()) CHECK(g == 0.0);
}

TEST_CASE("feature loss") {
  Rng rng(3);
  const FeatureGrid f = random_feature_grid(rng, 4, 16, 3);
  CHECK(feature_ss(f, transform_grid(f, TransformSpec::flip()), TransformSpec::flip()).item() == 0.0);

  const FeatureGrid a(2, 2, Tensor::filled({4, 2}, 1.5));
  const FeatureGrid b(2, 2, Tensor::filled({4, 2}, 1.25));
  CHECK(feature_ss(a, b, TransformSpec::flip()).item() == doctest::Approx(0.0625).epsilon(1e-14));

  // Direct oracle on a 3x3 grid under translation (1, 0).
  std::vector<double> va(9 * 2), vb(9 * 2);
  for (double& x : va) x = rng.uniform(-1, 1);
  for (double& x : vb) x = rng.uniform(-1, 1);
  const FeatureGrid ga(3, 3, Tensor::matrix(9, 2, va));
  const FeatureGrid gb(3, 3, Tensor::matrix(9, 2, vb));
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 1; x < 3; ++x)
      for (std::size_t k = 0; k < 2; ++k) {
        const double d = ga.at(y, x - 1, k) - gb.at(y, x, k);
        acc += d * d;
        ++count;
      }
  CHECK(feature_ss(ga, gb, TransformSpec::translation(1, 0)).item() ==
        doctest::Approx(acc / static_cast<double>(count)).epsilon(1e-13));
}

TEST_CASE("entropy loss") {
  CHECK(entropy_loss(Tensor::matrix(2, 3, {1, 0, 0, 0, 0, 1})).item() == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(entropy_loss(Tensor::filled({5, 4}, 0.25)).item() == doctest::Approx(1.386294).epsilon(1e-6));

  const Tensor s = random_probs(6, 3, 4);
  double acc = 0.0;
  for (double p : s.data()) acc -= p * std::log(p + kLogEps);
  CHECK(entropy_loss(s).item() == doctest::Approx(acc / 6.0).epsilon(1e-12));
  CHECK(entropy_loss(s).item() <= std::log(3.0));
}

TEST_CASE("total loss") {
  LossWeights zero;
  zero.entropy = 0.0;
  zero.ss = 0.0;
  const TotalLoss t0 = total_loss(Tensor::scalar(0.7), Tensor::scalar(1.0), Tensor::scalar(2.0), zero);
  CHECK(t0.value.item() == 0.7);
  CHECK(total_loss(Tensor::scalar(0.0), Tensor::scalar(0.0), Tensor::scalar(0.0), {}).value.item() == 0.0);

  const TotalLoss t = total_loss(Tensor::scalar(0.5), Tensor::scalar(1.0), Tensor::scalar(0.2), {}, 11);
  CHECK(t.value.item() == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(t.breakdown.total == t.value.item());
  CHECK(std::abs(t.breakdown.total - (t.breakdown.ce + 0.2 * t.breakdown.entropy + t.breakdown.ss)) <= 1e-12);
  CHECK(t.breakdown.labeled == 11);

  const TotalLoss ce_only = total_loss(Tensor::scalar(0.5), Tensor(), Tensor(), {});
  CHECK(ce_only.value.item() == 0.5);
  CHECK(ce_only.breakdown.ss == 0.0);

  LossWeights neg;
  neg.ss = -1.0;
  CHECK_THROWS_AS(total_loss(Tensor::scalar(0.5), Tensor(), Tensor(), neg), std::invalid_argument);
}

TEST_CASE("variation metric") {
  const std::vector<double> a = {1.0, -2.0, 0.0, 4.0};
  const std::vector<double> neg = {-1.0, 2.0, 0.0, -4.0};
  CHECK(variation_metric(a, a) == 0.0);
  // Three opposite pairs at 100%, one double zero at 0%.
  CHECK(variation_metric(a, neg) == doctest::Approx(75.0));
  const std::vector<double> b = {-1.0, 2.0, -3.0, -4.0};
  const std::vector<double> c = {1.0, -2.0, 3.0, 4.0};
  CHECK(variation_metric(b, c) == doctest::Approx(100.0));

  Rng rng(5);
  const FeatureGrid f = random_feature_grid(rng, 4, 16, 3);
  CHECK(variation_metric(f, transform_grid(f, TransformSpec::flip()), TransformSpec::flip()) == 0.0);
  const TransitionMatrix tm = build_transition_matrix(f);
  const TransitionMatrix tf = build_transition_matrix(transform_grid(f, TransformSpec::flip()));
  CHECK(variation_metric(tm, tf, TransformSpec::flip()) < 1e-9);
}

TEST_CASE("loss gradients") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    CAPTURE(seed);
    Tensor logits = random_logits(12, 3, seed);
    std::vector<std::uint8_t> labels(12, kUnlabeled);
    labels[1] = 0;
    labels[5] = 2;
    labels[7] = 1;
    FdReport r = finite_diff_check(
        [&](const Tensor& x) { return partial_cross_entropy(softmax_rows(x), labels).value; }, logits);
    CHECK_MESSAGE(r.passed, r.message);
    r = finite_diff_check([&](const Tensor& x) { return entropy_loss(softmax_rows(x)); }, logits);
    CHECK_MESSAGE(r.passed, r.message);

    Tensor la = random_logits(6, 6, seed + 10);
    Tensor lb = random_logits(6, 6, seed + 20);
    for (const TransformSpec& spec : {TransformSpec::flip(), TransformSpec::translation(1, -1)}) {
      const ComputingMatrices cm = computing_matrices(spec, 2, 3);
      r = finite_diff_check(
          [&] { return soft_eigenspace_ss(softmax_rows(la), softmax_rows(lb), cm).value; }, {la, lb});
      CHECK_MESSAGE(r.passed, r.message);
    }

    Tensor fa = random_logits(6, 2, seed + 30);
    Tensor fb = random_logits(6, 2, seed + 40);
    r = finite_diff_check(
        [&] { return feature_ss(FeatureGrid(2, 3, fa), FeatureGrid(2, 3, fb), TransformSpec::translation(1, 0)); },
        {fa, fb});
    CHECK_MESSAGE(r.passed, r.message);
  }
}

}  // TEST_SUITE
