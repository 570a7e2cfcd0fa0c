#include "rwss/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace rwss {

PartialCrossEntropy partial_cross_entropy(const Tensor& s, std::span<const std::uint8_t> labels) {
  if (s.dim() != 2 || s.rows() != labels.size())
    throw ShapeError("partial_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for predictions " + shape_string(s.shape()));
  const std::size_t classes = s.cols();
  PartialCrossEntropy out;
  for (auto y : labels) {
    if (y == kUnlabeled) continue;
    if (y >= classes)
      throw std::invalid_argument("partial_cross_entropy: label " + std::to_string(y) +
                                  " outside " + std::to_string(classes) + " classes");
    ++out.labeled;
  }
  if (out.labeled == 0) {
    out.empty = true;
    out.value = Tensor::scalar(0.0);
    return out;
  }
  std::vector<double> w(s.size(), 0.0);
  const double inv = -1.0 / static_cast<double>(out.labeled);
  for (std::size_t p = 0; p < labels.size(); ++p)
    if (labels[p] != kUnlabeled) w[p * classes + labels[p]] = inv;
  out.value = weighted_sum(log(s, kLogEps), w);
  return out;
}

SoftSs soft_eigenspace_ss(const Tensor& P_a, const Tensor& P_b, const ComputingMatrices& cm,
                          const SoftSsOptions& opts) {
  if (opts.gamma < 0.0) throw std::invalid_argument("soft_eigenspace_ss: negative gamma");
  Tensor a = transform_transition(P_a, cm);
  Tensor b = restrict_to_valid(P_b, cm);
  if (opts.stop_gradient_target) b = b.detach();
  const double rows = static_cast<double>(a.rows());
  Tensor kl = scale(sum(mul(a, sub(log(a, kLogEps), log(b, kLogEps)))), 1.0 / rows);
  Tensor tr = scale(square(sub(trace(a), trace(b))), opts.gamma);
  SoftSs out;
  out.kl = kl.item();
  out.trace_term = tr.item();
  out.value = add(kl, tr);
  return out;
}

SoftSs soft_eigenspace_ss(const TransitionMatrix& tm_a, const TransitionMatrix& tm_b,
                          const TransformSpec& spec, const SoftSsOptions& opts) {
  if (tm_a.height != tm_b.height || tm_a.width != tm_b.width)
    throw ShapeError("soft_eigenspace_ss: transition matrices of different grids");
  return soft_eigenspace_ss(tm_a.P, tm_b.P, computing_matrices(spec, tm_a.height, tm_a.width),
                            opts);
}

Tensor feature_ss(const FeatureGrid& f_a, const FeatureGrid& f_b, const TransformSpec& spec) {
  if (f_a.height != f_b.height || f_a.width != f_b.width || f_a.channels() != f_b.channels())
    throw ShapeError("feature_ss: feature grids differ in shape");
  const auto cm = computing_matrices(spec, f_a.height, f_a.width);
  std::vector<std::ptrdiff_t> src, dst;
  for (auto i : cm.valid_rows) {
    src.push_back(cm.source[i]);
    dst.push_back(static_cast<std::ptrdiff_t>(i));
  }
  return mean(square(sub(gather_rows(f_a.values, src), gather_rows(f_b.values, dst))));
}

Tensor entropy_loss(const Tensor& s) {
  if (s.dim() != 2) throw ShapeError("entropy_loss: expected (H*W) x C probabilities");
  return scale(sum(mul(s, log(s, kLogEps))), -1.0 / static_cast<double>(s.rows()));
}

TotalLoss total_loss(const Tensor& ce, const Tensor& entropy, const Tensor& ss,
                     const LossWeights& weights, std::size_t labeled) {
  if (weights.entropy < 0.0 || weights.ss < 0.0 || weights.trace < 0.0)
    throw std::invalid_argument("total_loss: weights must be non-negative");
  TotalLoss out;
  out.value = ce;
  out.breakdown.ce = ce.item();
  out.breakdown.labeled = labeled;
  if (entropy.defined()) {
    out.breakdown.entropy = entropy.item();
    if (weights.entropy != 0.0) out.value = add(out.value, scale(entropy, weights.entropy));
  }
  if (ss.defined()) {
    out.breakdown.ss = ss.item();
    if (weights.ss != 0.0) out.value = add(out.value, scale(ss, weights.ss));
  }
  out.breakdown.total = out.value.item();
  return out;
}

double variation_metric(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("variation_metric: operand sizes differ");
  if (a.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::abs(a[i]) + std::abs(b[i]);
    if (den > 0.0) acc += std::abs(a[i] - b[i]) / den;
  }
  return 100.0 * acc / static_cast<double>(a.size());
}

double variation_metric(const FeatureGrid& f, const FeatureGrid& f_transformed,
                        const TransformSpec& spec) {
  if (f.height != f_transformed.height || f.width != f_transformed.width ||
      f.channels() != f_transformed.channels())
    throw ShapeError("variation_metric: feature grids differ in shape");
  const auto cm = computing_matrices(spec, f.height, f.width);
  std::vector<std::ptrdiff_t> src, dst;
  for (auto i : cm.valid_rows) {
    src.push_back(cm.source[i]);
    dst.push_back(static_cast<std::ptrdiff_t>(i));
  }
  const Tensor a = gather_rows(f.values.detach(), src);
  const Tensor b = gather_rows(f_transformed.values.detach(), dst);
  return variation_metric(a.data(), b.data());
}

double variation_metric(const TransitionMatrix& tm, const TransitionMatrix& tm_transformed,
                        const TransformSpec& spec) {
  if (tm.height != tm_transformed.height || tm.width != tm_transformed.width)
    throw ShapeError("variation_metric: transition matrices of different grids");
  const auto cm = computing_matrices(spec, tm.height, tm.width);
  const Tensor a = transform_transition(tm.P.detach(), cm);
  const Tensor b = restrict_to_valid(tm_transformed.P.detach(), cm);
  return variation_metric(a.data(), b.data());
}

}  // namespace rwss
