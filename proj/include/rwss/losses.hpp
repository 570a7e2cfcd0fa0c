#pragma once

// Training objectives.
//
//   total = CE + w_entropy * E(s) + w_ss * ss
//   ss_P  = mean_rows KL(T(P(x)) || P(t(x))) + gamma * (tr T(P(x)) - tr P(t(x)))^2
//
// All logs are guarded with kLogEps so values are bit-reproducible.

#include <cstddef>
#include <cstdint>
#include <span>

#include "rwss/grid.hpp"
#include "rwss/similarity.hpp"
#include "rwss/transforms.hpp"

namespace rwss {

inline constexpr double kLogEps = 1e-12;
inline constexpr std::uint8_t kUnlabeled = 255;

struct LossWeights {
  double entropy = 0.2;  // omega_1
  double ss = 1.0;       // omega_2
  double trace = 0.01;   // gamma
};

struct LossBreakdown {
  double ce = 0.0;
  double entropy = 0.0;
  double ss = 0.0;
  double total = 0.0;
  std::size_t labeled = 0;
};

struct PartialCrossEntropy {
  Tensor value;
  std::size_t labeled = 0;
  // No labelled pixels: value is a constant 0.
  bool empty = false;
};

// Mean of -log s(p, y_p) over labelled pixels. `s` is (H*W) x C class
// probabilities; labels hold a class id per pixel or kUnlabeled.
PartialCrossEntropy partial_cross_entropy(const Tensor& s, std::span<const std::uint8_t> labels);

struct SoftSsOptions {
  double gamma = 0.01;
  // Treat the transformed-input branch as a constant target.
  bool stop_gradient_target = false;
};

struct SoftSs {
  Tensor value;
  double kl = 0.0;
  double trace_term = 0.0;  // already multiplied by gamma
};

// P_a is P(x), P_b is P(t(x)); both n x n for the same grid.
SoftSs soft_eigenspace_ss(const Tensor& P_a, const Tensor& P_b, const ComputingMatrices& cm,
                          const SoftSsOptions& opts = {});
SoftSs soft_eigenspace_ss(const TransitionMatrix& tm_a, const TransitionMatrix& tm_b,
                          const TransformSpec& spec, const SoftSsOptions& opts = {});

// Mean squared difference between T(f_a) and f_b over valid cells.
Tensor feature_ss(const FeatureGrid& f_a, const FeatureGrid& f_b, const TransformSpec& spec);

// Mean per-pixel entropy of (H*W) x C probabilities.
Tensor entropy_loss(const Tensor& s);

struct TotalLoss {
  Tensor value;
  LossBreakdown breakdown;
};

// Undefined `entropy` / `ss` tensors count as zero and are left off the graph.
TotalLoss total_loss(const Tensor& ce, const Tensor& entropy, const Tensor& ss,
                     const LossWeights& weights, std::size_t labeled = 0);

// Mean elementwise |a - b| / (|a| + |b|) in percent; elements where both are
// zero contribute 0.
double variation_metric(std::span<const double> transformed_original,
                        std::span<const double> from_transformed_input);
// Features: T(f) against f' over valid cells.
double variation_metric(const FeatureGrid& f, const FeatureGrid& f_transformed,
                        const TransformSpec& spec);
// Transition matrices: T(P) against the valid block of P'.
double variation_metric(const TransitionMatrix& tm, const TransitionMatrix& tm_transformed,
                        const TransformSpec& spec);

}  // namespace rwss
