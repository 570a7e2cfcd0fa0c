#pragma once

// Embedded random walk: f_out = alpha * P * f + f, repeated `steps` times
// with the same P.

#include <cstddef>

#include "rwss/grid.hpp"
#include "rwss/similarity.hpp"

namespace rwss {

struct WalkParams {
  // Scalar tensor; trainable when requires_grad is set.
  Tensor alpha = Tensor::scalar(0.5);
  std::size_t steps = 1;
};

FeatureGrid random_walk(const FeatureGrid& f, const Tensor& P, const WalkParams& params);
FeatureGrid random_walk(const FeatureGrid& f, const TransitionMatrix& tm, const WalkParams& params);

// Per-cell sum of absolute channel values, as an M x N matrix.
Mat uniformity_map(const FeatureGrid& f);

// Mean over labelled regions of the within-region variance of a scalar map.
// `regions` holds a region id per cell; negative ids are ignored.
double within_region_variance(const Mat& map, const std::vector<int>& regions);

}  // namespace rwss
