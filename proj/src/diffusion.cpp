#include "rwss/diffusion.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace rwss {

FeatureGrid random_walk(const FeatureGrid& f, const Tensor& P, const WalkParams& params) {
  if (P.dim() != 2 || P.rows() != f.cells() || P.cols() != f.cells())
    throw ShapeError("random_walk: transition matrix " + shape_string(P.shape()) + " for " +
                     std::to_string(f.cells()) + " cells");
  if (params.alpha.size() != 1) throw ShapeError("random_walk: alpha must be a scalar");
  Tensor out = f.values;
  for (std::size_t s = 0; s < params.steps; ++s)
    out = add(scale_by(params.alpha, matmul(P, out)), out);
  return FeatureGrid(f.height, f.width, out);
}

FeatureGrid random_walk(const FeatureGrid& f, const TransitionMatrix& tm,
                        const WalkParams& params) {
  if (tm.height != f.height || tm.width != f.width)
    throw ShapeError("random_walk: transition matrix built for a different grid");
  return random_walk(f, tm.P, params);
}

Mat uniformity_map(const FeatureGrid& f) {
  Mat map = Mat::Zero(static_cast<Eigen::Index>(f.height), static_cast<Eigen::Index>(f.width));
  const std::size_t c = f.channels();
  for (std::size_t y = 0; y < f.height; ++y)
    for (std::size_t x = 0; x < f.width; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) acc += std::abs(f.at(y, x, k));
      map(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = acc;
    }
  return map;
}

double within_region_variance(const Mat& map, const std::vector<int>& regions) {
  if (regions.size() != static_cast<std::size_t>(map.size()))
    throw ShapeError("within_region_variance: region labels do not cover the map");
  struct Acc {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
  };
  std::map<int, Acc> acc;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (regions[i] < 0) continue;
    auto& a = acc[regions[i]];
    const double v = map.data()[i];
    a.sum += v;
    a.sq += v * v;
    ++a.n;
  }
  if (acc.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [id, a] : acc) {
    const double m = a.sum / static_cast<double>(a.n);
    total += std::max(0.0, a.sq / static_cast<double>(a.n) - m * m);
  }
  return total / static_cast<double>(acc.size());
}

}  // namespace rwss
