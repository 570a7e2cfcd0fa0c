#include "rwss/similarity.hpp"

#include <cmath>
#include <stdexcept>

namespace rwss {

FeatureGrid::FeatureGrid(std::size_t h, std::size_t w, Tensor v)
    : height(h), width(w), values(std::move(v)) {
  if (values.dim() != 2 || values.rows() != h * w)
    throw ShapeError("FeatureGrid: values " + shape_string(values.shape()) + " for a " +
                     std::to_string(h) + "x" + std::to_string(w) + " grid");
}

Tensor Image::to_tensor() const {
  return Tensor::matrix(height * width, channels, data);
}

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), t.cols());
  std::copy(t.data().begin(), t.data().end(), m.data());
  return m;
}

Tensor to_tensor(const Mat& m, bool requires_grad) {
  return Tensor::matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                        std::vector<double>(m.data(), m.data() + m.size()), requires_grad);
}

void fill_affinity(TransitionMatrix& tm) {
  const auto n = tm.gram.rows();
  tm.shift = tm.gram.maxCoeff();
  tm.W = (tm.gram.array() - tm.shift).exp().matrix();
  tm.D = tm.W.rowwise().sum();
  tm.log_normalizer.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = tm.gram.row(i).maxCoeff();
    tm.log_normalizer[i] = mx + std::log((tm.gram.row(i).array() - mx).exp().sum());
  }
}

TransitionMatrix build_transition_matrix(const FeatureGrid& f, const SimilarityOptions& opts) {
  if (f.cells() == 0) throw std::invalid_argument("build_transition_matrix: empty grid");
  if (!(opts.gram_temperature > 0.0))
    throw std::invalid_argument("build_transition_matrix: temperature must be positive");
  Tensor g = gram(f.values);
  if (opts.gram_temperature != 1.0) g = scale(g, 1.0 / opts.gram_temperature);

  TransitionMatrix tm;
  tm.height = f.height;
  tm.width = f.width;
  tm.gram = to_mat(g);
  // Floating-point Gram products are symmetric already; enforce it bitwise.
  tm.gram = (0.5 * (tm.gram + tm.gram.transpose())).eval();
  tm.P = softmax_rows(g);
  fill_affinity(tm);
  return tm;
}

}  // namespace rwss
