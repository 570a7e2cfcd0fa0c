#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

#include "rwss/tensor.hpp"

namespace rwss {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// C-channel features on an M x N grid, flattened row-major (cell y*N + x)
// into an (M*N) x C tensor.
struct FeatureGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor values;

  FeatureGrid() = default;
  FeatureGrid(std::size_t h, std::size_t w, Tensor v);

  std::size_t cells() const { return height * width; }
  std::size_t channels() const { return values.cols(); }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return values[(y * width + x) * channels() + c];
  }
};

// H x W x C image of doubles, HWC order.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;

  // (H*W) x C tensor view for the model.
  Tensor to_tensor() const;
};

Mat to_mat(const Tensor& t);
Tensor to_tensor(const Mat& m, bool requires_grad = false);

}  // namespace rwss
