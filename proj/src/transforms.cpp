#include "rwss/transforms.hpp"

#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace rwss {

void TransformSpec::validate(std::size_t height, std::size_t width) const {
  if (kind == Kind::flip) return;
  if (static_cast<std::size_t>(std::abs(dx)) >= width ||
      static_cast<std::size_t>(std::abs(dy)) >= height)
    throw std::invalid_argument("translation (" + std::to_string(dx) + "," +
                                std::to_string(dy) + ") out of range for a " +
                                std::to_string(height) + "x" + std::to_string(width) + " grid");
}

std::string TransformSpec::to_string() const {
  if (kind == Kind::flip) return "flip";
  std::ostringstream os;
  os << "translation(" << dx << "," << dy << ")";
  return os.str();
}

TransformSpec sample_transform(TransformMode mode, std::size_t height, std::size_t width,
                               Rng& rng) {
  if (mode == TransformMode::random)
    mode = rng.bernoulli(0.5) ? TransformMode::flip : TransformMode::translation;
  if (mode == TransformMode::flip) return TransformSpec::flip();
  const long max_dx = std::min<long>(static_cast<long>((width + 3) / 4), static_cast<long>(width) - 1);
  const long max_dy = std::min<long>(static_cast<long>((height + 3) / 4), static_cast<long>(height) - 1);
  if (max_dx == 0 && max_dy == 0) return TransformSpec::translation(0, 0);
  for (;;) {
    const long dx = rng.between(-max_dx, max_dx);
    const long dy = rng.between(-max_dy, max_dy);
    if (dx != 0 || dy != 0)
      return TransformSpec::translation(static_cast<int>(dx), static_cast<int>(dy));
  }
}

std::vector<std::size_t> ComputingMatrices::valid_sources() const {
  std::vector<std::size_t> out;
  out.reserve(valid_rows.size());
  for (auto i : valid_rows) out.push_back(static_cast<std::size_t>(source[i]));
  return out;
}

Mat ComputingMatrices::Tr() const {
  const auto n = static_cast<Eigen::Index>(cells());
  Mat m = Mat::Zero(n, n);
  for (std::size_t i = 0; i < cells(); ++i)
    if (source[i] >= 0) m(static_cast<Eigen::Index>(i), source[i]) = 1.0;
  return m;
}

Mat ComputingMatrices::Tc() const { return Tr().transpose(); }

ComputingMatrices computing_matrices(const TransformSpec& spec, std::size_t height,
                                     std::size_t width) {
  spec.validate(height, width);
  ComputingMatrices cm;
  cm.height = height;
  cm.width = width;
  cm.source.assign(height * width, -1);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      long sy = static_cast<long>(y), sx = static_cast<long>(x);
      if (spec.kind == TransformSpec::Kind::flip) {
        sx = static_cast<long>(width) - 1 - sx;
      } else {
        sy -= spec.dy;
        sx -= spec.dx;
      }
      if (sy < 0 || sx < 0 || sy >= static_cast<long>(height) || sx >= static_cast<long>(width))
        continue;
      const std::size_t i = y * width + x;
      cm.source[i] = static_cast<std::ptrdiff_t>(static_cast<std::size_t>(sy) * width +
                                                 static_cast<std::size_t>(sx));
      cm.valid_rows.push_back(i);
    }
  cm.valid_height = height - static_cast<std::size_t>(std::abs(spec.dy));
  cm.valid_width = width - static_cast<std::size_t>(std::abs(spec.dx));
  return cm;
}

Image transform_image(const Image& img, const TransformSpec& spec, std::size_t stride) {
  if (stride == 0) throw std::invalid_argument("transform_image: zero stride");
  const TransformSpec pixel_spec =
      spec.kind == TransformSpec::Kind::flip
          ? spec
          : TransformSpec::translation(spec.dx * static_cast<int>(stride),
                                       spec.dy * static_cast<int>(stride));
  const auto cm = computing_matrices(pixel_spec, img.height, img.width);
  Image out(img.height, img.width, img.channels, 0.0);
  const std::size_t c = img.channels;
  for (std::size_t i = 0; i < cm.cells(); ++i) {
    if (cm.source[i] < 0) continue;
    std::copy_n(img.data.begin() + cm.source[i] * static_cast<std::ptrdiff_t>(c), c,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return out;
}

FeatureGrid transform_grid(const FeatureGrid& f, const TransformSpec& spec) {
  const auto cm = computing_matrices(spec, f.height, f.width);
  return FeatureGrid(f.height, f.width, gather_rows(f.values, cm.source));
}

Mat conjugate(const Mat& P, const ComputingMatrices& cm) {
  if (static_cast<std::size_t>(P.rows()) != cm.cells() || P.rows() != P.cols())
    throw ShapeError("conjugate: matrix does not match the computing matrices");
  return cm.Tr() * P * cm.Tc();
}

namespace {

Tensor block_p(const Tensor& P, const ComputingMatrices& cm, const std::vector<std::size_t>& idx) {
  if (P.dim() != 2 || P.rows() != cm.cells() || P.cols() != cm.cells())
    throw ShapeError("transition matrix does not match the computing matrices");
  Tensor p = select(P, idx, idx);
  return cm.all_valid() ? p : row_normalize(p);
}

TransitionMatrix block(const TransitionMatrix& tm, const ComputingMatrices& cm,
                       const std::vector<std::size_t>& idx) {
  if (tm.size() != cm.cells() || tm.height != cm.height || tm.width != cm.width)
    throw ShapeError("transition matrix does not match the computing matrices");
  TransitionMatrix out;
  out.height = cm.valid_height;
  out.width = cm.valid_width;
  out.P = block_p(tm.P, cm, idx);
  const auto n = static_cast<Eigen::Index>(idx.size());
  auto gather = [&](const Mat& m) {
    Mat g(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        g(i, j) = m(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]),
                    static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]));
    return g;
  };
  if (tm.gram.size() > 0) {
    out.gram = gather(tm.gram);
    fill_affinity(out);
  } else {
    // Built from an explicit affinity: carry W over unchanged.
    out.W = gather(tm.W);
    out.D = out.W.rowwise().sum();
    out.log_normalizer = out.D.array().log().matrix();
  }
  return out;
}

}  // namespace

TransitionMatrix transform_transition(const TransitionMatrix& tm, const ComputingMatrices& cm) {
  return block(tm, cm, cm.valid_sources());
}

TransitionMatrix restrict_to_valid(const TransitionMatrix& tm, const ComputingMatrices& cm) {
  return block(tm, cm, cm.valid_rows);
}

Tensor transform_transition(const Tensor& P, const ComputingMatrices& cm) {
  return block_p(P, cm, cm.valid_sources());
}

Tensor restrict_to_valid(const Tensor& P, const ComputingMatrices& cm) {
  return block_p(P, cm, cm.valid_rows);
}

}  // namespace rwss
