#include "rwss/spectral.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rwss {

SymmetricEigen symmetric_eigen(const Mat& a, int max_iterations_per_value) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != a.rows()) throw ShapeError("symmetric_eigen: matrix not square");
  SymmetricEigen out;
  if (n == 0) return out;
  Mat V = a;
  Vec d(n), e(n);

  // Householder reduction to tridiagonal form.
  for (int j = 0; j < n; ++j) d[j] = V(n - 1, j);
  for (int i = n - 1; i > 0; --i) {
    double scale = 0.0, h = 0.0;
    for (int k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (int j = 0; j < i; ++j) {
        d[j] = V(i - 1, j);
        V(i, j) = 0.0;
        V(j, i) = 0.0;
      }
    } else {
      for (int k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (int j = 0; j < i; ++j) e[j] = 0.0;
      for (int j = 0; j < i; ++j) {
        f = d[j];
        V(j, i) = f;
        g = e[j] + V(j, j) * f;
        for (int k = j + 1; k <= i - 1; ++k) {
          g += V(k, j) * d[k];
          e[k] += V(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (int j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (int j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (int j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (int k = j; k <= i - 1; ++k) V(k, j) -= (f * e[k] + g * d[k]);
        d[j] = V(i - 1, j);
        V(i, j) = 0.0;
      }
    }
    d[i] = h;
  }
  // Accumulate the transformations.
  for (int i = 0; i < n - 1; ++i) {
    V(n - 1, i) = V(i, i);
    V(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (int k = 0; k <= i; ++k) d[k] = V(k, i + 1) / h;
      for (int j = 0; j <= i; ++j) {
        double g = 0.0;
        for (int k = 0; k <= i; ++k) g += V(k, i + 1) * V(k, j);
        for (int k = 0; k <= i; ++k) V(k, j) -= g * d[k];
      }
    }
    for (int k = 0; k <= i; ++k) V(k, i + 1) = 0.0;
  }
  for (int j = 0; j < n; ++j) {
    d[j] = V(n - 1, j);
    V(n - 1, j) = 0.0;
  }
  V(n - 1, n - 1) = 1.0;
  e[0] = 0.0;

  // Implicit QL on the tridiagonal matrix.
  for (int i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  double f = 0.0, tst1 = 0.0;
  const double eps = std::ldexp(1.0, -52);
  for (int l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    int m = l;
    while (m < n) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m >= n) m = n - 1;
    if (m > l) {
      int iter = 0;
      do {
        if (++iter > max_iterations_per_value)
          throw ConvergenceError("symmetric_eigen: no convergence for eigenvalue " +
                                 std::to_string(l) + " after " +
                                 std::to_string(max_iterations_per_value) + " iterations");
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (int i = l + 2; i < n; ++i) d[i] -= h;
        f += h;

        p = d[m];
        double c = 1.0, c2 = c, c3 = c;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (int i = m - 1; i >= l; --i) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[i];
          h = c * p;
          r = std::hypot(p, e[i]);
          e[i + 1] = s * r;
          s = e[i] / r;
          c = p / r;
          p = c * d[i] - s * g;
          d[i + 1] = h + s * (c * g + s * d[i]);
          for (int k = 0; k < n; ++k) {
            h = V(k, i + 1);
            V(k, i + 1) = s * V(k, i) + c * h;
            V(k, i) = c * V(k, i) - s * h;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return d[x] < d[y]; });
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (int k = 0; k < n; ++k) {
    out.values[k] = d[order[static_cast<std::size_t>(k)]];
    out.vectors.col(k) = V.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

TransitionMatrix transition_from_affinity(const Mat& W, std::size_t height, std::size_t width) {
  const auto n = W.rows();
  if (W.cols() != n || static_cast<std::size_t>(n) != height * width)
    throw ShapeError("transition_from_affinity: affinity does not match the grid");
  if ((W - W.transpose()).cwiseAbs().maxCoeff() > 0.0)
    throw std::invalid_argument("transition_from_affinity: affinity is not symmetric");
  if (W.minCoeff() < 0.0) throw std::invalid_argument("transition_from_affinity: negative affinity");
  TransitionMatrix tm;
  tm.height = height;
  tm.width = width;
  tm.W = W;
  tm.D = W.rowwise().sum();
  if (tm.D.minCoeff() <= 0.0)
    throw std::invalid_argument("transition_from_affinity: zero degree");
  tm.log_normalizer = tm.D.array().log().matrix();
  Mat P = tm.D.cwiseInverse().asDiagonal() * W;
  tm.P = to_tensor(P);
  return tm;
}

namespace {

bool has_gram(const TransitionMatrix& tm) {
  return tm.gram.size() > 0 && tm.gram.allFinite();
}

// Diagonal of D^-1/2 up to a common factor.
Vec inv_sqrt_degree(const TransitionMatrix& tm) {
  if (has_gram(tm)) {
    const double mid = tm.log_normalizer.mean();
    return (-(tm.log_normalizer.array() - mid) * 0.5).exp().matrix();
  }
  return tm.D.array().rsqrt().matrix();
}

void check_size(const TransitionMatrix& tm, const EigOptions& opts) {
  if (tm.size() > opts.max_size)
    throw std::invalid_argument("eigendecomposition of " + std::to_string(tm.size()) +
                                " cells exceeds the cap of " + std::to_string(opts.max_size));
}

void normalize_columns(Mat& U) {
  for (Eigen::Index k = 0; k < U.cols(); ++k) {
    auto col = U.col(k);
    col.normalize();
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col[arg] < 0) col = -col;
  }
}

EigenSystem map_back(const TransitionMatrix& tm, const SymmetricEigen& se, bool descending) {
  const auto n = se.values.size();
  const Vec dinv = inv_sqrt_degree(tm);
  EigenSystem out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = descending ? n - 1 - k : k;
    out.values[k] = se.values[src];
    out.vectors.col(k) = dinv.cwiseProduct(se.vectors.col(src));
  }
  normalize_columns(out.vectors);
  return out;
}

Mat orthonormal_basis(const Mat& a) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  return q;
}

}  // namespace

Mat symmetrized(const TransitionMatrix& tm) {
  const auto n = static_cast<Eigen::Index>(tm.size());
  Mat S(n, n);
  if (has_gram(tm)) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        S(i, j) = std::exp(tm.gram(i, j) - 0.5 * (tm.log_normalizer[i] + tm.log_normalizer[j]));
  } else {
    const Vec r = tm.D.array().rsqrt().matrix();
    S = r.asDiagonal() * tm.W * r.asDiagonal();
  }
  return (0.5 * (S + S.transpose())).eval();
}

Mat laplacian(const TransitionMatrix& tm) {
  return tm.D.cwiseInverse().asDiagonal() * (Mat(tm.D.asDiagonal()) - tm.W);
}

EigenSystem eig_row_stochastic(const TransitionMatrix& tm, const EigOptions& opts) {
  check_size(tm, opts);
  return map_back(tm, symmetric_eigen(symmetrized(tm), opts.max_iterations_per_value), true);
}

EigenSystem eig_laplacian(const TransitionMatrix& tm, const EigOptions& opts) {
  check_size(tm, opts);
  const auto n = static_cast<Eigen::Index>(tm.size());
  Mat sym_l = Mat::Identity(n, n) - symmetrized(tm);
  return map_back(tm, symmetric_eigen(sym_l, opts.max_iterations_per_value), false);
}

std::vector<std::pair<std::size_t, std::size_t>> eigen_clusters(const Vec& v, double gap) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const auto n = static_cast<std::size_t>(v.size());
  std::size_t begin = 0;
  for (std::size_t k = 1; k <= n; ++k) {
    if (k == n || std::abs(v[static_cast<Eigen::Index>(k)] - v[static_cast<Eigen::Index>(k - 1)]) >= gap) {
      out.emplace_back(begin, k);
      begin = k;
    }
  }
  return out;
}

double subspace_sine(const Mat& a, const Mat& b) {
  const Mat qa = orthonormal_basis(a), qb = orthonormal_basis(b);
  const Mat residual = qb - qa * (qa.transpose() * qb);
  return residual.norm();
}

SpectralReport check_spectral_identity(const TransitionMatrix& tm, const SpectralTolerances& tol,
                                       const EigOptions& opts) {
  SpectralReport rep;
  const EigenSystem ep = eig_row_stochastic(tm, opts);
  const EigenSystem el = eig_laplacian(tm, opts);
  const auto n = ep.values.size();
  const Mat P = tm.P_mat();

  for (Eigen::Index k = 0; k < n; ++k)
    rep.max_value_deviation =
        std::max(rep.max_value_deviation, std::abs(ep.values[k] - (1.0 - el.values[k])));
  rep.perron_deviation = std::abs(ep.values[0] - 1.0);
  rep.trace_deviation = std::abs(P.trace() - ep.values.sum());
  rep.min_value = ep.values[n - 1];
  // Residuals and angles use the D-weighted inner product, under which P is
  // self-adjoint. Euclidean measures on U_P blow up with the spread of D even
  // when both decompositions are backward stable.
  const Vec sqrt_d = inv_sqrt_degree(tm).cwiseInverse();
  for (Eigen::Index k = 0; k < n; ++k) {
    const Vec u = ep.vectors.col(k);
    const Vec r = P * u - ep.values[k] * u;
    rep.max_residual = std::max(rep.max_residual,
                                sqrt_d.cwiseProduct(r).norm() / sqrt_d.cwiseProduct(u).norm());
  }
  const Mat up = sqrt_d.asDiagonal() * ep.vectors, ul = sqrt_d.asDiagonal() * el.vectors;
  for (auto [b, e] : eigen_clusters(ep.values, tol.degenerate_gap)) {
    const auto len = static_cast<Eigen::Index>(e - b);
    const auto bi = static_cast<Eigen::Index>(b);
    rep.max_subspace_sine = std::max(
        rep.max_subspace_sine, subspace_sine(up.middleCols(bi, len), ul.middleCols(bi, len)));
  }

  rep.passed = rep.max_value_deviation <= tol.value && rep.max_subspace_sine <= tol.angle &&
               rep.perron_deviation <= tol.perron && rep.trace_deviation <= tol.trace &&
               rep.max_residual <= tol.residual && rep.min_value > -1.0;
  std::ostringstream os;
  os << (rep.passed ? "PASS" : "FAIL") << " n=" << n
     << " value_dev=" << rep.max_value_deviation << " subspace_sine=" << rep.max_subspace_sine
     << " perron_dev=" << rep.perron_deviation << " trace_dev=" << rep.trace_deviation
     << " residual=" << rep.max_residual << " min_eig=" << rep.min_value;
  rep.message = os.str();
  return rep;
}

std::vector<Mat> leading_eigenvector_maps(const TransitionMatrix& tm, std::size_t k,
                                          const EigOptions& opts) {
  check_size(tm, opts);
  std::vector<Mat> maps;
  const std::size_t n = tm.size();
  if (k == 0 || n < 2) return maps;
  k = std::min(k, n - 1);

  // The Perron vector of S is D^1/2 1, i.e. the constant vector of P.
  Mat S = symmetrized(tm);
  Vec perron = inv_sqrt_degree(tm).cwiseInverse();
  perron.normalize();
  S -= perron * perron.transpose();
  const SymmetricEigen se = symmetric_eigen(S, opts.max_iterations_per_value);
  const EigenSystem es = map_back(tm, se, true);

  // After deflation the trivial direction sits at eigenvalue 0; skip it.
  Vec trivial = inv_sqrt_degree(tm).cwiseProduct(perron);
  trivial.normalize();
  for (Eigen::Index c = 0; c < es.vectors.cols() && maps.size() < k; ++c) {
    const auto u = es.vectors.col(c);
    if (std::abs(u.dot(trivial)) > 1.0 - 1e-9) continue;
    Mat m(static_cast<Eigen::Index>(tm.height), static_cast<Eigen::Index>(tm.width));
    const double lo = u.minCoeff(), hi = u.maxCoeff();
    for (Eigen::Index i = 0; i < u.size(); ++i)
      m.data()[i] = hi > lo ? (u[i] - lo) / (hi - lo) : 0.0;
    maps.push_back(std::move(m));
  }
  return maps;
}

double eigenspace_ss_reference(const TransitionMatrix& tm_a, const TransitionMatrix& tm_b,
                               const TransformSpec& spec,
                               const EigenspaceReferenceOptions& opts) {
  if (tm_a.height != tm_b.height || tm_a.width != tm_b.width)
    throw ShapeError("eigenspace_ss_reference: grids differ");
  const auto cm = computing_matrices(spec, tm_a.height, tm_a.width);
  const EigenSystem ea = eig_row_stochastic(transform_transition(tm_a, cm), opts.eig);
  const EigenSystem eb = eig_row_stochastic(restrict_to_valid(tm_b, cm), opts.eig);
  const auto n = ea.values.size();
  const auto pairs = opts.max_pairs == 0 ? n
                                         : std::min<Eigen::Index>(n, static_cast<Eigen::Index>(opts.max_pairs));

  double value_term = 0.0;
  for (Eigen::Index k = 0; k < pairs; ++k) {
    const double dv = ea.values[k] - eb.values[k];
    value_term += dv * dv;
  }
  value_term /= static_cast<double>(pairs);

  double vector_term = 0.0;
  const double dim = static_cast<double>(n);
  for (auto [b, e] : eigen_clusters(ea.values.head(pairs), opts.degenerate_gap)) {
    const auto bi = static_cast<Eigen::Index>(b);
    const auto len = static_cast<Eigen::Index>(e - b);
    if (static_cast<std::size_t>(len) <= opts.multiplicity_limit) {
      for (Eigen::Index k = bi; k < bi + len; ++k) {
        const auto ua = ea.vectors.col(k), ub = eb.vectors.col(k);
        const double same = (ua - ub).squaredNorm(), flipped = (ua + ub).squaredNorm();
        vector_term += std::min(same, flipped) / dim;
      }
    } else {
      const Mat qa = orthonormal_basis(ea.vectors.middleCols(bi, len));
      const Mat qb = orthonormal_basis(eb.vectors.middleCols(bi, len));
      const Mat diff = qa * qa.transpose() - qb * qb.transpose();
      // Per-dimension scale comparable with the vector-wise branch.
      vector_term += diff.squaredNorm() / (2.0 * dim);
    }
  }
  vector_term /= static_cast<double>(pairs);
  return vector_term + value_term;
}

}  // namespace rwss
