#include "rwss/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rwss/rng.hpp"

namespace rwss {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

thread_local Tape* g_active_tape = nullptr;

void require_2d(const Tensor& t, const char* op) {
  if (!t.defined() || t.dim() != 2)
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " +
                     (t.defined() ? shape_string(t.shape()) : "undefined"));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
}

// C (+)= op(A) * op(B) on raw row-major buffers.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  const auto ma = trans_a ? MapC(a, k, m) : MapC(a, m, k);
  const auto mb = trans_b ? MapC(b, n, k) : MapC(b, k, n);
  Map mc(c, m, n);
  if (!accumulate) mc.setZero();
  if (trans_a && trans_b)
    mc.noalias() += ma.transpose() * mb.transpose();
  else if (trans_a)
    mc.noalias() += ma.transpose() * mb;
  else if (trans_b)
    mc.noalias() += ma * mb.transpose();
  else
    mc.noalias() += ma * mb;
}

using NodePtr = std::shared_ptr<detail::Node>;

void record(std::function<void()> fn) { g_active_tape->record(std::move(fn)); }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("Tensor: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_string(shape));
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->ensure_grad();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

std::size_t Tensor::rows() const {
  require_2d(*this, "rows");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_2d(*this, "cols");
  return node_->shape[1];
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on) node_->ensure_grad();
}

void Tensor::zero_grad() {
  if (!node_) return;
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(shape(), node_->value, requires_grad);
}

Tensor make_result(Shape shape, std::vector<double> values, bool track) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = track;
  return Tensor(std::move(node));
}

bool should_track(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// ---- Tape -----------------------------------------------------------------

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) {
  if (consumed_) throw std::logic_error("Tape::record: tape already replayed");
  records_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& output) {
  if (consumed_) throw std::logic_error("Tape::backward: tape already replayed");
  if (output.size() != 1)
    throw ShapeError("Tape::backward: output must be a scalar, got " +
                     shape_string(output.shape()));
  consumed_ = true;
  if (!output.requires_grad()) return;
  output.node()->ensure_grad();
  output.node()->grad[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  records_.clear();
}

// ---- Linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: inner extents disagree " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  std::vector<double> out(m * n);
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  const bool track = should_track({&a, &b});
  Tensor r = make_result({m, n}, std::move(out), track);
  if (track) {
    NodePtr na = a.node(), nb = b.node(), nr = r.node();
    record([na, nb, nr, m, n, k] {
      if (nr->grad.empty()) return;
      if (na->requires_grad) {
        na->ensure_grad();
        gemm(false, true, m, k, n, nr->grad.data(), nb->value.data(), na->grad.data(), true);
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        gemm(true, false, k, n, m, na->value.data(), nr->grad.data(), nb->grad.data(), true);
      }
    });
  }
  return r;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto& v = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  const bool track = should_track({&a});
  Tensor r = make_result({n, m}, std::move(out), track);
  if (track) {
    NodePtr na = a.node(), nr = r.node();
    record([na, nr, m, n] {
      if (nr->grad.empty()) return;
      na->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) na->grad[i * n + j] += nr->grad[j * m + i];
    });
  }
  return r;
}

Tensor gram(const Tensor& a) { return matmul(a, transpose(a)); }

// ---- Elementwise ----------------------------------------------------------

namespace {

template <class Fwd, class Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd bwd) {
  const auto& v = a.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = fwd(v[i]);
  const bool track = should_track({&a});
  Tensor r = make_result(a.shape(), std::move(out), track);
  if (track) {
    NodePtr na = a.node(), nr = r.node();
    record([na, nr, bwd] {
      if (nr->grad.empty()) return;
      na->ensure_grad();
      for (std::size_t i = 0; i < na->value.size(); ++i)
        na->grad[i] += nr->grad[i] * bwd(na->value[i], nr->value[i]);
    });
  }
  return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  const bool track = should_track({&a, &b});
  Tensor r = make_result(a.shape(), std::move(out), track);
  if (track) {
    NodePtr na = a.node(), nb = b.node(), nr = r.node();
    record([na, nb, nr] {
      if (nr->grad.empty()) return;
      for (auto* n : {na.get(), nb.get()}) {
        if (!n->requires_grad) continue;
        n->ensure_grad();
        for (std::size_t i = 0; i < nr->grad.size(); ++i) n->grad[i] += nr->grad[i];
      }
    });
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  const bool track = should_track({&a, &b});
  Tensor r = make_result(a.shape(), std::move(out), track);
  if (track) {
    NodePtr na = a.node(), nb = b.node(), nr = r.node();
    record([na, nb, nr] {
      if (nr->grad.empty()) return;
      if (na->requires_grad) {
        na->ensure_grad();
        for (std::size_t i = 0; i < nr->grad.size(); ++i) na->grad[i] += nr->grad[i];
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        for (std::size_t i = 0; i < nr->grad.size(); ++i) nb->grad[i] -= nr->grad[i];
      }
    });
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  const bool track = should_track({&a, &b});
  Tensor r = make_result(a.shape(), std::move(out), track);
  if (track) {
    NodePtr na = a.node(), nb = b.node(), nr = r.node();
    record([na, nb, nr] {
      if (nr->grad.empty()) return;
      if (na->requires_grad) {
        na->ensure_grad();
        for (std::size_t i = 0; i < nr->grad.size(); ++i)
          na->grad[i] += nr->grad[i] * nb->value[i];
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        for (std::size_t i = 0; i < nr->grad.size(); ++i)
          nb->grad[i] += nr->grad[i] * na->value[i];
      }
    });
  }
  return r;
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor scale_by(const Tensor& s, const Tensor& a) {
  if (s.size() != 1)
    throw ShapeError("scale_by: scale must have one element, got " + shape_string(s.shape()));
  const double sv = s[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * a[i];
  const bool track = should_track({&s, &a});
  Tensor r = make_result(a.shape(), std::move(out), track);
  if (track) {
    NodePtr ns = s.node(), na = a.node(), nr = r.node();
    record([ns, na, nr] {
      if (nr->grad.empty()) return;
      if (ns->requires_grad) {
        ns->ensure_grad();
        double acc = 0.0;
        for (std::size_t i = 0; i < nr->grad.size(); ++i) acc += nr->grad[i] * na->value[i];
        ns->grad[0] += acc;
      }
      if (na->requires_grad) {
        na->ensure_grad();
        const double sv = ns->value[0];
        for (std::size_t i = 0; i < nr->grad.size(); ++i) na->grad[i] += sv * nr->grad[i];
      }
    });
  }
  return r;
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a, double eps) {
  return unary(
      a, [eps](double x) { return std::log(x + eps); },
      [eps](double x, double) { return 1.0 / (x + eps); });
}

namespace {
thread_local KinkMonitor* active_monitor = nullptr;
}  // namespace

KinkMonitor::KinkMonitor() : previous_(active_monitor) { active_monitor = this; }
KinkMonitor::~KinkMonitor() { active_monitor = previous_; }
KinkMonitor* KinkMonitor::active() { return active_monitor; }

void KinkMonitor::observe(std::span<const double> relu_input) {
  std::uint64_t h = signature_;
  for (double x : relu_input) {
    h ^= x > 0.0 ? 1u : 2u;
    h *= 0x100000001b3ull;
  }
  signature_ = h;
}

Tensor relu(const Tensor& a) {
  if (auto* m = KinkMonitor::active()) m->observe(a.data());
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
  require_2d(a, "add_rowwise");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n)
    throw ShapeError("add_rowwise: row of " + std::to_string(row.size()) +
                     " values for " + std::to_string(n) + " columns");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += row[j];
  const bool track = should_track({&a, &row});
  Tensor r = make_result(a.shape(), std::move(out), track);
  if (track) {
    NodePtr na = a.node(), nb = row.node(), nr = r.node();
    record([na, nb, nr, m, n] {
      if (nr->grad.empty()) return;
      if (na->requires_grad) {
        na->ensure_grad();
        for (std::size_t i = 0; i < m * n; ++i) na->grad[i] += nr->grad[i];
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) nb->grad[j] += nr->grad[i * n + j];
      }
    });
  }
  return r;
}

// ---- Reductions -----------------------------------------------------------

namespace {

// Neumaier summation. Scalar losses are sums over thousands of terms and
// finite-difference checks need them reproducible to a few ulps.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace

Tensor sum(const Tensor& a) {
  CompensatedSum acc;
  for (double x : a.data()) acc.add(x);
  const bool track = should_track({&a});
  Tensor r = make_result({}, {acc.value()}, track);
  if (track) {
    NodePtr na = a.node(), nr = r.node();
    record([na, nr] {
      if (nr->grad.empty()) return;
      na->ensure_grad();
      for (auto& g : na->grad) g += nr->grad[0];
    });
  }
  return r;
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor trace(const Tensor& a) {
  require_2d(a, "trace");
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("trace: matrix not square " + shape_string(a.shape()));
  CompensatedSum acc;
  for (std::size_t i = 0; i < n; ++i) acc.add(a[i * n + i]);
  const bool track = should_track({&a});
  Tensor r = make_result({}, {acc.value()}, track);
  if (track) {
    NodePtr na = a.node(), nr = r.node();
    record([na, nr, n] {
      if (nr->grad.empty()) return;
      na->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) na->grad[i * n + i] += nr->grad[0];
    });
  }
  return r;
}

Tensor weighted_sum(const Tensor& a, std::span<const double> weights) {
  if (weights.size() != a.size())
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(a.size()) + " values");
  CompensatedSum acc;
  for (std::size_t i = 0; i < a.size(); ++i) acc.add(a[i] * weights[i]);
  const bool track = should_track({&a});
  Tensor r = make_result({}, {acc.value()}, track);
  if (track) {
    NodePtr na = a.node(), nr = r.node();
    std::vector<double> w(weights.begin(), weights.end());
    record([na, nr, w = std::move(w)] {
      if (nr->grad.empty()) return;
      na->ensure_grad();
      for (std::size_t i = 0; i < w.size(); ++i) na->grad[i] += nr->grad[0] * w[i];
    });
  }
  return r;
}

// ---- Row-wise -------------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
  require_2d(a, "softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto& v = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = v.data() + i * n;
    double* o = out.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(row[j] - mx);
      z += o[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  const bool track = should_track({&a});
  Tensor r = make_result(a.shape(), std::move(out), track);
  if (track) {
    NodePtr na = a.node(), nr = r.node();
    record([na, nr, m, n] {
      if (nr->grad.empty()) return;
      na->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = nr->value.data() + i * n;
        const double* gy = nr->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
        double* gx = na->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return r;
}

Tensor row_normalize(const Tensor& a) {
  require_2d(a, "row_normalize");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  std::vector<double> sums(m);
  for (std::size_t i = 0; i < m; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += a[i * n + j];
    if (!(z > 0.0))
      throw std::domain_error("row_normalize: row " + std::to_string(i) +
                              " has non-positive sum");
    sums[i] = z;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] / z;
  }
  const bool track = should_track({&a});
  Tensor r = make_result(a.shape(), std::move(out), track);
  if (track) {
    NodePtr na = a.node(), nr = r.node();
    record([na, nr, m, n, sums = std::move(sums)] {
      if (nr->grad.empty()) return;
      na->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = nr->value.data() + i * n;
        const double* gy = nr->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
        double* gx = na->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) gx[j] += (gy[j] - dot) / sums[i];
      }
    });
  }
  return r;
}

// ---- Indexing -------------------------------------------------------------

Tensor gather_rows(const Tensor& a, std::span<const std::ptrdiff_t> index) {
  require_2d(a, "gather_rows");
  const std::size_t m = a.rows(), n = a.cols(), out_rows = index.size();
  std::vector<double> out(out_rows * n, 0.0);
  for (std::size_t i = 0; i < out_rows; ++i) {
    if (index[i] < 0) continue;
    const auto src = static_cast<std::size_t>(index[i]);
    if (src >= m)
      throw ShapeError("gather_rows: index " + std::to_string(src) + " out of " +
                       std::to_string(m) + " rows");
    std::copy_n(a.data().data() + src * n, n, out.data() + i * n);
  }
  const bool track = should_track({&a});
  Tensor r = make_result({out_rows, n}, std::move(out), track);
  if (track) {
    NodePtr na = a.node(), nr = r.node();
    std::vector<std::ptrdiff_t> idx(index.begin(), index.end());
    record([na, nr, n, idx = std::move(idx)] {
      if (nr->grad.empty()) return;
      na->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        const auto src = static_cast<std::size_t>(idx[i]);
        for (std::size_t j = 0; j < n; ++j) na->grad[src * n + j] += nr->grad[i * n + j];
      }
    });
  }
  return r;
}

Tensor select(const Tensor& a, std::span<const std::size_t> rows,
              std::span<const std::size_t> cols) {
  require_2d(a, "select");
  const std::size_t m = a.rows(), n = a.cols();
  for (auto r : rows)
    if (r >= m) throw ShapeError("select: row index out of range");
  for (auto c : cols)
    if (c >= n) throw ShapeError("select: column index out of range");
  const std::size_t orows = rows.size(), ocols = cols.size();
  std::vector<double> out(orows * ocols);
  for (std::size_t i = 0; i < orows; ++i)
    for (std::size_t j = 0; j < ocols; ++j) out[i * ocols + j] = a[rows[i] * n + cols[j]];
  const bool track = should_track({&a});
  Tensor r = make_result({orows, ocols}, std::move(out), track);
  if (track) {
    NodePtr na = a.node(), nr = r.node();
    std::vector<std::size_t> rs(rows.begin(), rows.end()), cs(cols.begin(), cols.end());
    record([na, nr, n, rs = std::move(rs), cs = std::move(cs)] {
      if (nr->grad.empty()) return;
      na->ensure_grad();
      for (std::size_t i = 0; i < rs.size(); ++i)
        for (std::size_t j = 0; j < cs.size(); ++j)
          na->grad[rs[i] * n + cs[j]] += nr->grad[i * cs.size() + j];
    });
  }
  return r;
}

// ---- Spatial --------------------------------------------------------------

namespace {

void check_spatial(const Tensor& x, std::size_t height, std::size_t width, const char* op) {
  require_2d(x, op);
  if (x.rows() != height * width)
    throw ShapeError(std::string(op) + ": " + std::to_string(x.rows()) + " rows for a " +
                     std::to_string(height) + "x" + std::to_string(width) + " grid");
}

}  // namespace

Tensor conv3x3(const Tensor& x, std::size_t height, std::size_t width, const Tensor& weight,
               const Tensor& bias) {
  check_spatial(x, height, width, "conv3x3");
  require_2d(weight, "conv3x3");
  const std::size_t cin = x.cols(), cout = weight.cols(), hw = height * width;
  if (weight.rows() != 9 * cin)
    throw ShapeError("conv3x3: weight " + shape_string(weight.shape()) + " for " +
                     std::to_string(cin) + " input channels");
  if (bias.size() != cout) throw ShapeError("conv3x3: bias size mismatch");
  const std::size_t kdim = 9 * cin;

  std::vector<double> cols(hw * kdim, 0.0);
  const double* xv = x.data().data();
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t xx = 0; xx < width; ++xx) {
      double* dst = cols.data() + (y * width + xx) * kdim;
      for (int ky = 0; ky < 3; ++ky) {
        const long sy = static_cast<long>(y) + ky - 1;
        if (sy < 0 || sy >= static_cast<long>(height)) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const long sx = static_cast<long>(xx) + kx - 1;
          if (sx < 0 || sx >= static_cast<long>(width)) continue;
          std::copy_n(xv + (static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)) * cin,
                      cin, dst + static_cast<std::size_t>(ky * 3 + kx) * cin);
        }
      }
    }

  std::vector<double> out(hw * cout);
  for (std::size_t i = 0; i < hw; ++i) std::copy_n(bias.data().data(), cout, out.data() + i * cout);
  gemm(false, false, hw, cout, kdim, cols.data(), weight.data().data(), out.data(), true);

  const bool track = should_track({&x, &weight, &bias});
  Tensor r = make_result({hw, cout}, std::move(out), track);
  if (track) {
    NodePtr nx = x.node(), nw = weight.node(), nb = bias.node(), nr = r.node();
    record([nx, nw, nb, nr, cols = std::move(cols), height, width, cin, cout, hw, kdim] {
      if (nr->grad.empty()) return;
      const double* gy = nr->grad.data();
      if (nw->requires_grad) {
        nw->ensure_grad();
        gemm(true, false, kdim, cout, hw, cols.data(), gy, nw->grad.data(), true);
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        for (std::size_t i = 0; i < hw; ++i)
          for (std::size_t c = 0; c < cout; ++c) nb->grad[c] += gy[i * cout + c];
      }
      if (nx->requires_grad) {
        nx->ensure_grad();
        std::vector<double> gcols(hw * kdim);
        gemm(false, true, hw, kdim, cout, gy, nw->value.data(), gcols.data(), false);
        for (std::size_t y = 0; y < height; ++y)
          for (std::size_t xx = 0; xx < width; ++xx) {
            const double* src = gcols.data() + (y * width + xx) * kdim;
            for (int ky = 0; ky < 3; ++ky) {
              const long sy = static_cast<long>(y) + ky - 1;
              if (sy < 0 || sy >= static_cast<long>(height)) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const long sx = static_cast<long>(xx) + kx - 1;
                if (sx < 0 || sx >= static_cast<long>(width)) continue;
                double* dst = nx->grad.data() +
                              (static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)) * cin;
                const double* s = src + static_cast<std::size_t>(ky * 3 + kx) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += s[c];
              }
            }
          }
      }
    });
  }
  return r;
}

Tensor avgpool2(const Tensor& x, std::size_t height, std::size_t width) {
  check_spatial(x, height, width, "avgpool2");
  if (height % 2 || width % 2)
    throw ShapeError("avgpool2: odd grid " + std::to_string(height) + "x" + std::to_string(width));
  const std::size_t c = x.cols(), oh = height / 2, ow = width / 2;
  std::vector<double> out(oh * ow * c, 0.0);
  const double* xv = x.data().data();
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t xx = 0; xx < ow; ++xx) {
      double* o = out.data() + (y * ow + xx) * c;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const double* s = xv + ((2 * y + dy) * width + 2 * xx + dx) * c;
          for (std::size_t k = 0; k < c; ++k) o[k] += s[k];
        }
      for (std::size_t k = 0; k < c; ++k) o[k] *= 0.25;
    }
  const bool track = should_track({&x});
  Tensor r = make_result({oh * ow, c}, std::move(out), track);
  if (track) {
    NodePtr nx = x.node(), nr = r.node();
    record([nx, nr, width, c, oh, ow] {
      if (nr->grad.empty()) return;
      nx->ensure_grad();
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double* g = nr->grad.data() + (y * ow + xx) * c;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              double* d = nx->grad.data() + ((2 * y + dy) * width + 2 * xx + dx) * c;
              for (std::size_t k = 0; k < c; ++k) d[k] += 0.25 * g[k];
            }
        }
    });
  }
  return r;
}

Tensor upsample_nearest(const Tensor& x, std::size_t height, std::size_t width,
                        std::size_t factor) {
  check_spatial(x, height, width, "upsample_nearest");
  if (factor == 0) throw ShapeError("upsample_nearest: zero factor");
  const std::size_t c = x.cols(), oh = height * factor, ow = width * factor;
  std::vector<double> out(oh * ow * c);
  const double* xv = x.data().data();
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t xx = 0; xx < ow; ++xx)
      std::copy_n(xv + ((y / factor) * width + xx / factor) * c, c, out.data() + (y * ow + xx) * c);
  const bool track = should_track({&x});
  Tensor r = make_result({oh * ow, c}, std::move(out), track);
  if (track) {
    NodePtr nx = x.node(), nr = r.node();
    record([nx, nr, width, c, oh, ow, factor] {
      if (nr->grad.empty()) return;
      nx->ensure_grad();
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double* g = nr->grad.data() + (y * ow + xx) * c;
          double* d = nx->grad.data() + ((y / factor) * width + xx / factor) * c;
          for (std::size_t k = 0; k < c; ++k) d[k] += g[k];
        }
    });
  }
  return r;
}

// ---- Gradient checking ----------------------------------------------------

Tensor random_projection(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(t.size());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return weighted_sum(t, w);
}

FdReport finite_diff_check(const std::function<Tensor()>& fn, std::vector<Tensor> params,
                           const FdOptions& opts) {
  FdReport report;
  for (auto& p : params) {
    if (!p.requires_grad()) {
      report.message = "parameter does not require grad";
      return report;
    }
    p.zero_grad();
  }

  KinkMonitor monitor;
  double base = 0.0;
  {
    Tape tape;
    Tensor out = fn();
    base = out.item();
    if (!std::isfinite(base)) {
      report.message = "non-finite output at the unperturbed point";
      return report;
    }
    tape.backward(out);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t pi = 0; pi < params.size(); ++pi)
    for (std::size_t i = 0; i < params[pi].size(); ++i) coords.emplace_back(pi, i);
  if (opts.max_coords > 0 && coords.size() > opts.max_coords) {
    Rng rng(opts.seed);
    // Partial Fisher-Yates keeps a seeded subset.
    for (std::size_t i = 0; i < opts.max_coords; ++i) {
      const auto j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(opts.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  const std::uint64_t base_signature = monitor.signature();
  auto evaluate = [&](double& slot, double value, bool& kink) {
    slot = value;
    monitor.reset();
    const double out = fn().item();
    kink = kink || monitor.signature() != base_signature;
    return out;
  };

  report.passed = true;
  for (auto [pi, i] : coords) {
    auto values = params[pi].mutable_data();
    const double saved = values[i];
    double step = opts.step, up = 0.0, down = 0.0;
    bool kink = true;
    for (int attempt = 0; kink && attempt <= opts.kink_retries; ++attempt, step *= 0.1) {
      kink = false;
      up = evaluate(values[i], saved + step, kink);
      down = evaluate(values[i], saved - step, kink);
      if (!kink) break;
    }
    values[i] = saved;
    if (kink) {
      ++report.skipped;
      continue;
    }
    if (!std::isfinite(up) || !std::isfinite(down)) {
      report.passed = false;
      report.worst_param = pi;
      report.worst_index = i;
      report.message = "non-finite output when perturbing parameter " + std::to_string(pi) +
                       " coordinate " + std::to_string(i);
      return report;
    }
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[pi][i];
    const double denom = std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
    const double rel = std::abs(a - numeric) / denom;
    ++report.checked;
    if (rel > report.max_rel_error || report.checked == 1) {
      report.max_rel_error = rel;
      report.worst_param = pi;
      report.worst_index = i;
      report.analytic = a;
      report.numeric = numeric;
    }
  }
  const auto total = static_cast<double>(report.checked + report.skipped);
  report.passed = report.checked > 0 && report.max_rel_error <= opts.tol &&
                  static_cast<double>(report.skipped) <= opts.max_skipped_fraction * total;
  std::ostringstream os;
  os << "checked " << report.checked << " coordinates, max relative error "
     << report.max_rel_error << " (tol " << opts.tol << ")";
  if (report.skipped) os << ", " << report.skipped << " skipped at ReLU kinks";
  report.message = os.str();
  for (auto& p : params) p.zero_grad();
  return report;
}

FdReport finite_diff_check(const std::function<Tensor(const Tensor&)>& op, const Tensor& input,
                           const FdOptions& opts) {
  Tensor x = input.requires_grad() ? input : input.clone(true);
  return finite_diff_check([&] { return op(x); }, {x}, opts);
}

}  // namespace rwss
