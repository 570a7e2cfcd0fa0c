#pragma once

// Dense row-major tensors of doubles with a tape-based reverse mode.
//
// A Tape becomes the active tape of the constructing thread for its lifetime.
// Any op whose inputs require gradients records a backward closure on the
// active tape; with no active tape ops run forward-only.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rwss {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};
}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  // For 2-D tensors.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node_->value; }
  // Writable view. Mutating a tensor that is already recorded on a live tape
  // invalidates that tape's gradients.
  std::span<double> mutable_data() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();

  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on);
  void zero_grad();

  // Same storage is not shared: a detached copy never records.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_result(Shape shape, std::vector<double> values, bool track);
};

class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_fn);
  std::size_t size() const { return records_.size(); }

  // Seeds d(output)/d(output) = 1 and replays every record once, newest first.
  // A tape can be replayed only once.
  void backward(const Tensor& output);

 private:
  std::vector<std::function<void()>> records_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
};

// Result tensor factory used by op implementations.
Tensor make_result(Shape shape, std::vector<double> values, bool track);
bool should_track(std::initializer_list<const Tensor*> inputs);

// ---- Linear algebra -------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// a * a^T; a is consumed twice on the tape.
Tensor gram(const Tensor& a);

// ---- Elementwise ----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// Scalar tensor (size 1) times tensor: the only broadcast this library does.
Tensor scale_by(const Tensor& s, const Tensor& a);
Tensor exp(const Tensor& a);
// log(a + eps).
Tensor log(const Tensor& a, double eps = 0.0);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
// Adds a 1 x C row to every row of an R x C matrix.
Tensor add_rowwise(const Tensor& a, const Tensor& row);

// ---- Reductions -----------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor trace(const Tensor& a);
// sum(a .* weights) with constant weights.
Tensor weighted_sum(const Tensor& a, std::span<const double> weights);

// ---- Row-wise -------------------------------------------------------------
// Stabilised by the row maximum.
Tensor softmax_rows(const Tensor& a);
// Divides each row by its sum. Rows must have positive sums.
Tensor row_normalize(const Tensor& a);

// ---- Indexing -------------------------------------------------------------
// out.row(i) = a.row(index[i]), or zeros when index[i] < 0.
Tensor gather_rows(const Tensor& a, std::span<const std::ptrdiff_t> index);
// out(i, j) = a(rows[i], cols[j]).
Tensor select(const Tensor& a, std::span<const std::size_t> rows,
              std::span<const std::size_t> cols);

// ---- Spatial (HWC layout, tensors are (H*W) x C) --------------------------
// 3x3 convolution, zero padding 1, stride 1. weight is (9*Cin) x Cout with
// row index (ky*3 + kx)*Cin + cin; bias is 1 x Cout.
Tensor conv3x3(const Tensor& x, std::size_t height, std::size_t width,
               const Tensor& weight, const Tensor& bias);
// 2x2 average pooling; height and width must be even.
Tensor avgpool2(const Tensor& x, std::size_t height, std::size_t width);
// Nearest-neighbour upsampling by an integer factor.
Tensor upsample_nearest(const Tensor& x, std::size_t height, std::size_t width,
                        std::size_t factor);

// ---- Gradient checking ----------------------------------------------------
// While one is alive on this thread, relu() folds the sign pattern of its
// inputs into a signature. Two evaluations with equal signatures took the same
// linear piece of every ReLU.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  static KinkMonitor* active();
  void observe(std::span<const double> relu_input);
  void reset() { signature_ = kSeed; }
  std::uint64_t signature() const { return signature_; }

 private:
  static constexpr std::uint64_t kSeed = 0xcbf29ce484222325ull;
  std::uint64_t signature_ = kSeed;
  KinkMonitor* previous_ = nullptr;
};

struct FdOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // Denominator floor of the relative error.
  double abs_floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample of this many.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // When a stencil straddles a ReLU kink, retry with step/10 this many times
  // before skipping the coordinate.
  int kink_retries = 2;
  // Fail when more than this fraction of coordinates had to be skipped.
  double max_skipped_fraction = 0.25;
};

struct FdReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose every stencil crossed a ReLU kink.
  std::size_t skipped = 0;
  // Parameter and flat coordinate of the worst error, or of the failure.
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::string message;
};

// Compares reverse-mode gradients of a scalar function of `params` against
// central differences. `fn` is re-evaluated under fresh tapes.
FdReport finite_diff_check(const std::function<Tensor()>& fn,
                           std::vector<Tensor> params, const FdOptions& opts = {});
FdReport finite_diff_check(const std::function<Tensor(const Tensor&)>& op,
                           const Tensor& input, const FdOptions& opts = {});

// sum(t .* R) for a fixed pseudo-random R in [-1, 1]; reduces any op to a scalar.
Tensor random_projection(const Tensor& t, std::uint64_t seed);

}  // namespace rwss
