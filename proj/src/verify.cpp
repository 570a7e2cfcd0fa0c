#include "rwss/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rwss/diffusion.hpp"
#include "rwss/losses.hpp"
#include "rwss/model.hpp"
#include "rwss/spectral.hpp"
#include "rwss/transforms.hpp"

namespace rwss {

bool VerificationReport::passed() const { return failures() == 0 && !lines.empty(); }

std::size_t VerificationReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(lines.begin(), lines.end(), [](const CheckLine& l) { return !l.passed; }));
}

std::string VerificationReport::to_text(bool failures_only) const {
  std::ostringstream os;
  os.precision(3);
  for (const auto& l : lines) {
    if (failures_only && l.passed) continue;
    os << (l.passed ? "PASS " : "FAIL ") << l.name << "  err=" << std::scientific << l.error
       << std::defaultfloat;
    if (!l.detail.empty()) os << "  " << l.detail;
    os << '\n';
  }
  os << (passed() ? "PASS " : "FAIL ") << title << ": " << (lines.size() - failures()) << "/"
     << lines.size() << " checks passed\n";
  return os.str();
}

FeatureGrid random_feature_grid(Rng& rng, std::size_t max_side, std::size_t max_cells,
                                std::size_t max_channels) {
  std::size_t h = 0, w = 0;
  do {
    h = 1 + rng.below(max_side);
    w = 1 + rng.below(max_side);
  } while (h * w > max_cells);
  const std::size_t c = 1 + rng.below(max_channels);
  const double scale = rng.uniform(0.1, 1.5);
  std::vector<double> v(h * w * c);
  for (auto& x : v) x = scale * rng.normal();
  return FeatureGrid(h, w, Tensor({h * w, c}, std::move(v)));
}

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Source cell by coordinates, written independently of computing_matrices.
long oracle_source(const TransformSpec& spec, long h, long w, long y, long x) {
  long sy = y, sx = x;
  if (spec.kind == TransformSpec::Kind::flip)
    sx = w - 1 - x;
  else {
    sy = y - spec.dy;
    sx = x - spec.dx;
  }
  if (sy < 0 || sy >= h || sx < 0 || sx >= w) return -1;
  return sy * w + sx;
}

// Valid block of Tr P Tc (dense products), row-renormalised.
Mat oracle_block(const Mat& P, const TransformSpec& spec, std::size_t h, std::size_t w,
                 std::vector<long>& valid) {
  const auto n = static_cast<Eigen::Index>(h * w);
  Mat Tr = Mat::Zero(n, n);
  valid.clear();
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x) {
      const long s = oracle_source(spec, static_cast<long>(h), static_cast<long>(w), y, x);
      if (s < 0) continue;
      Tr(y * static_cast<long>(w) + x, s) = 1.0;
      valid.push_back(y * static_cast<long>(w) + x);
    }
  const Mat full = Tr * P * Tr.transpose();
  const auto m = static_cast<Eigen::Index>(valid.size());
  Mat out(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) out(i, j) = full(valid[static_cast<std::size_t>(i)], valid[static_cast<std::size_t>(j)]);
  if (m != n)
    for (Eigen::Index i = 0; i < m; ++i) out.row(i) /= out.row(i).sum();
  return out;
}

}  // namespace

VerificationReport check_transform_algebra(std::size_t max_grid, int max_shift, std::uint64_t seed,
                                           double tol) {
  VerificationReport rep;
  rep.title = "transform algebra";
  Rng rng(seed);
  for (std::size_t h = 1; h <= max_grid; ++h)
    for (std::size_t w = 1; w <= max_grid; ++w) {
      std::vector<TransformSpec> specs{TransformSpec::flip()};
      for (int dy = -max_shift; dy <= max_shift; ++dy)
        for (int dx = -max_shift; dx <= max_shift; ++dx)
          if (static_cast<std::size_t>(std::abs(dx)) < w && static_cast<std::size_t>(std::abs(dy)) < h)
            specs.push_back(TransformSpec::translation(dx, dy));
      const std::size_t c = 1 + rng.below(6);
      std::vector<double> v(h * w * c);
      for (auto& x : v) x = rng.normal();
      const FeatureGrid f(h, w, Tensor({h * w, c}, std::move(v)));
      const auto tm = build_transition_matrix(f);

      for (const auto& spec : specs) {
        CheckLine line;
        line.name = std::to_string(h) + "x" + std::to_string(w) + " " + spec.to_string();
        const auto cm = computing_matrices(spec, h, w);
        bool index_ok = true;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            index_ok &= cm.source[y * w + x] ==
                        oracle_source(spec, static_cast<long>(h), static_cast<long>(w),
                                      static_cast<long>(y), static_cast<long>(x));

        const auto lhs = restrict_to_valid(build_transition_matrix(transform_grid(f, spec)), cm);
        const auto rhs = transform_transition(tm, cm);
        std::vector<long> valid;
        const Mat oracle = oracle_block(tm.P_mat(), spec, h, w, valid);
        const double err_alg = max_abs_diff(lhs.P.data(), rhs.P.data());
        const double err_oracle = max_abs_diff(rhs.P.data(), std::span<const double>(oracle.data(), static_cast<std::size_t>(oracle.size())));
        line.error = std::max(err_alg, err_oracle);
        line.passed = index_ok && valid.size() == cm.valid_rows.size() && line.error <= tol;
        std::ostringstream d;
        d << "valid=" << cm.valid_rows.size() << "/" << h * w << (index_ok ? "" : " index mismatch");
        line.detail = d.str();
        rep.lines.push_back(std::move(line));
      }
    }
  return rep;
}

VerificationReport run_spectral_suite(std::size_t count, std::size_t max_cells, std::uint64_t seed) {
  VerificationReport rep;
  rep.title = "spectral identity";
  Rng rng(seed);
  const auto side = static_cast<std::size_t>(std::max(1.0, std::floor(std::sqrt(static_cast<double>(max_cells)))));
  for (std::size_t k = 0; k < count; ++k) {
    const auto f = random_feature_grid(rng, side, max_cells, 16);
    const auto tm = build_transition_matrix(f);
    CheckLine line;
    line.name = "matrix " + std::to_string(k) + " (" + std::to_string(tm.size()) + " cells, C=" +
                std::to_string(f.channels()) + ")";
    try {
      const auto r = check_spectral_identity(tm);
      line.passed = r.passed;
      line.error = std::max({r.max_value_deviation, r.perron_deviation, r.trace_deviation});
      std::ostringstream d;
      d.precision(2);
      d << std::scientific << "sine=" << r.max_subspace_sine << " resid=" << r.max_residual;
      if (!r.message.empty()) d << " " << r.message;
      line.detail = d.str();
    } catch (const std::exception& e) {
      line.passed = false;
      line.detail = e.what();
    }
    rep.lines.push_back(std::move(line));
  }
  return rep;
}

VerificationReport run_stochasticity_suite(std::size_t count, std::size_t max_side,
                                           std::size_t max_channels, std::uint64_t seed) {
  VerificationReport rep;
  rep.title = "stochasticity";
  Rng rng(seed);
  for (std::size_t k = 0; k < count; ++k) {
    const auto f = random_feature_grid(rng, max_side, max_side * max_side, max_channels);
    const auto tm = build_transition_matrix(f);
    const Mat P = tm.P_mat();
    double row_err = 0.0, sym_err = 0.0, min_p = INFINITY, min_w = INFINITY;
    for (Eigen::Index i = 0; i < P.rows(); ++i) row_err = std::max(row_err, std::abs(P.row(i).sum() - 1.0));
    sym_err = (tm.W - tm.W.transpose()).cwiseAbs().maxCoeff();
    min_p = P.minCoeff();
    min_w = tm.W.minCoeff();
    CheckLine line;
    line.name = "grid " + std::to_string(k) + " (" + std::to_string(f.height) + "x" +
                std::to_string(f.width) + ", C=" + std::to_string(f.channels()) + ")";
    line.error = std::max(row_err, sym_err);
    line.passed = row_err <= 1e-10 && sym_err <= 1e-10 && min_p > 0.0 && min_w > 0.0;
    std::ostringstream d;
    d.precision(3);
    d << "min P=" << min_p << " min W=" << min_w;
    line.detail = d.str();
    rep.lines.push_back(std::move(line));
  }
  return rep;
}

namespace {

CheckLine fd_line(const std::string& name, const FdReport& r) {
  CheckLine line;
  line.name = name;
  line.passed = r.passed;
  line.error = r.max_rel_error;
  std::ostringstream d;
  d << r.checked << " coords";
  if (r.skipped) d << " (" << r.skipped << " at kinks)";
  if (!r.passed) d << ", worst param " << r.worst_param << "[" << r.worst_index << "] analytic " << r.analytic
                   << " numeric " << r.numeric << (r.message.empty() ? "" : " " + r.message);
  line.detail = d.str();
  return line;
}

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = scale * rng.normal();
  return Tensor({r, c}, std::move(v), true);
}

Image random_image(Rng& rng, std::size_t size) {
  Image img(size, size, 3);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

}  // namespace

VerificationReport run_gradient_suite(const std::vector<std::uint64_t>& seeds, std::size_t image_size,
                                      double tol) {
  VerificationReport rep;
  rep.title = "gradients";
  for (auto seed : seeds) {
    Rng rng(seed);
    FdOptions fd;
    fd.tol = tol;
    fd.seed = seed;
    const std::string tag = " seed " + std::to_string(seed);
    const std::size_t h = 3, w = 3, n = h * w, c = 4, classes = 3;

    rep.lines.push_back(fd_line("softmax_rows" + tag,
        finite_diff_check([&](const Tensor& x) { return random_projection(softmax_rows(x), seed); },
                          random_matrix(rng, 5, 7), fd)));

    rep.lines.push_back(fd_line("build_transition_matrix" + tag,
        finite_diff_check([&](const Tensor& x) {
          return random_projection(build_transition_matrix(FeatureGrid(h, w, x)).P, seed);
        }, random_matrix(rng, n, c, 0.7), fd)));

    {
      Tensor f = random_matrix(rng, n, c);
      Tensor feat = random_matrix(rng, n, c, 0.5);
      Tensor alpha = Tensor::scalar(rng.uniform(-1.0, 1.0), true);
      rep.lines.push_back(fd_line("random_walk" + tag, finite_diff_check([&] {
        const auto tm = build_transition_matrix(FeatureGrid(h, w, feat));
        return random_projection(random_walk(FeatureGrid(h, w, f), tm, {alpha, 2}).values, seed);
      }, {f, feat, alpha}, fd)));
    }

    std::vector<std::uint8_t> labels(n, kUnlabeled);
    for (std::size_t i = 0; i < n; i += 2) labels[i] = static_cast<std::uint8_t>(rng.below(classes));
    {
      Tensor logits = random_matrix(rng, n, classes);
      rep.lines.push_back(fd_line("partial_cross_entropy" + tag, finite_diff_check([&](const Tensor& x) {
        return partial_cross_entropy(softmax_rows(x), labels).value;
      }, logits, fd)));
      rep.lines.push_back(fd_line("entropy_loss" + tag, finite_diff_check([&](const Tensor& x) {
        return entropy_loss(softmax_rows(x));
      }, logits, fd)));
    }
    {
      Tensor fa = random_matrix(rng, n, c, 0.7), fb = random_matrix(rng, n, c, 0.7);
      for (const auto& spec : {TransformSpec::flip(), TransformSpec::translation(1, -1)}) {
        const auto cm = computing_matrices(spec, h, w);
        rep.lines.push_back(fd_line("soft_eigenspace_ss " + spec.to_string() + tag, finite_diff_check([&] {
          const auto ta = build_transition_matrix(FeatureGrid(h, w, fa));
          const auto tb = build_transition_matrix(FeatureGrid(h, w, fb));
          return soft_eigenspace_ss(ta.P, tb.P, cm, {0.5, false}).value;
        }, {fa, fb}, fd)));
        rep.lines.push_back(fd_line("feature_ss " + spec.to_string() + tag, finite_diff_check([&] {
          return feature_ss(FeatureGrid(h, w, fa), FeatureGrid(h, w, fb), spec);
        }, {fa, fb}, fd)));
      }
    }
    {
      Tensor la = random_matrix(rng, n, classes), fa = random_matrix(rng, n, c, 0.7),
             fb = random_matrix(rng, n, c, 0.7);
      const auto cm = computing_matrices(TransformSpec::flip(), h, w);
      rep.lines.push_back(fd_line("total_loss" + tag, finite_diff_check([&] {
        const Tensor s = softmax_rows(la);
        const auto ss = soft_eigenspace_ss(build_transition_matrix(FeatureGrid(h, w, fa)).P,
                                           build_transition_matrix(FeatureGrid(h, w, fb)).P, cm);
        return total_loss(partial_cross_entropy(s, labels).value, entropy_loss(s), ss.value,
                          LossWeights{}).value;
      }, {la, fa, fb}, fd)));
    }

    // End to end: ce + entropy + eigenspace consistency under a flip.
    {
      ModelConfig mc;
      mc.classes = 4;
      mc.seed = seed;
      ModelParams params = init_params(mc);
      const Image img = random_image(rng, image_size);
      const Image timg = transform_image(img, TransformSpec::flip(), mc.downsample());
      std::vector<std::uint8_t> scribble(image_size * image_size, kUnlabeled);
      for (std::size_t i = 0; i < scribble.size(); i += 7) scribble[i] = static_cast<std::uint8_t>(rng.below(mc.classes));
      auto loss = [&] {
        const auto a = forward(img, params, {true});
        const auto b = forward(timg, params, {true});
        const auto cm = computing_matrices(TransformSpec::flip(), a.f_pre.height, a.f_pre.width);
        const auto ss = soft_eigenspace_ss(a.tm.P, b.tm.P, cm);
        return total_loss(partial_cross_entropy(a.s, scribble).value, entropy_loss(a.s), ss.value,
                          LossWeights{}).value;
      };
      auto names = params.parameter_names();
      auto ps = params.parameters();
      for (std::size_t k = 0; k < ps.size(); ++k) {
        FdOptions mfd = fd;
        mfd.max_coords = 24;
        mfd.seed = derive_seed(seed, k);
        rep.lines.push_back(fd_line("model " + names[k] + tag, finite_diff_check(loss, {*ps[k]}, mfd)));
      }
    }
  }
  return rep;
}

}  // namespace rwss
