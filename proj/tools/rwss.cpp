// rwss: dataset generation, training, evaluation and diagnostics.

#include <CLI11.hpp>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "rwss/config.hpp"
#include "rwss/dataset.hpp"
#include "rwss/diffusion.hpp"
#include "rwss/manifest.hpp"
#include "rwss/model.hpp"
#include "rwss/pnm.hpp"
#include "rwss/spectral.hpp"
#include "rwss/trainer.hpp"
#include "rwss/verify.hpp"

namespace fs = std::filesystem;
using namespace rwss;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerification = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VerificationFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

KeyValues load_config(const std::string& path) {
  return path.empty() ? KeyValues{} : KeyValues::load(path);
}

void reject_unused(const KeyValues& kv) {
  const auto extra = kv.unused();
  if (extra.empty()) return;
  std::string msg = "unknown config key(s):";
  for (const auto& k : extra) msg += " " + k;
  throw UsageError(msg);
}

// Outputs go to a sibling staging directory that replaces `out` only on success.
class StagedDir {
 public:
  explicit StagedDir(fs::path out) : out_(std::move(out)) {
    if (out_.empty()) throw UsageError("--out is required");
    if (fs::exists(out_) && !fs::is_empty(out_) && !fs::exists(out_ / kManifestName))
      throw std::runtime_error("refusing to overwrite " + out_.string() + ": not a previous run directory");
    stage_ = out_;
    stage_ += ".partial-" + std::to_string(::getpid());
    fs::remove_all(stage_);
    fs::create_directories(stage_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(stage_, ec);
    }
  }

  const fs::path& path() const { return stage_; }

  void commit(RunManifest manifest) {
    manifest.output_dir = out_.string();
    manifest.checksums = checksum_tree(stage_);
    manifest.write(stage_);
    fs::remove_all(out_);
    if (out_.has_parent_path()) fs::create_directories(out_.parent_path());
    fs::rename(stage_, out_);
    committed_ = true;
  }

 private:
  fs::path out_;
  fs::path stage_;
  bool committed_ = false;
};

void add_common(CLI::App* app, Common& c, bool out_required) {
  app->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "random seed");
  auto* o = app->add_option("--out", c.out, "output directory");
  if (out_required) o->required();
}

// ---- gen-data ------------------------------------------------------------

struct GenDataArgs {
  Common common;
  std::optional<double> drop_rate, shrink_rate;
};

int run_gen_data(const GenDataArgs& a) {
  KeyValues kv = load_config(a.common.config);
  DatasetConfig cfg = DatasetConfig::from_config(kv);
  reject_unused(kv);
  if (a.common.seed) cfg.seed = *a.common.seed;
  if (a.drop_rate) cfg.drop_rate = *a.drop_rate;
  if (a.shrink_rate) cfg.shrink_rate = *a.shrink_rate;
  for (double r : {cfg.drop_rate, cfg.shrink_rate})
    if (!(r >= 0.0 && r <= 1.0)) throw UsageError("rates must lie in [0, 1]");

  StagedDir dir(a.common.out);
  const Dataset data = make_dataset(cfg);
  write_dataset(data, dir.path());
  RunManifest m;
  m.command = "gen-data";
  m.config_path = a.common.config;
  m.seed = cfg.seed;
  m.settings = cfg.to_config();
  dir.commit(m);
  std::cout << "wrote " << data.train.size() << " train / " << data.val.size() << " val samples to "
            << a.common.out << '\n';
  return kExitOk;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data;
  std::string ss_op, ss_loc;
  bool no_random_walk = false;
  bool no_ss = false;
  bool log_reference = false;
  bool quiet = false;
  std::optional<std::size_t> epochs, stage1_epochs, eval_every;
};

int run_train(const TrainArgs& a) {
  KeyValues kv = load_config(a.common.config);
  const Dataset data = read_dataset(a.data);
  if (!kv.has("classes")) kv.set("classes", std::to_string(data.classes()));
  TrainConfig cfg = TrainConfig::from_config(kv);
  reject_unused(kv);
  if (a.common.seed) {
    cfg.seed = *a.common.seed;
    cfg.model.seed = derive_seed(*a.common.seed, 7);
  }
  if (!a.ss_op.empty()) cfg.ss_operation = parse_transform_mode(a.ss_op);
  if (!a.ss_loc.empty()) cfg.ss_location = parse_ss_location(a.ss_loc);
  if (a.no_random_walk) cfg.model.random_walk = false;
  if (a.no_ss) cfg.self_supervision = false;
  if (a.log_reference) cfg.log_reference = true;
  if (a.epochs) cfg.epochs_total = *a.epochs;
  if (a.stage1_epochs) cfg.epochs_stage1 = *a.stage1_epochs;
  if (a.eval_every) cfg.eval_every = *a.eval_every;
  cfg.validate();

  StagedDir dir(a.common.out);
  const auto params0 = init_params(cfg.model);
  std::cout << "parameters: " << params0.parameter_count() << '\n';
  const auto result = train_two_stage(data, cfg, [&](const EpochRecord& e) {
    if (a.quiet) return;
    std::printf("epoch %3zu stage %d  ce %.5f  ent %.5f  ss %.6f  total %.5f", e.epoch, e.stage,
                e.loss.ce, e.loss.entropy, e.loss.ss, e.loss.total);
    if (!std::isnan(e.ss_reference)) std::printf("  ss_ref %.6f", e.ss_reference);
    if (!std::isnan(e.miou)) std::printf("  mIoU %.4f", e.miou);
    std::printf("\n");
    std::fflush(stdout);
  });

  {
    std::ofstream c(dir.path() / "train.cfg");
    c << cfg.to_config().dump();
  }
  save_checkpoint(dir.path() / "model.ckpt", result.params);
  write_step_log(dir.path() / "steps.csv", result.log);
  write_epoch_log(dir.path() / "epochs.csv", result.log);
  if (!result.log.reports.empty()) write_metric_report(dir.path() / "metrics.csv", result.log.reports.back());

  RunManifest m;
  m.command = "train";
  m.config_path = a.common.config;
  m.seed = cfg.seed;
  m.settings = cfg.to_config();
  m.settings.set("data", a.data);
  dir.commit(m);
  if (result.diverged) {
    std::cerr << "training diverged: " << result.message << '\n';
    return kExitRuntime;
  }
  if (!result.log.reports.empty()) std::cout << "final mIoU " << result.log.reports.back().miou << '\n';
  return kExitOk;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, split = "val", out;
};

const std::vector<Sample>& pick_split(const Dataset& d, const std::string& split) {
  if (split == "val") return d.val;
  if (split == "train") return d.train;
  throw UsageError("--split must be train or val");
}

int run_eval(const EvalArgs& a) {
  const auto params = load_checkpoint(a.ckpt);
  const Dataset data = read_dataset(a.data);
  const auto report = evaluate_miou(params, pick_split(data, a.split));
  if (a.out.empty()) {
    const fs::path tmp = fs::temp_directory_path() / ("rwss-eval-" + std::to_string(::getpid()) + ".csv");
    write_metric_report(tmp, report);
    std::ifstream in(tmp);
    std::cout << in.rdbuf();
    fs::remove(tmp);
  } else {
    StagedDir dir(a.out);
    write_metric_report(dir.path() / "metrics.csv", report);
    RunManifest m;
    m.command = "eval";
    m.settings.set("ckpt", a.ckpt);
    m.settings.set("data", a.data);
    m.settings.set("split", a.split);
    dir.commit(m);
    std::cout << "mIoU " << report.miou << '\n';
  }
  return kExitOk;
}

// ---- diffuse / eigvecs -----------------------------------------------------

struct MapArgs {
  std::string ckpt, data, split = "val", out;
  std::size_t index = 0;
  std::size_t count = 4;
};

const Sample& pick_sample(const Dataset& d, const MapArgs& a) {
  const auto& s = pick_split(d, a.split);
  if (a.index >= s.size()) throw UsageError("--index out of range for split " + a.split);
  return s[a.index];
}

// Nearest-neighbour upscale of a grid map to image size, scaled by 255 / vmax.
std::vector<std::uint8_t> map_to_bytes(const Mat& m, std::size_t factor, double vmax) {
  const std::size_t h = static_cast<std::size_t>(m.rows()) * factor, w = static_cast<std::size_t>(m.cols()) * factor;
  std::vector<std::uint8_t> out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out[y * w + x] = to_byte(vmax > 0.0 ? m(static_cast<Eigen::Index>(y / factor), static_cast<Eigen::Index>(x / factor)) / vmax : 0.0);
  return out;
}

// Class id of each grid cell: the ground-truth label at the cell centre.
std::vector<int> cell_regions(const Sample& s, std::size_t factor) {
  const std::size_t gh = s.image.height / factor, gw = s.image.width / factor;
  std::vector<int> r(gh * gw);
  for (std::size_t y = 0; y < gh; ++y)
    for (std::size_t x = 0; x < gw; ++x)
      r[y * gw + x] = s.mask[(y * factor + factor / 2) * s.image.width + x * factor + factor / 2];
  return r;
}

int run_diffuse(const MapArgs& a) {
  auto params = load_checkpoint(a.ckpt);
  const Dataset data = read_dataset(a.data);
  const Sample& s = pick_sample(data, a);
  const auto fwd = forward(s.image, params, {true});
  // Before/after a single walk step on f_pre, whether or not the model walks.
  const FeatureGrid after = random_walk(fwd.f_pre, fwd.tm, {params.alpha.detach(), 1});
  const Mat before_map = uniformity_map(fwd.f_pre), after_map = uniformity_map(after);
  const std::size_t factor = params.config.downsample();
  const auto regions = cell_regions(s, factor);

  StagedDir dir(a.out);
  write_pgm(dir.path() / "before.pgm", s.image.height, s.image.width, map_to_bytes(before_map, factor, before_map.maxCoeff()));
  write_pgm(dir.path() / "after.pgm", s.image.height, s.image.width, map_to_bytes(after_map, factor, after_map.maxCoeff()));
  write_ppm(dir.path() / "image.ppm", s.image);
  const double vb = within_region_variance(before_map / before_map.mean(), regions);
  const double va = within_region_variance(after_map / after_map.mean(), regions);
  {
    std::ofstream csv(dir.path() / "uniformity.csv");
    csv << "y,x,region,before,after\n";
    for (Eigen::Index y = 0; y < before_map.rows(); ++y)
      for (Eigen::Index x = 0; x < before_map.cols(); ++x)
        csv << y << ',' << x << ',' << regions[static_cast<std::size_t>(y * before_map.cols() + x)] << ','
            << format_double(before_map(y, x)) << ',' << format_double(after_map(y, x)) << '\n';
    csv << "# within-region variance (mean-normalised) before=" << format_double(vb)
        << " after=" << format_double(va) << '\n';
  }
  RunManifest m;
  m.command = "diffuse";
  m.settings.set("ckpt", a.ckpt);
  m.settings.set("data", a.data);
  m.settings.set("index", std::to_string(a.index));
  dir.commit(m);
  std::cout << "within-region variance before " << vb << " after " << va << '\n';
  return kExitOk;
}

int run_eigvecs(const MapArgs& a) {
  auto params = load_checkpoint(a.ckpt);
  const Dataset data = read_dataset(a.data);
  const Sample& s = pick_sample(data, a);
  const auto fwd = forward(s.image, params, {true});
  const auto sys = eig_row_stochastic(fwd.tm);
  const auto maps = leading_eigenvector_maps(fwd.tm, a.count);
  const std::size_t factor = params.config.downsample();

  StagedDir dir(a.out);
  write_ppm(dir.path() / "image.ppm", s.image);
  for (std::size_t k = 0; k < maps.size(); ++k)
    write_pgm(dir.path() / ("eigvec_" + std::to_string(k + 1) + ".pgm"), s.image.height, s.image.width,
              map_to_bytes(maps[k], factor, 1.0));
  {
    std::ofstream csv(dir.path() / "eigenvalues.csv");
    csv << "index,lambda_P,lambda_L\n";
    for (Eigen::Index k = 0; k < sys.values.size(); ++k)
      csv << k << ',' << format_double(sys.values(k)) << ',' << format_double(1.0 - sys.values(k)) << '\n';
  }
  RunManifest m;
  m.command = "eigvecs";
  m.settings.set("ckpt", a.ckpt);
  m.settings.set("data", a.data);
  m.settings.set("index", std::to_string(a.index));
  m.settings.set("count", std::to_string(a.count));
  dir.commit(m);
  std::cout << "wrote " << maps.size() << " eigenvector maps to " << a.out << '\n';
  return kExitOk;
}

// ---- verification commands ---------------------------------------------------

int finish_report(const VerificationReport& rep, const std::string& out, const std::string& command,
                  bool verbose) {
  std::cout << rep.to_text(!verbose);
  if (!out.empty()) {
    StagedDir dir(out);
    std::ofstream(dir.path() / "report.txt") << rep.to_text(false);
    RunManifest m;
    m.command = command;
    dir.commit(m);
  }
  return rep.passed() ? kExitOk : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scribble-supervised segmentation with an embedded random walk"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic scribble dataset");
  add_common(gen_cmd, gen.common, true);
  gen_cmd->add_option("--drop-rate", gen.drop_rate, "probability of dropping an object's scribbles");
  gen_cmd->add_option("--shrink-rate", gen.shrink_rate, "fraction of each stroke removed (1 = point)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Two-stage training");
  add_common(train_cmd, tr.common, true);
  train_cmd->add_option("--data", tr.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--ss-op", tr.ss_op, "flip|translation|random")
      ->check(CLI::IsMember({"flip", "translation", "random"}));
  train_cmd->add_option("--ss-loc", tr.ss_loc, "pre|post|eigen")->check(CLI::IsMember({"pre", "post", "eigen"}));
  train_cmd->add_flag("--no-random-walk", tr.no_random_walk, "disable the embedded random walk");
  train_cmd->add_flag("--no-ss", tr.no_ss, "disable the consistency loss");
  train_cmd->add_flag("--log-reference", tr.log_reference, "log the explicit eigenspace reference");
  train_cmd->add_flag("--quiet", tr.quiet, "no per-epoch progress");
  train_cmd->add_option("--epochs", tr.epochs, "total epochs");
  train_cmd->add_option("--stage1-epochs", tr.stage1_epochs, "cross-entropy-only epochs");
  train_cmd->add_option("--eval-every", tr.eval_every, "validate every n epochs");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "mIoU of a checkpoint");
  eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", ev.split, "train|val");
  eval_cmd->add_option("--out", ev.out, "output directory (default: CSV to stdout)");

  MapArgs df, eg;
  auto* diffuse_cmd = app.add_subcommand("diffuse", "Uniformity maps before and after the random walk");
  auto* eig_cmd = app.add_subcommand("eigvecs", "Leading eigenvector maps of P");
  for (auto [cmd, args] : {std::pair{diffuse_cmd, &df}, std::pair{eig_cmd, &eg}}) {
    cmd->add_option("--ckpt", args->ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", args->data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--split", args->split, "train|val");
    cmd->add_option("--index", args->index, "sample index");
    cmd->add_option("--out", args->out, "output directory")->required();
  }
  eig_cmd->add_option("--count", eg.count, "number of eigenvector maps");

  std::size_t max_grid = 6;
  int max_shift = 2;
  std::uint64_t vseed = 1;
  std::string vout;
  bool verbose = false;
  auto* ct_cmd = app.add_subcommand("check-transforms", "Brute-force check of the transform algebra");
  ct_cmd->add_option("--max-grid", max_grid, "largest grid side");
  ct_cmd->add_option("--max-shift", max_shift, "largest translation offset");

  std::size_t count = 100, max_cells = 64;
  auto* sc_cmd = app.add_subcommand("spectral-check", "Eigen identities on random transition matrices");
  sc_cmd->add_option("--count", count, "number of matrices");
  sc_cmd->add_option("--max-cells", max_cells, "largest grid size M*N");

  std::size_t seeds = 3, size = 32;
  auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  gc_cmd->add_option("--seeds", seeds, "number of seeds");
  gc_cmd->add_option("--size", size, "image side for the end-to-end check");

  for (auto* cmd : {ct_cmd, sc_cmd, gc_cmd}) {
    cmd->add_option("--seed", vseed, "random seed");
    cmd->add_option("--out", vout, "write report.txt and a manifest here");
    cmd->add_flag("--verbose", verbose, "print passing checks too");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*diffuse_cmd) return run_diffuse(df);
    if (*eig_cmd) return run_eigvecs(eg);
    if (*ct_cmd) return finish_report(check_transform_algebra(max_grid, max_shift, vseed), vout, "check-transforms", true);
    if (*sc_cmd) return finish_report(run_spectral_suite(count, max_cells, vseed), vout, "spectral-check", verbose);
    if (*gc_cmd) {
      std::vector<std::uint64_t> s;
      for (std::size_t i = 0; i < seeds; ++i) s.push_back(vseed + i);
      return finish_report(run_gradient_suite(s, size), vout, "grad-check", verbose);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
