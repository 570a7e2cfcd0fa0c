#include "rwss/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "rwss/rng.hpp"
#include "rwss/spectral.hpp"

namespace rwss {

std::string to_string(SsLocation loc) {
  switch (loc) {
    case SsLocation::pre: return "pre";
    case SsLocation::post: return "post";
    case SsLocation::eigen: return "eigen";
  }
  return "?";
}

std::string to_string(TransformMode mode) {
  switch (mode) {
    case TransformMode::flip: return "flip";
    case TransformMode::translation: return "translation";
    case TransformMode::random: return "random";
  }
  return "?";
}

SsLocation parse_ss_location(const std::string& s) {
  if (s == "pre") return SsLocation::pre;
  if (s == "post") return SsLocation::post;
  if (s == "eigen") return SsLocation::eigen;
  throw ConfigError("unknown ss location '" + s + "' (pre|post|eigen)");
}

TransformMode parse_transform_mode(const std::string& s) {
  if (s == "flip") return TransformMode::flip;
  if (s == "translation") return TransformMode::translation;
  if (s == "random") return TransformMode::random;
  throw ConfigError("unknown ss operation '" + s + "' (flip|translation|random)");
}

void TrainConfig::validate() const {
  model.validate();
  if (epochs_stage1 > epochs_total) throw std::invalid_argument("train: epochs_stage1 > epochs_total");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (!(lr_stage1 > 0.0) || !(lr_stage2 > 0.0)) throw std::invalid_argument("train: learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0))
    throw std::invalid_argument("train: bad Adam hyperparameters");
  if (weights.entropy < 0.0 || weights.ss < 0.0 || weights.trace < 0.0)
    throw std::invalid_argument("train: loss weights must be non-negative");
}

KeyValues TrainConfig::to_config() const {
  KeyValues kv = model.to_config();
  kv.set("epochs_total", std::to_string(epochs_total));
  kv.set("epochs_stage1", std::to_string(epochs_stage1));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("lr_stage1", format_double(lr_stage1));
  kv.set("lr_stage2", format_double(lr_stage2));
  kv.set("beta1", format_double(beta1));
  kv.set("beta2", format_double(beta2));
  kv.set("adam_eps", format_double(adam_eps));
  kv.set("w_entropy", format_double(weights.entropy));
  kv.set("w_ss", format_double(weights.ss));
  kv.set("gamma", format_double(weights.trace));
  kv.set("self_supervision", self_supervision ? "true" : "false");
  kv.set("ss_op", to_string(ss_operation));
  kv.set("ss_loc", to_string(ss_location));
  kv.set("stop_gradient_target", stop_gradient_target ? "true" : "false");
  kv.set("seed", std::to_string(seed));
  kv.set("eval_every", std::to_string(eval_every));
  kv.set("log_reference", log_reference ? "true" : "false");
  kv.set("reference_pairs", std::to_string(reference_pairs));
  return kv;
}

TrainConfig TrainConfig::from_config(const KeyValues& kv) {
  TrainConfig c;
  c.model = ModelConfig::from_config(kv);
  c.epochs_total = kv.get("epochs_total", c.epochs_total);
  c.epochs_stage1 = kv.get("epochs_stage1", c.epochs_stage1);
  c.batch_size = kv.get("batch_size", c.batch_size);
  c.lr_stage1 = kv.get("lr_stage1", c.lr_stage1);
  c.lr_stage2 = kv.get("lr_stage2", c.lr_stage2);
  c.beta1 = kv.get("beta1", c.beta1);
  c.beta2 = kv.get("beta2", c.beta2);
  c.adam_eps = kv.get("adam_eps", c.adam_eps);
  c.weights.entropy = kv.get("w_entropy", c.weights.entropy);
  c.weights.ss = kv.get("w_ss", c.weights.ss);
  c.weights.trace = kv.get("gamma", c.weights.trace);
  c.self_supervision = kv.get("self_supervision", c.self_supervision);
  c.ss_operation = parse_transform_mode(kv.get("ss_op", to_string(c.ss_operation)));
  c.ss_location = parse_ss_location(kv.get("ss_loc", to_string(c.ss_location)));
  c.stop_gradient_target = kv.get("stop_gradient_target", c.stop_gradient_target);
  c.seed = kv.get_u64("seed", c.seed);
  c.eval_every = kv.get("eval_every", c.eval_every);
  c.log_reference = kv.get("log_reference", c.log_reference);
  c.reference_pairs = kv.get("reference_pairs", c.reference_pairs);
  return c;
}

void accumulate_confusion(std::vector<std::uint64_t>& confusion, std::size_t classes,
                          const std::vector<std::uint8_t>& truth, const std::vector<std::uint8_t>& pred) {
  if (truth.size() != pred.size()) throw ShapeError("accumulate_confusion: size mismatch");
  if (confusion.size() != classes * classes) confusion.assign(classes * classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || pred[i] >= classes)
      throw std::invalid_argument("accumulate_confusion: class id out of range");
    ++confusion[truth[i] * classes + pred[i]];
  }
}

MetricReport metric_from_confusion(std::size_t classes, std::vector<std::uint64_t> confusion) {
  if (confusion.size() != classes * classes) throw ShapeError("metric_from_confusion: bad matrix size");
  MetricReport r;
  r.classes = classes;
  r.confusion = std::move(confusion);
  r.iou.assign(classes, std::numeric_limits<double>::quiet_NaN());
  double acc = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::uint64_t tp = r.at(c, c), fp = 0, fn = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      if (k == c) continue;
      fn += r.at(c, k);
      fp += r.at(k, c);
    }
    const std::uint64_t den = tp + fp + fn;
    if (den == 0) continue;
    r.iou[c] = static_cast<double>(tp) / static_cast<double>(den);
    acc += r.iou[c];
    ++counted;
  }
  r.miou = counted ? acc / static_cast<double>(counted) : 0.0;
  return r;
}

MetricReport evaluate_miou(const ModelParams& params, const std::vector<Sample>& data) {
  const std::size_t classes = params.config.classes;
  std::vector<std::uint64_t> confusion(classes * classes, 0);
  for (const auto& s : data) {
    const auto fwd = forward(s.image, params);
    accumulate_confusion(confusion, classes, s.mask, predict_labels(fwd.s));
  }
  return metric_from_confusion(classes, std::move(confusion));
}

namespace {

struct Adam {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;

  explicit Adam(const ModelParams& p) {
    for (const auto* t : p.parameters()) {
      m.emplace_back(t->size(), 0.0);
      v.emplace_back(t->size(), 0.0);
    }
  }

  void step(ModelParams& params, double lr, const TrainConfig& cfg) {
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    auto ps = params.parameters();
    for (std::size_t k = 0; k < ps.size(); ++k) {
      Tensor& p = *ps[k];
      if (!p.requires_grad()) continue;
      const auto g = p.grad();
      if (g.empty()) continue;
      auto x = p.mutable_data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[k][i] = cfg.beta1 * m[k][i] + (1.0 - cfg.beta1) * g[i];
        v[k][i] = cfg.beta2 * v[k][i] + (1.0 - cfg.beta2) * g[i] * g[i];
        x[i] -= lr * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + cfg.adam_eps);
      }
    }
  }
};

struct ItemLoss {
  LossBreakdown loss;
  double reference = kNotLogged;
  bool finite = true;
};

ItemLoss train_item(const Sample& s, ModelParams& params, const TrainConfig& cfg, bool stage2,
                    const TransformSpec& spec, double batch_scale) {
  const bool ss = stage2 && cfg.self_supervision;
  const bool eigen = ss && cfg.ss_location == SsLocation::eigen;
  Tape tape;
  const auto fwd = forward(s.image, params, {eigen || (ss && cfg.log_reference)});
  const auto ce = partial_cross_entropy(fwd.s, s.scribble);
  Tensor entropy, ss_value;
  ItemLoss out;
  if (stage2) entropy = entropy_loss(fwd.s);
  if (ss) {
    const Image timg = transform_image(s.image, spec, params.config.downsample());
    const auto fwd_t = forward(timg, params, {eigen || cfg.log_reference});
    switch (cfg.ss_location) {
      case SsLocation::pre:
        ss_value = feature_ss(fwd.f_pre, fwd_t.f_pre, spec);
        break;
      case SsLocation::post:
        ss_value = feature_ss(fwd.f_post, fwd_t.f_post, spec);
        break;
      case SsLocation::eigen: {
        const auto cm = computing_matrices(spec, fwd.f_pre.height, fwd.f_pre.width);
        ss_value = soft_eigenspace_ss(fwd.tm.P, fwd_t.tm.P, cm,
                                      {cfg.weights.trace, cfg.stop_gradient_target})
                       .value;
        break;
      }
    }
    if (cfg.log_reference) {
      EigenspaceReferenceOptions ro;
      ro.max_pairs = cfg.reference_pairs;
      out.reference = eigenspace_ss_reference(fwd.tm, fwd_t.tm, spec, ro);
    }
  }
  const auto total = total_loss(ce.value, entropy, ss_value, cfg.weights, ce.labeled);
  out.loss = total.breakdown;
  if (!std::isfinite(out.loss.total)) {
    out.finite = false;
    return out;
  }
  tape.backward(scale(total.value, batch_scale));
  return out;
}

bool evaluate_now(const TrainConfig& cfg, std::size_t epoch) {
  if (epoch + 1 == cfg.epochs_total) return true;
  return cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
}

}  // namespace

TrainResult train_two_stage(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("train: empty training split");
  if (cfg.model.classes != data.classes())
    throw std::invalid_argument("train: model has " + std::to_string(cfg.model.classes) +
                                " classes, dataset has " + std::to_string(data.classes()));

  TrainResult result;
  result.params = init_params(cfg.model);
  ModelParams& params = result.params;
  Adam adam(params);
  Rng order_rng(derive_seed(cfg.seed, 101));
  Rng transform_rng(derive_seed(cfg.seed, 202));
  const std::size_t grid_h = data.train.front().image.height / cfg.model.downsample();
  const std::size_t grid_w = data.train.front().image.width / cfg.model.downsample();

  std::vector<std::size_t> order(data.train.size());
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs_total; ++epoch) {
    const bool stage2 = epoch >= cfg.epochs_stage1;
    const double lr = stage2 ? cfg.lr_stage2 : cfg.lr_stage1;
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage2 ? 2 : 1;
    double ref_sum = 0.0;
    std::size_t ref_count = 0, steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale_b = 1.0 / static_cast<double>(end - start);
      TransformSpec spec = TransformSpec::flip();
      if (stage2 && cfg.self_supervision)
        spec = sample_transform(cfg.ss_operation, grid_h, grid_w, transform_rng);

      const ModelParams snapshot = params.clone();
      params.zero_grad();
      StepRecord step;
      step.epoch = epoch;
      step.step = global_step;
      step.transform = stage2 && cfg.self_supervision ? spec.to_string() : "";
      double step_ref = 0.0;
      std::size_t step_ref_count = 0;
      for (std::size_t b = start; b < end; ++b) {
        const auto item = train_item(data.train[order[b]], params, cfg, stage2, spec, scale_b);
        if (!item.finite) {
          result.params = snapshot;
          result.diverged = true;
          result.message = "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(global_step) + "; returning the last good parameters";
          return result;
        }
        step.loss.ce += scale_b * item.loss.ce;
        step.loss.entropy += scale_b * item.loss.entropy;
        step.loss.ss += scale_b * item.loss.ss;
        step.loss.total += scale_b * item.loss.total;
        step.loss.labeled += item.loss.labeled;
        if (!std::isnan(item.reference)) {
          step_ref += item.reference;
          ++step_ref_count;
        }
      }
      adam.step(params, lr, cfg);
      if (step_ref_count) {
        step.ss_reference = step_ref / static_cast<double>(step_ref_count);
        ref_sum += step.ss_reference;
        ++ref_count;
      }
      rec.loss.ce += step.loss.ce;
      rec.loss.entropy += step.loss.entropy;
      rec.loss.ss += step.loss.ss;
      rec.loss.total += step.loss.total;
      rec.loss.labeled += step.loss.labeled;
      result.log.steps.push_back(step);
      ++steps;
      ++global_step;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    rec.loss.ce *= inv;
    rec.loss.entropy *= inv;
    rec.loss.ss *= inv;
    rec.loss.total *= inv;
    if (ref_count) rec.ss_reference = ref_sum / static_cast<double>(ref_count);
    if (evaluate_now(cfg, epoch) && !data.val.empty()) {
      auto report = evaluate_miou(params, data.val);
      report.epoch = static_cast<long>(epoch);
      rec.miou = report.miou;
      result.log.reports.push_back(std::move(report));
    }
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

namespace {

std::string csv_number(double v) { return std::isnan(v) ? std::string() : format_double(v); }

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void write_step_log(const std::filesystem::path& path, const TrainLog& log) {
  auto out = open_csv(path);
  out << "epoch,step,ce,entropy,ss,total,mIoU\n";
  for (std::size_t i = 0; i < log.steps.size(); ++i) {
    const auto& s = log.steps[i];
    double miou = kNotLogged;
    const bool last_of_epoch = i + 1 == log.steps.size() || log.steps[i + 1].epoch != s.epoch;
    if (last_of_epoch && s.epoch < log.epochs.size()) miou = log.epochs[s.epoch].miou;
    out << s.epoch << ',' << s.step << ',' << format_double(s.loss.ce) << ','
        << format_double(s.loss.entropy) << ',' << format_double(s.loss.ss) << ','
        << format_double(s.loss.total) << ',' << csv_number(miou) << '\n';
  }
}

void write_epoch_log(const std::filesystem::path& path, const TrainLog& log) {
  auto out = open_csv(path);
  out << "epoch,stage,ce,entropy,ss,total,ss_ref,mIoU\n";
  for (const auto& e : log.epochs)
    out << e.epoch << ',' << e.stage << ',' << format_double(e.loss.ce) << ','
        << format_double(e.loss.entropy) << ',' << format_double(e.loss.ss) << ','
        << format_double(e.loss.total) << ',' << csv_number(e.ss_reference) << ','
        << csv_number(e.miou) << '\n';
}

void write_metric_report(const std::filesystem::path& path, const MetricReport& report) {
  auto out = open_csv(path);
  out << "class,iou\n";
  for (std::size_t c = 0; c < report.classes; ++c) out << c << ',' << csv_number(report.iou[c]) << '\n';
  out << "miou," << format_double(report.miou) << "\n\ntruth\\pred";
  for (std::size_t c = 0; c < report.classes; ++c) out << ',' << c;
  out << '\n';
  for (std::size_t t = 0; t < report.classes; ++t) {
    out << t;
    for (std::size_t p = 0; p < report.classes; ++p) out << ',' << report.at(t, p);
    out << '\n';
  }
}

double relative_drop(double miou_clean, double miou_perturbed) {
  if (!(miou_clean > 0.0)) throw std::invalid_argument("relative_drop: clean mIoU must be positive");
  return (miou_clean - miou_perturbed) / miou_clean;
}

}  // namespace rwss
