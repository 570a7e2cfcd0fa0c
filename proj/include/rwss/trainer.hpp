#pragma once

// Two-stage training: stage 1 minimises the partial cross-entropy on the
// scribbles; stage 2 adds the entropy term and the configured consistency
// loss between an image and its transformed copy. Adam throughout.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "rwss/config.hpp"
#include "rwss/dataset.hpp"
#include "rwss/losses.hpp"
#include "rwss/model.hpp"
#include "rwss/transforms.hpp"

namespace rwss {

enum class SsLocation { pre, post, eigen };

std::string to_string(SsLocation loc);
std::string to_string(TransformMode mode);
SsLocation parse_ss_location(const std::string& s);
TransformMode parse_transform_mode(const std::string& s);

struct TrainConfig {
  ModelConfig model;
  std::size_t epochs_total = 60;
  std::size_t epochs_stage1 = 30;
  std::size_t batch_size = 8;
  double lr_stage1 = 1e-3;
  double lr_stage2 = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights weights;
  // Consistency loss in stage 2; off gives the plain two-stage baseline.
  bool self_supervision = true;
  TransformMode ss_operation = TransformMode::flip;
  SsLocation ss_location = SsLocation::eigen;
  bool stop_gradient_target = false;
  std::uint64_t seed = 1;
  // Validation every n epochs (0: only after the last epoch).
  std::size_t eval_every = 0;
  // Log the explicit eigenspace reference on every stage-2 step.
  bool log_reference = false;
  std::size_t reference_pairs = 0;

  void validate() const;
  KeyValues to_config() const;
  static TrainConfig from_config(const KeyValues& kv);
};

struct MetricReport {
  std::size_t classes = 0;
  std::vector<std::uint64_t> confusion;  // row = truth, column = prediction
  std::vector<double> iou;               // NaN for classes absent from truth and prediction
  double miou = 0.0;
  long epoch = -1;

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return confusion[truth * classes + pred]; }
};

// IoU from a confusion matrix; classes absent from both sides are excluded.
MetricReport metric_from_confusion(std::size_t classes, std::vector<std::uint64_t> confusion);
void accumulate_confusion(std::vector<std::uint64_t>& confusion, std::size_t classes,
                          const std::vector<std::uint8_t>& truth, const std::vector<std::uint8_t>& pred);

MetricReport evaluate_miou(const ModelParams& params, const std::vector<Sample>& data);

inline constexpr double kNotLogged = std::numeric_limits<double>::quiet_NaN();

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossBreakdown loss;  // batch means
  double ss_reference = kNotLogged;
  std::string transform;
};

struct EpochRecord {
  std::size_t epoch = 0;
  int stage = 1;
  LossBreakdown loss;  // step means
  double ss_reference = kNotLogged;
  double miou = kNotLogged;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::vector<MetricReport> reports;
};

struct TrainResult {
  ModelParams params;
  TrainLog log;
  bool diverged = false;
  std::string message;
};

// Reports progress after each epoch when set.
using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train_two_stage(const Dataset& data, const TrainConfig& cfg,
                            const EpochCallback& on_epoch = {});

// CSV: epoch,step,ce,entropy,ss,total,mIoU (mIoU on the last step of an evaluated epoch).
void write_step_log(const std::filesystem::path& path, const TrainLog& log);
// CSV: epoch,stage,ce,entropy,ss,total,ss_ref,mIoU.
void write_epoch_log(const std::filesystem::path& path, const TrainLog& log);
// CSV: class,iou plus a final miou row, followed by the confusion matrix.
void write_metric_report(const std::filesystem::path& path, const MetricReport& report);

// (clean - perturbed) / clean.
double relative_drop(double miou_clean, double miou_perturbed);

}  // namespace rwss
