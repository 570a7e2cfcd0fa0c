#pragma once

// Desk-scale segmentation network:
//
//   image -> [conv3x3 + ReLU + avgpool2] x blocks -> 1x1 projection (f_pre)
//         -> transition matrix P -> random walk (f_post = alpha*P*f_pre + f_pre)
//         -> 1x1 classifier -> nearest upsample -> softmax over classes (s)

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rwss/config.hpp"
#include "rwss/diffusion.hpp"
#include "rwss/grid.hpp"
#include "rwss/similarity.hpp"

namespace rwss {

struct ModelConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> widths = {16, 32, 64};
  std::size_t feature_dim = 64;
  std::size_t classes = 4;
  bool random_walk = true;
  std::size_t walk_steps = 1;
  double alpha_init = 0.5;
  double gram_temperature = 1.0;
  std::uint64_t seed = 1;

  std::size_t downsample() const { return std::size_t{1} << widths.size(); }
  void validate() const;
  KeyValues to_config() const;
  static ModelConfig from_config(const KeyValues& kv);
  bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
  ModelConfig config;
  std::vector<Tensor> conv_weight;  // (9*Cin) x Cout per block
  std::vector<Tensor> conv_bias;    // 1 x Cout
  Tensor proj_weight;               // widths.back() x feature_dim
  Tensor proj_bias;
  Tensor cls_weight;                // feature_dim x classes
  Tensor cls_bias;
  Tensor alpha;                     // scalar

  // Declaration order; the checkpoint and optimiser state follow it.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

  ModelParams clone() const;
  void zero_grad();
};

// Fan-in scaled uniform weights, zero biases, alpha = alpha_init.
ModelParams init_params(const ModelConfig& cfg);

struct ForwardOptions {
  // Build P even when the random walk is off (for the eigenspace loss or diagnostics).
  bool need_transition = false;
};

struct ForwardResult {
  std::size_t height = 0;  // image size
  std::size_t width = 0;
  FeatureGrid f_pre;
  bool has_transition = false;
  TransitionMatrix tm;
  FeatureGrid f_post;  // equals f_pre when the walk is off
  Tensor logits;       // (H*W) x classes, upsampled
  Tensor s;            // softmax of logits
};

ForwardResult forward(const Image& img, const ModelParams& params, const ForwardOptions& opts = {});

// Per-pixel argmax of (H*W) x C probabilities; ties go to the smaller class id.
std::vector<std::uint8_t> predict_labels(const Tensor& s);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace rwss
