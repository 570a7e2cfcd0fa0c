#include "rwss/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rwss/rng.hpp"

namespace rwss {

namespace {

constexpr char kMagic[8] = {'R', 'W', 'S', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor({rows, cols}, std::move(v), true);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok.empty()) throw ConfigError("widths: empty entry in '" + s + "'");
    out.push_back(std::stoul(tok));
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels == 0 || feature_dim == 0) throw std::invalid_argument("model: zero channel count");
  if (classes < 2) throw std::invalid_argument("model: need at least 2 classes");
  if (widths.empty()) throw std::invalid_argument("model: need at least one encoder block");
  if (std::find(widths.begin(), widths.end(), 0u) != widths.end())
    throw std::invalid_argument("model: zero encoder width");
  if (!(gram_temperature > 0.0)) throw std::invalid_argument("model: gram_temperature must be positive");
  if (!std::isfinite(alpha_init)) throw std::invalid_argument("model: alpha_init must be finite");
}

KeyValues ModelConfig::to_config() const {
  KeyValues kv;
  kv.set("in_channels", std::to_string(in_channels));
  kv.set("widths", join(widths));
  kv.set("feature_dim", std::to_string(feature_dim));
  kv.set("classes", std::to_string(classes));
  kv.set("random_walk", random_walk ? "true" : "false");
  kv.set("walk_steps", std::to_string(walk_steps));
  kv.set("alpha_init", format_double(alpha_init));
  kv.set("gram_temperature", format_double(gram_temperature));
  kv.set("model_seed", std::to_string(seed));
  return kv;
}

ModelConfig ModelConfig::from_config(const KeyValues& kv) {
  ModelConfig c;
  c.in_channels = kv.get("in_channels", c.in_channels);
  if (kv.has("widths")) c.widths = split_sizes(kv.get("widths", std::string()));
  c.feature_dim = kv.get("feature_dim", c.feature_dim);
  c.classes = kv.get("classes", c.classes);
  c.random_walk = kv.get("random_walk", c.random_walk);
  c.walk_steps = kv.get("walk_steps", c.walk_steps);
  c.alpha_init = kv.get("alpha_init", c.alpha_init);
  c.gram_temperature = kv.get("gram_temperature", c.gram_temperature);
  c.seed = kv.get_u64("model_seed", c.seed);
  return c;
}

std::vector<Tensor*> ModelParams::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < conv_weight.size(); ++i) {
    out.push_back(&conv_weight[i]);
    out.push_back(&conv_bias[i]);
  }
  out.insert(out.end(), {&proj_weight, &proj_bias, &cls_weight, &cls_bias, &alpha});
  return out;
}

std::vector<const Tensor*> ModelParams::parameters() const {
  auto ps = const_cast<ModelParams*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::vector<std::string> ModelParams::parameter_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < conv_weight.size(); ++i) {
    out.push_back("conv" + std::to_string(i) + ".weight");
    out.push_back("conv" + std::to_string(i) + ".bias");
  }
  out.insert(out.end(), {"proj.weight", "proj.bias", "cls.weight", "cls.bias", "alpha"});
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  out.config = config;
  for (std::size_t i = 0; i < conv_weight.size(); ++i) {
    out.conv_weight.push_back(conv_weight[i].clone(true));
    out.conv_bias.push_back(conv_bias[i].clone(true));
  }
  out.proj_weight = proj_weight.clone(true);
  out.proj_bias = proj_bias.clone(true);
  out.cls_weight = cls_weight.clone(true);
  out.cls_bias = cls_bias.clone(true);
  out.alpha = alpha.clone(alpha.requires_grad());
  return out;
}

void ModelParams::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ModelParams p;
  p.config = cfg;
  std::size_t cin = cfg.in_channels;
  for (auto cout : cfg.widths) {
    p.conv_weight.push_back(uniform_tensor(9 * cin, cout, 1.0 / std::sqrt(9.0 * static_cast<double>(cin)), rng));
    p.conv_bias.push_back(Tensor::zeros({1, cout}, true));
    cin = cout;
  }
  p.proj_weight = uniform_tensor(cin, cfg.feature_dim, 1.0 / std::sqrt(static_cast<double>(cin)), rng);
  p.proj_bias = Tensor::zeros({1, cfg.feature_dim}, true);
  p.cls_weight = uniform_tensor(cfg.feature_dim, cfg.classes,
                                1.0 / std::sqrt(static_cast<double>(cfg.feature_dim)), rng);
  p.cls_bias = Tensor::zeros({1, cfg.classes}, true);
  // Without the walk alpha never enters the graph; keep it a constant.
  p.alpha = Tensor::scalar(cfg.alpha_init, cfg.random_walk);
  return p;
}

ForwardResult forward(const Image& img, const ModelParams& params, const ForwardOptions& opts) {
  const auto& cfg = params.config;
  const std::size_t factor = cfg.downsample();
  if (img.channels != cfg.in_channels)
    throw ShapeError("forward: image has " + std::to_string(img.channels) + " channels, model expects " +
                     std::to_string(cfg.in_channels));
  if (img.height == 0 || img.width == 0 || img.height % factor || img.width % factor)
    throw ShapeError("forward: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                     " is not divisible by the downsample factor " + std::to_string(factor));

  ForwardResult r;
  r.height = img.height;
  r.width = img.width;
  std::size_t h = img.height, w = img.width;
  Tensor x = img.to_tensor();
  for (std::size_t b = 0; b < cfg.widths.size(); ++b) {
    x = relu(conv3x3(x, h, w, params.conv_weight[b], params.conv_bias[b]));
    x = avgpool2(x, h, w);
    h /= 2;
    w /= 2;
  }
  x = add_rowwise(matmul(x, params.proj_weight), params.proj_bias);
  r.f_pre = FeatureGrid(h, w, x);

  if (cfg.random_walk || opts.need_transition) {
    r.tm = build_transition_matrix(r.f_pre, {cfg.gram_temperature});
    r.has_transition = true;
  }
  r.f_post = cfg.random_walk ? random_walk(r.f_pre, r.tm, {params.alpha, cfg.walk_steps}) : r.f_pre;

  Tensor logits = add_rowwise(matmul(r.f_post.values, params.cls_weight), params.cls_bias);
  r.logits = upsample_nearest(logits, h, w, factor);
  r.s = softmax_rows(r.logits);
  return r;
}

std::vector<std::uint8_t> predict_labels(const Tensor& s) {
  if (s.dim() != 2) throw ShapeError("predict_labels: expected (H*W) x C probabilities");
  const std::size_t c = s.cols();
  if (c > 255) throw ShapeError("predict_labels: too many classes");
  std::vector<std::uint8_t> out(s.rows());
  const auto v = s.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (v[i * c + k] > v[i * c + best]) best = k;
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string cfg = params.config.to_config().dump();
  const auto cfg_len = static_cast<std::uint64_t>(cfg.size());
  const auto count = static_cast<std::uint64_t>(params.parameter_count());
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  out.write(reinterpret_cast<const char*>(&cfg_len), sizeof cfg_len);
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (const auto* p : params.parameters())
    out.write(reinterpret_cast<const char*>(p->data().data()),
              static_cast<std::streamsize>(p->size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  std::uint32_t version = 0;
  std::uint64_t cfg_len = 0, count = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error(path.string() + ": not a checkpoint");
  if (version != kVersion)
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  in.read(reinterpret_cast<char*>(&cfg_len), sizeof cfg_len);
  if (!in || cfg_len > (1u << 20)) throw std::runtime_error(path.string() + ": corrupt header");
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in) throw std::runtime_error(path.string() + ": truncated header");

  ModelParams params = init_params(ModelConfig::from_config(KeyValues::parse(cfg, path.string())));
  if (count != params.parameter_count())
    throw std::runtime_error(path.string() + ": parameter count " + std::to_string(count) +
                             " does not match its config (" +
                             std::to_string(params.parameter_count()) + ")");
  for (auto* p : params.parameters()) {
    auto dst = p->mutable_data();
    in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error(path.string() + ": truncated parameters");
  if (in.peek() != std::char_traits<char>::eof())
    throw std::runtime_error(path.string() + ": trailing bytes");
  return params;
}

}  // namespace rwss
