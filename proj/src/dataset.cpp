#include "rwss/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "rwss/pnm.hpp"
#include "rwss/rng.hpp"

namespace rwss {

namespace fs = std::filesystem;

KeyValues DatasetConfig::to_config() const {
  KeyValues kv;
  kv.set("height", std::to_string(scene.height));
  kv.set("width", std::to_string(scene.width));
  kv.set("classes", std::to_string(scene.classes));
  kv.set("min_objects", std::to_string(scene.min_objects));
  kv.set("max_objects", std::to_string(scene.max_objects));
  kv.set("min_radius", format_double(scene.min_radius));
  kv.set("max_radius", format_double(scene.max_radius));
  kv.set("noise", format_double(scene.noise));
  kv.set("color_jitter", format_double(scene.color_jitter));
  kv.set("texture", format_double(scene.texture));
  kv.set("object_texture", format_double(scene.object_texture));
  kv.set("clutter", std::to_string(scene.clutter));
  kv.set("max_retries", std::to_string(scene.max_retries));
  kv.set("min_visible", std::to_string(scene.min_visible));
  kv.set("scribble_length_factor", format_double(scribble.length_factor));
  kv.set("scribble_min_length", std::to_string(scribble.min_length));
  kv.set("scribble_max_length", std::to_string(scribble.max_length));
  kv.set("background_strokes", std::to_string(scribble.background_strokes));
  kv.set("scribble_curvature", format_double(scribble.curvature));
  kv.set("train_count", std::to_string(train_count));
  kv.set("val_count", std::to_string(val_count));
  kv.set("seed", std::to_string(seed));
  kv.set("drop_rate", format_double(drop_rate));
  kv.set("shrink_rate", format_double(shrink_rate));
  return kv;
}

DatasetConfig DatasetConfig::from_config(const KeyValues& kv) {
  DatasetConfig c;
  c.scene.height = kv.get("height", c.scene.height);
  c.scene.width = kv.get("width", c.scene.width);
  c.scene.classes = kv.get("classes", c.scene.classes);
  c.scene.min_objects = kv.get("min_objects", c.scene.min_objects);
  c.scene.max_objects = kv.get("max_objects", c.scene.max_objects);
  c.scene.min_radius = kv.get("min_radius", c.scene.min_radius);
  c.scene.max_radius = kv.get("max_radius", c.scene.max_radius);
  c.scene.noise = kv.get("noise", c.scene.noise);
  c.scene.color_jitter = kv.get("color_jitter", c.scene.color_jitter);
  c.scene.texture = kv.get("texture", c.scene.texture);
  c.scene.object_texture = kv.get("object_texture", c.scene.object_texture);
  c.scene.clutter = kv.get("clutter", c.scene.clutter);
  c.scene.max_retries = kv.get("max_retries", c.scene.max_retries);
  c.scene.min_visible = kv.get("min_visible", c.scene.min_visible);
  c.scribble.length_factor = kv.get("scribble_length_factor", c.scribble.length_factor);
  c.scribble.min_length = kv.get("scribble_min_length", c.scribble.min_length);
  c.scribble.max_length = kv.get("scribble_max_length", c.scribble.max_length);
  c.scribble.background_strokes = kv.get("background_strokes", c.scribble.background_strokes);
  c.scribble.curvature = kv.get("scribble_curvature", c.scribble.curvature);
  c.train_count = kv.get("train_count", c.train_count);
  c.val_count = kv.get("val_count", c.val_count);
  c.seed = kv.get_u64("seed", c.seed);
  c.drop_rate = kv.get("drop_rate", c.drop_rate);
  c.shrink_rate = kv.get("shrink_rate", c.shrink_rate);
  return c;
}

Sample make_sample(const DatasetConfig& cfg, Split split, std::size_t index) {
  const std::uint64_t stream = (split == Split::train ? 0ull : 1ull << 32) + index;
  Sample s;
  s.seed = derive_seed(cfg.seed, stream);
  char name[32];
  std::snprintf(name, sizeof name, "%s_%05zu", split == Split::train ? "train" : "val", index);
  s.name = name;

  const Scene scene = gen_synthetic_scene(derive_seed(s.seed, 0), cfg.scene);
  ScribbleAnnotation ann = rasterize_scribbles(scene, derive_seed(s.seed, 1), cfg.scribble);
  if (cfg.drop_rate > 0.0) ann = apply_drop(ann, cfg.drop_rate, derive_seed(s.seed, 2));
  if (cfg.shrink_rate > 0.0) ann = apply_shrink(ann, cfg.shrink_rate, derive_seed(s.seed, 3));
  s.image = scene.image;
  s.mask = scene.mask;
  s.scribble = ann.labels();
  return s;
}

Dataset make_dataset(const DatasetConfig& cfg) {
  Dataset d;
  d.config = cfg;
  d.train.reserve(cfg.train_count);
  d.val.reserve(cfg.val_count);
  for (std::size_t i = 0; i < cfg.train_count; ++i) d.train.push_back(make_sample(cfg, Split::train, i));
  for (std::size_t i = 0; i < cfg.val_count; ++i) d.val.push_back(make_sample(cfg, Split::val, i));
  return d;
}

void write_dataset(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "scribbles");
  {
    std::ofstream cfg(dir / "dataset.cfg");
    cfg << data.config.to_config().dump();
    if (!cfg) throw std::runtime_error("cannot write " + (dir / "dataset.cfg").string());
  }
  std::ofstream manifest(dir / "manifest.csv");
  manifest << "split,image,mask,scribble,seed\n";
  auto emit = [&](const std::vector<Sample>& samples, const char* split) {
    for (const auto& s : samples) {
      const std::string img = "images/" + s.name + ".ppm";
      const std::string mask = "masks/" + s.name + ".pgm";
      const std::string scr = "scribbles/" + s.name + ".pgm";
      write_ppm(dir / img, s.image);
      write_pgm(dir / mask, s.image.height, s.image.width, s.mask);
      write_pgm(dir / scr, s.image.height, s.image.width, s.scribble);
      manifest << split << ',' << img << ',' << mask << ',' << scr << ',' << s.seed << '\n';
    }
  };
  emit(data.train, "train");
  emit(data.val, "val");
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.csv").string());
}

Dataset read_dataset(const fs::path& dir) {
  Dataset d;
  d.config = DatasetConfig::from_config(KeyValues::load(dir / "dataset.cfg"));
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot open " + (dir / "manifest.csv").string());
  std::string line;
  std::getline(manifest, line);
  if (line != "split,image,mask,scribble,seed")
    throw std::runtime_error((dir / "manifest.csv").string() + ": unexpected header");
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string split, img, mask, scr, seed;
    if (!std::getline(row, split, ',') || !std::getline(row, img, ',') ||
        !std::getline(row, mask, ',') || !std::getline(row, scr, ',') || !std::getline(row, seed))
      throw std::runtime_error("manifest.csv: malformed row '" + line + "'");
    Sample s;
    s.name = fs::path(img).stem().string();
    s.seed = std::stoull(seed);
    s.image = read_ppm(dir / img);
    s.mask = read_pgm(dir / mask, s.image.height, s.image.width);
    s.scribble = read_pgm(dir / scr, s.image.height, s.image.width);
    if (split == "train")
      d.train.push_back(std::move(s));
    else if (split == "val")
      d.val.push_back(std::move(s));
    else
      throw std::runtime_error("manifest.csv: unknown split '" + split + "'");
  }
  return d;
}

}  // namespace rwss
