#pragma once

// Synthetic train/validation splits and their on-disk layout:
//
//   dir/dataset.cfg            generator config, drop / shrink rates
//   dir/manifest.csv           split,image,mask,scribble,seed
//   dir/images/<name>.ppm      P6
//   dir/masks/<name>.pgm       P5, class id per pixel
//   dir/scribbles/<name>.pgm   P5, class id or 255

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rwss/config.hpp"
#include "rwss/grid.hpp"
#include "rwss/scribbles.hpp"

namespace rwss {

struct DatasetConfig {
  SceneConfig scene;
  ScribbleConfig scribble;
  std::size_t train_count = 200;
  std::size_t val_count = 50;
  std::uint64_t seed = 7;
  double drop_rate = 0.0;
  double shrink_rate = 0.0;

  KeyValues to_config() const;
  // Reads the keys written by to_config(); missing keys keep defaults.
  static DatasetConfig from_config(const KeyValues& kv);
};

struct Sample {
  std::string name;
  std::uint64_t seed = 0;
  Image image;
  std::vector<std::uint8_t> mask;
  std::vector<std::uint8_t> scribble;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Sample> train;
  std::vector<Sample> val;

  std::size_t classes() const { return config.scene.classes; }
};

enum class Split { train, val };

// Pure function of (config, split, index).
Sample make_sample(const DatasetConfig& cfg, Split split, std::size_t index);
Dataset make_dataset(const DatasetConfig& cfg);

void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace rwss
