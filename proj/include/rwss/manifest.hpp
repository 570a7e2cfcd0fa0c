#pragma once

// Run manifests: what was run, with which config, and FNV-1a checksums of
// every file it produced.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "rwss/config.hpp"

namespace rwss {

inline constexpr const char* kManifestName = "run_manifest.txt";

std::uint64_t fnv1a64(const std::filesystem::path& file);

// Relative path -> checksum for every regular file under dir, except the manifest.
std::map<std::string, std::uint64_t> checksum_tree(const std::filesystem::path& dir);

struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string output_dir;
  KeyValues settings;
  std::map<std::string, std::uint64_t> checksums;

  void write(const std::filesystem::path& dir) const;
  static RunManifest read(const std::filesystem::path& dir);
};

std::string hex64(std::uint64_t v);

}  // namespace rwss
