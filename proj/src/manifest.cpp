#include "rwss/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace rwss {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::map<std::string, std::uint64_t> checksum_tree(const fs::path& dir) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == kManifestName) continue;
    out[rel] = fnv1a64(e.path());
  }
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void RunManifest::write(const fs::path& dir) const {
  std::ofstream out(dir / kManifestName);
  if (!out) throw std::runtime_error("cannot write " + (dir / kManifestName).string());
  out << "command=" << command << "\nconfig=" << config_path << "\nseed=" << seed
      << "\noutput=" << output_dir << "\n\n[settings]\n"
      << settings.dump() << "\n[checksums]\n";
  for (const auto& [path, sum] : checksums) out << hex64(sum) << "  " << path << '\n';
}

RunManifest RunManifest::read(const fs::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw std::runtime_error("cannot open " + (dir / kManifestName).string());
  RunManifest m;
  std::string line, section;
  std::string settings;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "[settings]" || line == "[checksums]") {
      section = line;
      continue;
    }
    if (section == "[settings]") {
      settings += line + "\n";
    } else if (section == "[checksums]") {
      const auto sp = line.find("  ");
      if (sp == std::string::npos) throw std::runtime_error("manifest: bad checksum line '" + line + "'");
      m.checksums[line.substr(sp + 2)] = std::stoull(line.substr(0, sp), nullptr, 16);
    } else {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const auto key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key == "command") m.command = value;
      else if (key == "config") m.config_path = value;
      else if (key == "seed") m.seed = std::stoull(value);
      else if (key == "output") m.output_dir = value;
    }
  }
  m.settings = KeyValues::parse(settings, "manifest");
  return m;
}

}  // namespace rwss
