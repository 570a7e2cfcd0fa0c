#include "rwss/pnm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace rwss {

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& in, const std::filesystem::path& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw PnmError(path.string() + ": truncated header");
  return tok;
}

std::size_t number(std::istream& in, const std::filesystem::path& path) {
  const auto tok = token(in, path);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char ch) { return std::isdigit(ch); }))
    throw PnmError(path.string() + ": bad header field '" + tok + "'");
  return std::stoul(tok);
}

}  // namespace

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PnmError("cannot open " + path.string());
  const auto magic = token(in, path);
  PnmImage img;
  if (magic == "P5")
    img.channels = 1;
  else if (magic == "P6")
    img.channels = 3;
  else
    throw PnmError(path.string() + ": unsupported magic '" + magic + "'");
  img.width = number(in, path);
  img.height = number(in, path);
  const auto maxval = number(in, path);
  if (maxval != 255) throw PnmError(path.string() + ": only maxval 255 is supported");
  // token() consumed exactly one whitespace byte after maxval.
  img.pixels.resize(img.width * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw PnmError(path.string() + ": truncated pixel data");
  return img;
}

void write_pnm(const std::filesystem::path& path, const PnmImage& img) {
  if (img.channels != 1 && img.channels != 3) throw PnmError("write_pnm: channels must be 1 or 3");
  if (img.pixels.size() != img.width * img.height * img.channels)
    throw PnmError("write_pnm: pixel buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PnmError("cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw PnmError("write failed: " + path.string());
}

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& values) {
  write_pnm(path, {width, height, 1, values});
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3) throw PnmError("write_ppm: expected 3 channels");
  PnmImage p{img.width, img.height, 3, {}};
  p.pixels.reserve(img.data.size());
  for (double v : img.data) p.pixels.push_back(to_byte(v));
  write_pnm(path, p);
}

Image read_ppm(const std::filesystem::path& path) {
  const auto p = read_pnm(path);
  if (p.channels != 3) throw PnmError(path.string() + ": expected a PPM (P6) file");
  Image img(p.height, p.width, 3);
  for (std::size_t i = 0; i < p.pixels.size(); ++i) img.data[i] = p.pixels[i] / 255.0;
  return img;
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t height,
                                   std::size_t width) {
  auto p = read_pnm(path);
  if (p.channels != 1) throw PnmError(path.string() + ": expected a PGM (P5) file");
  if (p.height != height || p.width != width)
    throw PnmError(path.string() + ": size " + std::to_string(p.width) + "x" +
                   std::to_string(p.height) + " does not match " + std::to_string(width) + "x" +
                   std::to_string(height));
  return std::move(p.pixels);
}

}  // namespace rwss
