#pragma once

// Binary PGM (P5) / PPM (P6) with maxval 255.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "rwss/grid.hpp"

namespace rwss {

class PnmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PnmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 (P5) or 3 (P6)
  std::vector<std::uint8_t> pixels;
};

PnmImage read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const PnmImage& img);

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& values);

// Values are rounded to the nearest 1/255 step after clamping to [0, 1].
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t height,
                                   std::size_t width);

std::uint8_t to_byte(double v);

}  // namespace rwss
