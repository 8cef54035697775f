#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stmt {

// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int y, int x, int c = 0) const {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t& at(int y, int x, int c = 0) {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

// Binary netpbm I/O, maxval 255 only (P6 = RGB, P5 = gray). Parse errors
// carry the file path and byte offset.
ImageU8 read_netpbm(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& img);
void write_pgm(const std::string& path, const ImageU8& img);

}  // namespace stmt
