#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "geoproto/error.hpp"
#include "geoproto/geometry.hpp"

namespace geoproto {

/// Binary (P5) PGM with maxval 255.
inline void write_pgm(const std::string& path, int height, int width,
                      const std::vector<std::uint8_t>& pixels) {
  if (static_cast<size_t>(height) * width != pixels.size())
    throw ShapeError("write_pgm: pixel count does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("write_pgm: cannot open " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw FormatError("write_pgm: write failed for " + path);
}

inline std::vector<std::uint8_t> read_pgm(const std::string& path, int& height, int& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("read_pgm: cannot open " + path);
  auto next_token = [&in, &path]() {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (!std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        while ((c = in.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
        return tok;
      }
    }
    throw FormatError("read_pgm: truncated header in " + path);
  };
  if (next_token() != "P5") throw FormatError("read_pgm: not a P5 file: " + path);
  width = std::stoi(next_token());
  height = std::stoi(next_token());
  int maxval = std::stoi(next_token());
  if (width < 1 || height < 1 || maxval != 255)
    throw FormatError("read_pgm: unsupported header in " + path);
  std::vector<std::uint8_t> pixels(static_cast<size_t>(height) * width);
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(pixels.size()))
    throw FormatError("read_pgm: truncated pixel data in " + path);
  return pixels;
}

/// Bin-map export convention: background 0, bin k maps to round(255*(k+1)/K).
inline void write_binmap_pgm(const BinMap& bm, const std::string& path) {
  std::vector<std::uint8_t> px(bm.bins.size(), 0);
  for (size_t i = 0; i < bm.bins.size(); ++i) {
    if (bm.bins[i] >= 0)
      px[i] = static_cast<std::uint8_t>(
          std::lround(255.0 * (bm.bins[i] + 1) / bm.num_bins));
  }
  write_pgm(path, bm.height, bm.width, px);
}

/// Mask export: foreground 255, background 0.
inline void write_mask_pgm(const BinaryMask& mask, const std::string& path) {
  std::vector<std::uint8_t> px(mask.bits.size(), 0);
  for (size_t i = 0; i < mask.bits.size(); ++i) px[i] = mask.bits[i] ? 255 : 0;
  write_pgm(path, mask.height, mask.width, px);
}

/// Grayscale export of an image in [0,1].
inline void write_gray_pgm(const std::vector<double>& values, int height, int width,
                           const std::string& path) {
  std::vector<std::uint8_t> px(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    double v = std::min(1.0, std::max(0.0, values[i]));
    px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  write_pgm(path, height, width, px);
}

}  // namespace geoproto
