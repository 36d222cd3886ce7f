#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "geoproto/error.hpp"

namespace geoproto {

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<size_t>(h) * w, 0) {
    if (h < 1 || w < 1) throw ShapeError("mask dimensions must be positive");
  }

  bool at(int y, int x) const { return bits[static_cast<size_t>(y) * width + x] != 0; }
  void set(int y, int x, bool v) { bits[static_cast<size_t>(y) * width + x] = v ? 1 : 0; }

  int count() const {
    int n = 0;
    for (auto b : bits) n += b ? 1 : 0;
    return n;
  }

  BinaryMask complement() const {
    BinaryMask out(height, width);
    for (size_t i = 0; i < bits.size(); ++i) out.bits[i] = bits[i] ? 0 : 1;
    return out;
  }

  bool operator==(const BinaryMask& o) const {
    return height == o.height && width == o.width && bits == o.bits;
  }
};

/// Per-pixel Euclidean distance to the nearest background pixel.
/// Background pixels hold 0 by convention.
struct DistanceField {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

/// Ordinal stratum labels: -1 on background, {0..K-1} on foreground.
struct BinMap {
  int height = 0;
  int width = 0;
  int num_bins = 0;
  std::vector<int> bins;

  int at(int y, int x) const { return bins[static_cast<size_t>(y) * width + x]; }
  int foreground_count() const {
    int n = 0;
    for (int b : bins) n += b >= 0 ? 1 : 0;
    return n;
  }
};

namespace detail {

// 1-D squared distance transform via the lower envelope of parabolas
// (Felzenszwalb & Huttenlocher). f holds sampled costs, d the result.
inline void squared_dt_1d(const std::vector<double>& f, std::vector<double>& d, int n,
                          std::vector<int>& v, std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      int p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
          (2.0 * q - 2.0 * p);
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace detail

/// Exact Euclidean distance transform: two separable lower-envelope passes
/// over squared distances. Matches the brute-force pairwise minimum exactly.
inline DistanceField edt(const BinaryMask& mask) {
  const int h = mask.height, w = mask.width;
  bool any_fg = false, any_bg = false;
  for (auto b : mask.bits) (b ? any_fg : any_bg) = true;
  if (any_fg && !any_bg)
    throw NoBackgroundError("edt: mask has no background pixel; distance is undefined");

  DistanceField field;
  field.height = h;
  field.width = w;
  field.values.assign(static_cast<size_t>(h) * w, 0.0);
  if (!any_fg) return field;

  constexpr double kBig = 1e18;  // plays the role of +inf in envelope math
  std::vector<double> g(static_cast<size_t>(h) * w);
  std::vector<double> col_f(h), col_d(h);
  std::vector<int> v(std::max(h, w) + 1);
  std::vector<double> z(std::max(h, w) + 2);

  // pass 1: per column over rows, seeded with 0 at background pixels
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col_f[y] = mask.at(y, x) ? kBig : 0.0;
    detail::squared_dt_1d(col_f, col_d, h, v, z);
    for (int y = 0; y < h; ++y) g[static_cast<size_t>(y) * w + x] = col_d[y];
  }
  // pass 2: per row over columns
  std::vector<double> row_f(w), row_d(w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row_f[x] = g[static_cast<size_t>(y) * w + x];
    detail::squared_dt_1d(row_f, row_d, w, v, z);
    for (int x = 0; x < w; ++x)
      field.values[static_cast<size_t>(y) * w + x] = mask.at(y, x) ? std::sqrt(row_d[x]) : 0.0;
  }
  return field;
}

/// Uniform quantisation of a distance field into K ordinal strata:
/// z = min(K-1, floor(d / max_fg(d) * (K-1))), -1 on background.
/// Normalising by the per-image maximum makes the result scale invariant.
inline BinMap quantise(const DistanceField& field, const BinaryMask& mask, int K) {
  if (K < 2) throw ContractError("quantise: K must be at least 2");
  if (field.height != mask.height || field.width != mask.width)
    throw ShapeError("quantise: field and mask dimensions differ");
  double max_d = 0.0;
  int fg = 0;
  for (int i = 0; i < static_cast<int>(mask.bits.size()); ++i) {
    if (mask.bits[i]) {
      ++fg;
      max_d = std::max(max_d, field.values[i]);
    }
  }
  if (fg == 0) throw EmptyRegionError("quantise: mask has no foreground pixels");

  BinMap bm;
  bm.height = mask.height;
  bm.width = mask.width;
  bm.num_bins = K;
  bm.bins.assign(mask.bits.size(), -1);
  for (size_t i = 0; i < mask.bits.size(); ++i) {
    if (!mask.bits[i]) continue;
    int z = static_cast<int>(std::floor(field.values[i] / max_d * (K - 1)));
    bm.bins[i] = std::min(K - 1, z);
  }
  return bm;
}

/// Normalised histogram of foreground strata, length K.
inline std::vector<double> bin_histogram(const BinMap& bm) {
  std::vector<double> hist(static_cast<size_t>(bm.num_bins), 0.0);
  int fg = 0;
  for (int b : bm.bins) {
    if (b >= 0) {
      hist[static_cast<size_t>(b)] += 1.0;
      ++fg;
    }
  }
  if (fg == 0) throw EmptyRegionError("bin_histogram: map has no foreground pixels");
  for (auto& v : hist) v /= fg;
  return hist;
}

/// Block-average downsampling with threshold 0.5; exact ties go to foreground.
inline BinaryMask downsample_mask(const BinaryMask& mask, int h, int w) {
  if (h < 1 || w < 1 || h > mask.height || w > mask.width)
    throw ShapeError("downsample_mask: invalid target size");
  if (mask.height % h != 0 || mask.width % w != 0)
    throw ShapeError("downsample_mask: target size must divide mask size");
  int by = mask.height / h, bx = mask.width / w;
  int block = by * bx;
  BinaryMask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int cnt = 0;
      for (int yy = 0; yy < by; ++yy)
        for (int xx = 0; xx < bx; ++xx) cnt += mask.at(y * by + yy, x * bx + xx) ? 1 : 0;
      out.set(y, x, 2 * cnt >= block);
    }
  }
  return out;
}

}  // namespace geoproto
