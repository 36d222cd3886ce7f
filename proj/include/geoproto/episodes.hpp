#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "geoproto/gape.hpp"
#include "geoproto/geometry.hpp"
#include "geoproto/rng.hpp"
#include "geoproto/tensor.hpp"

namespace geoproto {

enum class ShapeKind { kCompactEllipse, kAnnulus, kIrregularBlob };

inline ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "ellipse") return ShapeKind::kCompactEllipse;
  if (s == "annulus") return ShapeKind::kAnnulus;
  if (s == "blob") return ShapeKind::kIrregularBlob;
  throw ConfigError("unknown shape family: " + s);
}

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::kCompactEllipse: return "ellipse";
    case ShapeKind::kAnnulus: return "annulus";
    default: return "blob";
  }
}

/// One synthetic organ class: masks share a morphology, sizes and
/// deformations vary per sample. Generated masks always keep a background
/// margin on every image side and at least 16 foreground pixels.
///
/// The three presets span the morphology spectrum: near-circular compact
/// shapes, thin walls with one thicker lobe (variable wall thickness, as in
/// myocardium rings), and elongated irregular blobs.
struct ShapeFamily {
  ShapeKind kind = ShapeKind::kCompactEllipse;
  double radius_lo = 9.0, radius_hi = 15.0;       // base radius, pixels
  double ecc_lo = 0.0, ecc_hi = 0.25;             // ellipse axis imbalance
  double thickness_lo = 2.0, thickness_hi = 2.4;  // annulus base wall width
  double lobe_lo = 3.0, lobe_hi = 3.5;            // annulus extra lobe depth
  double irregularity_lo = 0.10, irregularity_hi = 0.25;  // blob harmonics
  double stretch_lo = 1.4, stretch_hi = 1.8;      // blob elongation

  static ShapeFamily preset(ShapeKind kind) {
    ShapeFamily f;
    f.kind = kind;
    switch (kind) {
      case ShapeKind::kCompactEllipse:
        f.radius_lo = 9.0;
        f.radius_hi = 14.0;
        break;
      case ShapeKind::kAnnulus:
        f.radius_lo = 12.0;
        f.radius_hi = 19.0;
        break;
      case ShapeKind::kIrregularBlob:
        f.radius_lo = 7.0;
        f.radius_hi = 10.0;
        break;
    }
    return f;
  }
};

/// Appearance model of one imaging domain. Transforms act on intensities
/// only; masks never change across domains.
struct DomainSpec {
  std::string id;
  double fg_mean = 0.7, fg_std = 0.05;
  double bg_mean = 0.3, bg_std = 0.05;
  double noise_amp = 0.08;
  int noise_corr = 2;   // box blur radius of the texture noise
  double gamma = 1.0;   // monotone remap exponent on [0,1]
  bool invert = false;  // contrast inversion

  static DomainSpec preset(const std::string& name) {
    DomainSpec d;
    d.id = name;
    if (name == "source") {
      return d;
    }
    if (name == "target") {
      d.fg_mean = 0.62;
      d.fg_std = 0.07;
      d.bg_mean = 0.40;
      d.bg_std = 0.07;
      d.noise_amp = 0.16;
      d.noise_corr = 4;
      d.gamma = 0.8;
      d.invert = true;
      return d;
    }
    throw ConfigError("unknown domain preset: " + name);
  }
};

struct Episode {
  std::vector<std::pair<TensorPtr, BinaryMask>> support;
  std::pair<TensorPtr, BinaryMask> query;
  std::string family;
  std::string domain;
  std::uint64_t seed = 0;
};

namespace detail {

inline int count_components(const BinaryMask& m, bool value) {
  std::vector<std::uint8_t> seen(m.bits.size(), 0);
  std::vector<int> stack;
  int comps = 0;
  for (int start = 0; start < static_cast<int>(m.bits.size()); ++start) {
    if (seen[start] || (m.bits[start] != 0) != value) continue;
    ++comps;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      int i = stack.back();
      stack.pop_back();
      int y = i / m.width, x = i % m.width;
      const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
      for (int d = 0; d < 4; ++d) {
        int ny = y + dy[d], nx = x + dx[d];
        if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
        int ni = ny * m.width + nx;
        if (!seen[ni] && (m.bits[ni] != 0) == value) {
          seen[ni] = 1;
          stack.push_back(ni);
        }
      }
    }
  }
  return comps;
}

inline bool has_margin(const BinaryMask& m) {
  for (int x = 0; x < m.width; ++x)
    if (m.at(0, x) || m.at(m.height - 1, x)) return false;
  for (int y = 0; y < m.height; ++y)
    if (m.at(y, 0) || m.at(y, m.width - 1)) return false;
  return true;
}

}  // namespace detail

/// Draws one mask from the family. Ellipses and blobs are 4-connected,
/// annuli enclose exactly one hole. Throws GenerationError after 100
/// consecutive rejected candidates.
inline BinaryMask sample_shape(const ShapeFamily& family, int height, int width,
                               std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](double lo, double hi) { return lo + unit(rng) * (hi - lo); };

  for (int attempt = 0; attempt < 100; ++attempt) {
    double r = draw(family.radius_lo, family.radius_hi);

    // per-pixel membership test and the shape's maximal extent
    std::function<bool(double, double)> inside;
    double extent = r;
    bool want_hole = false;
    switch (family.kind) {
      case ShapeKind::kCompactEllipse: {
        double ecc = draw(family.ecc_lo, family.ecc_hi);
        double theta = unit(rng) * M_PI;
        double a = r * (1.0 + ecc), b = r * (1.0 - ecc);
        double ct = std::cos(theta), st = std::sin(theta);
        extent = a;
        inside = [=](double dy, double dx) {
          double u = dx * ct + dy * st, v = -dx * st + dy * ct;
          return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
        };
        break;
      }
      case ShapeKind::kAnnulus: {
        // thin wall with one thicker lobe; the lobe sets the interior depth
        double t = draw(family.thickness_lo, family.thickness_hi);
        double lobe = draw(family.lobe_lo, family.lobe_hi);
        double phi = unit(rng) * 2.0 * M_PI;
        if (r - (t + lobe) < 1.5) continue;  // hole must survive rasterisation
        want_hole = true;
        inside = [=](double dy, double dx) {
          double d = std::sqrt(dx * dx + dy * dy);
          double theta = std::atan2(dy, dx);
          double c = std::max(0.0, std::cos(theta - phi));
          double c2 = c * c;
          double wall = t + lobe * c2 * c2 * c2;
          return d <= r && d >= r - wall;
        };
        break;
      }
      case ShapeKind::kIrregularBlob: {
        double amp = draw(family.irregularity_lo, family.irregularity_hi);
        double stretch = draw(family.stretch_lo, family.stretch_hi);
        double rot = unit(rng) * M_PI;
        auto coeff = std::make_shared<std::array<double, 4>>();
        auto phase = std::make_shared<std::array<double, 4>>();
        for (int j = 0; j < 4; ++j) {
          (*coeff)[static_cast<size_t>(j)] = amp * (2.0 * unit(rng) - 1.0) / (j + 2);
          (*phase)[static_cast<size_t>(j)] = unit(rng) * 2.0 * M_PI;
        }
        double ct = std::cos(rot), st = std::sin(rot);
        extent = r * stretch * (1.0 + amp);
        inside = [=](double dy, double dx) {
          double u = (dx * ct + dy * st) / stretch, v = -dx * st + dy * ct;
          double d = std::sqrt(u * u + v * v);
          double theta = std::atan2(v, u);
          double rad = 1.0;
          for (int j = 0; j < 4; ++j)
            rad += (*coeff)[static_cast<size_t>(j)] * std::cos((j + 2) * theta + (*phase)[static_cast<size_t>(j)]);
          return d <= r * rad;
        };
        break;
      }
    }

    double margin = extent + 2.0;
    double cy_lo = margin, cy_hi = height - 1 - margin;
    double cx_lo = margin, cx_hi = width - 1 - margin;
    if (cy_hi < cy_lo || cx_hi < cx_lo) continue;
    double cy = cy_lo + unit(rng) * (cy_hi - cy_lo);
    double cx = cx_lo + unit(rng) * (cx_hi - cx_lo);

    BinaryMask mask(height, width);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (inside(y - cy, x - cx)) mask.set(y, x, true);

    if (mask.count() < 16) continue;
    if (!detail::has_margin(mask)) continue;
    if (detail::count_components(mask, true) != 1) continue;
    int bg_comps = detail::count_components(mask, false);
    if (want_hole ? bg_comps != 2 : bg_comps != 1) continue;
    return mask;
  }
  throw GenerationError("sample_shape: rejected 100 consecutive candidates");
}

/// Renders a mask into a grayscale image: per-image region intensities,
/// correlated texture noise, gamma remap, optional inversion, clip to [0,1].
inline TensorPtr render(const BinaryMask& mask, const DomainSpec& domain, std::mt19937_64& rng) {
  int h = mask.height, w = mask.width;
  std::normal_distribution<double> n01(0.0, 1.0);
  double fg_level = domain.fg_mean + domain.fg_std * n01(rng);
  double bg_level = domain.bg_mean + domain.bg_std * n01(rng);

  // correlated noise: box-blurred white noise rescaled to unit deviation
  std::vector<double> noise(static_cast<size_t>(h) * w, 0.0);
  if (domain.noise_amp > 0.0) {
    std::vector<double> white(static_cast<size_t>(h) * w);
    for (auto& v : white) v = n01(rng);
    int rad = std::max(0, domain.noise_corr);
    std::vector<double> tmp(white.size(), 0.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int dx = -rad; dx <= rad; ++dx) {
          int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          acc += white[static_cast<size_t>(y) * w + xx];
          ++cnt;
        }
        tmp[static_cast<size_t>(y) * w + x] = acc / cnt;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int dy = -rad; dy <= rad; ++dy) {
          int yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          acc += tmp[static_cast<size_t>(yy) * w + x];
          ++cnt;
        }
        noise[static_cast<size_t>(y) * w + x] = acc / cnt;
      }
    }
    double blur_std = 1.0 / (2.0 * rad + 1.0);  // std of a separable box mean of N(0,1)
    for (auto& v : noise) v *= domain.noise_amp / blur_std;
  } else {
    // keep the draw count independent of the amplitude so that domains with
    // shared seeds stay pixel-aligned
    for (size_t i = 0; i < noise.size(); ++i) n01(rng);
  }

  auto out = tensor(Shape{1, h, w});
  for (int i = 0; i < h * w; ++i) {
    double v = (mask.bits[static_cast<size_t>(i)] ? fg_level : bg_level) + noise[static_cast<size_t>(i)];
    v = std::min(1.0, std::max(0.0, v));
    v = std::pow(v, domain.gamma);
    if (domain.invert) v = 1.0 - v;
    out->values[static_cast<size_t>(i)] = std::min(1.0, std::max(0.0, v));
  }
  return out;
}

enum class Split { kTrain, kEval };

/// Episode source. Fully deterministic: the episode stream is a pure
/// function of the sampler configuration and the seed handed to sample().
struct EpisodeSampler {
  std::vector<ShapeFamily> train_families = {ShapeFamily::preset(ShapeKind::kCompactEllipse),
                                             ShapeFamily::preset(ShapeKind::kAnnulus),
                                             ShapeFamily::preset(ShapeKind::kIrregularBlob)};
  std::vector<ShapeFamily> eval_families = train_families;
  DomainSpec source_domain = DomainSpec::preset("source");
  DomainSpec target_domain = DomainSpec::preset("target");
  int image_size = 64;
  int shots = 1;
  int feature_stride = 4;
  int grid = 8;
  double tau_occ = 0.05;

  /// Train episodes render support and query in the source domain; eval
  /// episodes render both in the target domain. Degenerate supports are
  /// resampled internally up to 20 times.
  Episode sample(Split split, std::uint64_t seed) const {
    const auto& families = split == Split::kTrain ? train_families : eval_families;
    if (families.empty()) throw ConfigError("episode sampler: family list is empty");
    const DomainSpec& domain = split == Split::kTrain ? source_domain : target_domain;

    for (int attempt = 0; attempt < 20; ++attempt) {
      auto pick_rng = make_rng(seed, "family", attempt);
      const ShapeFamily& family = families[pick_rng() % families.size()];

      Episode ep;
      ep.family = to_string(family.kind);
      ep.domain = domain.id;
      ep.seed = seed;

      bool degenerate = false;
      for (int s = 0; s < shots && !degenerate; ++s) {
        auto shape_rng = make_rng(seed, "support_shape", attempt * 64 + s);
        BinaryMask mask = sample_shape(family, image_size, image_size, shape_rng);
        if (!support_usable(mask)) {
          degenerate = true;
          break;
        }
        auto render_rng = make_rng(seed ^ hash_domain(domain), "support_render", attempt * 64 + s);
        ep.support.emplace_back(render(mask, domain, render_rng), std::move(mask));
      }
      if (degenerate) continue;

      auto qshape_rng = make_rng(seed, "query_shape", attempt);
      BinaryMask qmask = sample_shape(family, image_size, image_size, qshape_rng);
      auto qrender_rng = make_rng(seed ^ hash_domain(domain), "query_render", attempt);
      ep.query = {render(qmask, domain, qrender_rng), std::move(qmask)};
      return ep;
    }
    throw GenerationError("episode sampler: resample budget exhausted for seed " +
                          std::to_string(seed));
  }

  /// The shape stream ignores the domain, so masks are identical across
  /// domains for a fixed seed; only rendering draws depend on the domain id.
  static std::uint64_t hash_domain(const DomainSpec& d) {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (char c : d.id) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    return h;
  }

  int feature_size() const { return image_size / feature_stride; }

  /// True when the downsampled mask activates at least one foreground cell
  /// and one background cell of the pooling grid.
  bool support_usable(const BinaryMask& mask) const {
    BinaryMask small = downsample_mask(mask, feature_size(), feature_size());
    GridSpec gs = GridSpec::make(grid, small.height, small.width, tau_occ);
    bool any_fg = false, any_bg = false;
    for (int cell = 0; cell < gs.cells(); ++cell) {
      auto r = gs.cell_rect(cell);
      int fg = 0;
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) fg += small.at(y, x) ? 1 : 0;
      int area = r.area();
      if (fg > 0 && static_cast<double>(fg) / area >= tau_occ) any_fg = true;
      if (area - fg > 0 && static_cast<double>(area - fg) / area >= tau_occ) any_bg = true;
      if (any_fg && any_bg) return true;
    }
    return false;
  }
};

}  // namespace geoproto
