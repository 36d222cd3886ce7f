#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "geoproto/geometry.hpp"
#include "geoproto/osb.hpp"
#include "geoproto/rng.hpp"
#include "geoproto/tensor.hpp"

namespace geoproto {

/// GxG partition of an hxw feature map into non-overlapping cells.
/// When G does not divide h or w the trailing cells absorb the remainder.
struct GridSpec {
  int G = 0;
  int height = 0;
  int width = 0;
  double tau_occ = 0.05;

  struct Rect {
    int y0, y1, x0, x1;  // half-open
    int area() const { return (y1 - y0) * (x1 - x0); }
  };

  static GridSpec make(int G, int height, int width, double tau_occ) {
    if (G < 1) throw ConfigError("grid: G must be at least 1");
    if (G > height || G > width)
      throw ConfigError("grid: G exceeds the feature map size " + std::to_string(height) + "x" +
                        std::to_string(width));
    if (tau_occ < 0.0 || tau_occ > 1.0) throw ConfigError("grid: tau_occ must lie in [0,1]");
    return GridSpec{G, height, width, tau_occ};
  }

  int cells() const { return G * G; }

  Rect cell_rect(int cell) const {
    int gy = cell / G, gx = cell % G;
    int by = height / G, bx = width / G;
    Rect r;
    r.y0 = gy * by;
    r.y1 = gy == G - 1 ? height : (gy + 1) * by;
    r.x0 = gx * bx;
    r.x1 = gx == G - 1 ? width : (gx + 1) * bx;
    return r;
  }
};

/// Two-layer MLP translating a normalised stratum level into a C-dim offset.
/// The output layer starts at exactly zero, so the offset vanishes at
/// initialisation and geometric influence accrues only as gradients grow W2.
/// The input layer starts at a regular scale (random bend positions over the
/// [0,1] input range): were both layers near zero, each layer's gradient
/// would be gated by the other's ~1e-4 magnitude and the module could not
/// leave the floor within a desk-scale episode budget. W2's gradient is
/// independent of W2 itself, so the zero start costs no learning speed.
struct GapeMlpParams {
  TensorPtr W1;  // [hidden, 1]
  TensorPtr b1;  // [hidden], absent in the bias-free variant
  TensorPtr W2;  // [channels, hidden]
  TensorPtr b2;  // [channels]
  int hidden = 0;
  int channels = 0;
  bool with_bias = true;

  static GapeMlpParams init(int channels, int hidden, std::uint64_t seed, bool with_bias = true,
                            std::string_view stream = "gape") {
    if (hidden < 1) throw ConfigError("gape: hidden width must be positive");
    auto rng = make_rng(seed, stream);
    std::uniform_real_distribution<double> spread(-2.0, 2.0);
    std::uniform_real_distribution<double> bend(-1.0, 1.0);
    GapeMlpParams p;
    p.hidden = hidden;
    p.channels = channels;
    p.with_bias = with_bias;
    p.W1 = tensor(Shape{hidden, 1}, 0.0, true);
    p.W2 = tensor(Shape{channels, hidden}, 0.0, true);
    for (auto& v : p.W1->values) v = spread(rng);
    if (with_bias) {
      p.b1 = tensor(Shape{hidden}, 0.0, true);
      p.b2 = tensor(Shape{channels}, 0.0, true);
      for (auto& v : p.b1->values) v = bend(rng);
    }
    return p;
  }

  void named_tensors(std::vector<std::pair<std::string, TensorPtr>>& out,
                     const std::string& prefix) const {
    out.emplace_back(prefix + ".W1", W1);
    out.emplace_back(prefix + ".W2", W2);
    if (with_bias) {
      out.emplace_back(prefix + ".b1", b1);
      out.emplace_back(prefix + ".b2", b2);
    }
  }
};

enum class FusionMode { kAdditive, kConcatProj, kScaleGate };

inline FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "additive") return FusionMode::kAdditive;
  if (s == "concat_proj") return FusionMode::kConcatProj;
  if (s == "scale_gate") return FusionMode::kScaleGate;
  throw ConfigError("unknown fusion mode: " + s);
}

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kAdditive: return "additive";
    case FusionMode::kConcatProj: return "concat_proj";
    default: return "scale_gate";
  }
}

/// 2C -> C projection used by the concat fusion mode, near-zero initialised
/// with an identity block on the prototype half so the mode starts as a
/// pass-through of the raw prototype.
struct FusionProj {
  TensorPtr W;  // [C, 2C]
  TensorPtr b;  // [C]
  int channels = 0;

  static FusionProj init(int channels, std::uint64_t seed) {
    auto rng = make_rng(seed, "fusion_proj");
    std::uniform_real_distribution<double> dist(-1e-4, 1e-4);
    FusionProj p;
    p.channels = channels;
    p.W = tensor(Shape{channels, 2 * channels}, 0.0, true);
    p.b = tensor(Shape{channels}, 0.0, true);
    for (auto& v : p.W->values) v = dist(rng);
    for (int c = 0; c < channels; ++c) p.W->values[c * 2 * channels + c] = 1.0;
    return p;
  }

  void named_tensors(std::vector<std::pair<std::string, TensorPtr>>& out) const {
    out.emplace_back("fusion_proj.W", W);
    out.emplace_back("fusion_proj.b", b);
  }
};

struct ProtoSlot {
  int cell = -1;
  TensorPtr vec;  // [C]
};

/// Active prototype slots of one support shot (or the union across shots).
struct PrototypeSet {
  std::vector<ProtoSlot> fg_raw;
  std::vector<ProtoSlot> fg_enriched;
  std::vector<TensorPtr> fg_meandist;  // scalar expected-bin per fg slot
  std::vector<ProtoSlot> bg;

  int n_fg() const { return static_cast<int>(fg_raw.size()); }

  const std::vector<ProtoSlot>& fg_active() const {
    return fg_enriched.empty() ? fg_raw : fg_enriched;
  }
};

/// Masked-average pooling per grid cell. A cell contributes a foreground
/// prototype when its mean foreground occupancy reaches tau_occ, and a
/// background prototype when its background occupancy does.
inline PrototypeSet pool_prototypes(Graph& g, TensorPtr feat, const BinaryMask& mask,
                                    const GridSpec& grid) {
  if (feat->shape.size() != 3) throw ShapeError("pool_prototypes: expected [C,h,w] features");
  if (feat->shape[1] != grid.height || feat->shape[2] != grid.width ||
      mask.height != grid.height || mask.width != grid.width)
    throw ShapeError("pool_prototypes: feature, mask and grid sizes disagree");

  PrototypeSet set;
  int w = grid.width;
  for (int cell = 0; cell < grid.cells(); ++cell) {
    auto r = grid.cell_rect(cell);
    int area = r.area();
    int fg_cnt = 0;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) fg_cnt += mask.at(y, x) ? 1 : 0;
    int bg_cnt = area - fg_cnt;

    if (fg_cnt > 0 && static_cast<double>(fg_cnt) / area >= grid.tau_occ) {
      std::vector<std::uint8_t> cellmask(static_cast<size_t>(grid.height) * w, 0);
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) cellmask[static_cast<size_t>(y) * w + x] = mask.at(y, x);
      set.fg_raw.push_back(ProtoSlot{cell, g.masked_mean(feat, cellmask)});
    }
    if (bg_cnt > 0 && static_cast<double>(bg_cnt) / area >= grid.tau_occ) {
      std::vector<std::uint8_t> cellmask(static_cast<size_t>(grid.height) * w, 0);
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) cellmask[static_cast<size_t>(y) * w + x] = !mask.at(y, x);
      set.bg.push_back(ProtoSlot{cell, g.masked_mean(feat, cellmask)});
    }
  }
  if (set.fg_raw.empty())
    throw DegenerateSupportError("pool_prototypes: no cell meets the foreground occupancy threshold");
  return set;
}

/// Expected ordinal stratum of one cell under the predicted bin distribution,
/// averaged over every pixel of the cell. The masked variant averages over
/// the cell's foreground pixels instead.
inline TensorPtr expected_bin(Graph& g, TensorPtr probs, const GridSpec::Rect& rect,
                              const BinaryMask* fg_mask = nullptr) {
  if (probs->shape.size() != 3) throw ShapeError("expected_bin: expected [K,h,w] probabilities");
  int K = probs->shape[0], h = probs->shape[1], w = probs->shape[2];
  int count = 0;
  if (fg_mask) {
    for (int y = rect.y0; y < rect.y1; ++y)
      for (int x = rect.x0; x < rect.x1; ++x) count += fg_mask->at(y, x) ? 1 : 0;
    if (count == 0) throw EmptyRegionError("expected_bin: masked cell has no foreground pixels");
  } else {
    count = rect.area();
  }
  std::vector<double> weights(static_cast<size_t>(K) * h * w, 0.0);
  for (int y = rect.y0; y < rect.y1; ++y) {
    for (int x = rect.x0; x < rect.x1; ++x) {
      if (fg_mask && !fg_mask->at(y, x)) continue;
      for (int k = 0; k < K; ++k)
        weights[(static_cast<size_t>(k) * h + y) * w + x] = static_cast<double>(k) / count;
    }
  }
  return g.weighted_sum(probs, std::move(weights));
}

namespace detail {
inline TensorPtr mlp_forward(Graph& g, TensorPtr scalar_in, const GapeMlpParams& mlp) {
  TensorPtr hidden = g.relu(g.linear(mlp.W1, scalar_in, mlp.with_bias ? mlp.b1 : nullptr));
  return g.linear(mlp.W2, hidden, mlp.with_bias ? mlp.b2 : nullptr);
}
}  // namespace detail

/// e = W2 relu(W1 * d_bar/(K-1)); the scalar is normalised to [0,1] first.
inline TensorPtr geometric_embedding(Graph& g, TensorPtr d_bar, int K, const GapeMlpParams& mlp) {
  if (K < 2) throw ContractError("geometric_embedding: K must be at least 2");
  return detail::mlp_forward(g, g.scale(d_bar, 1.0 / (K - 1)), mlp);
}

inline TensorPtr fuse(Graph& g, TensorPtr proto, TensorPtr e, FusionMode mode,
                      const FusionProj* proj = nullptr) {
  switch (mode) {
    case FusionMode::kAdditive:
      return g.add(proto, e);
    case FusionMode::kConcatProj:
      if (!proj) throw ConfigError("fuse: concat_proj mode requires projection parameters");
      return g.linear(proj->W, g.concat(proto, e), proj->b);
    case FusionMode::kScaleGate:
      return g.mul(proto, g.offset(g.softplus(e), 1.0));
  }
  throw ConfigError("fuse: unknown mode");
}

/// Populates the enriched foreground slots; background slots pass through.
inline void enrich(Graph& g, PrototypeSet& set, const BinPrediction& binpred, const GridSpec& grid,
                   const GapeMlpParams& mlp, FusionMode mode, const FusionProj* proj = nullptr,
                   const BinaryMask* masked_expectation = nullptr) {
  if (set.fg_raw.empty()) throw ContractError("enrich: prototype set has no raw fg slots");
  set.fg_enriched.clear();
  set.fg_meandist.clear();
  for (const auto& slot : set.fg_raw) {
    auto rect = grid.cell_rect(slot.cell);
    TensorPtr d_bar = expected_bin(g, binpred.probs, rect, masked_expectation);
    TensorPtr e = geometric_embedding(g, d_bar, binpred.num_bins, mlp);
    set.fg_meandist.push_back(d_bar);
    set.fg_enriched.push_back(ProtoSlot{slot.cell, fuse(g, slot.vec, e, mode, proj)});
  }
}

/// Analysis variant: offsets background prototypes by an MLP of the cell-mean
/// distance to the nearest foreground pixel (EDT of the complement mask,
/// normalised by its per-image maximum, averaged over the cell's background
/// pixels). Additive only; disabled by default.
inline void enrich_background(Graph& g, PrototypeSet& set, const BinaryMask& mask,
                              const GridSpec& grid, const GapeMlpParams& bg_mlp) {
  if (set.bg.empty()) return;
  BinaryMask comp = mask.complement();
  DistanceField dist = edt(comp);  // throws NoBackgroundError when mask has no foreground
  double max_d = 0.0;
  for (double v : dist.values) max_d = std::max(max_d, v);
  if (max_d <= 0.0) return;  // no background pixels at all

  for (auto& slot : set.bg) {
    auto r = grid.cell_rect(slot.cell);
    double acc = 0.0;
    int n = 0;
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        if (!mask.at(y, x)) {
          acc += dist.at(y, x) / max_d;
          ++n;
        }
      }
    }
    TensorPtr cue = scalar_tensor(n > 0 ? acc / n : 0.0);
    slot.vec = g.add(slot.vec, detail::mlp_forward(g, cue, bg_mlp));
  }
}

}  // namespace geoproto
