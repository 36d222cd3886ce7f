#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "geoproto/gape.hpp"
#include "geoproto/geometry.hpp"
#include "geoproto/tensor.hpp"

namespace geoproto {

/// Foreground/background score maps and the hard decision.
/// The predicted mask is foreground where S_fg strictly exceeds S_bg;
/// exact ties resolve to background.
struct ScoreMaps {
  TensorPtr s_fg;  // [h,w]
  TensorPtr s_bg;  // [h,w]
  BinaryMask pred;
};

struct LossBundle {
  TensorPtr l_seg;
  TensorPtr l_align;
  TensorPtr l_osb;
  TensorPtr total;
  double lambda_geo = 0.0;
};

/// Softmax-weighted cosine similarity of each feature pixel against a set of
/// prototypes: S(x) = sum_i w_i(x) cos(F(x), p_i) with w = softmax over the
/// per-pixel cosines. Optional per-prototype-per-pixel gate factors multiply
/// the cosines inside the softmax only (the query re-weighting variant);
/// gates are fixed coefficients, not differentiated.
inline TensorPtr score(Graph& g, TensorPtr feat, const std::vector<TensorPtr>& protos,
                       double eps = 1e-8, const std::vector<double>* gates = nullptr) {
  if (protos.empty()) throw ContractError("score: prototype list is empty");
  if (feat->shape.size() != 3) throw ShapeError("score: expected [C,h,w] features");
  const int c = feat->shape[0], h = feat->shape[1], w = feat->shape[2];
  const int plane = h * w;
  const int n = static_cast<int>(protos.size());
  for (const auto& p : protos)
    if (p->shape.size() != 1 || p->shape[0] != c)
      throw ShapeError("score: prototype dimension mismatch");
  if (gates && static_cast<int>(gates->size()) != n * plane)
    throw ShapeError("score: gate table size mismatch");

  // cached per-pixel cosines and attention weights, shared with backward
  auto cos = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * plane);
  auto att = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * plane);
  auto fnorm = std::make_shared<std::vector<double>>(static_cast<size_t>(plane));
  std::vector<double> pnorm(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch) acc += protos[i]->values[ch] * protos[i]->values[ch];
    pnorm[i] = std::max(std::sqrt(acc), eps);
  }

  auto out = tensor(Shape{h, w});
  for (int px = 0; px < plane; ++px) {
    double facc = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      double v = feat->values[ch * plane + px];
      facc += v * v;
    }
    double nf = std::max(std::sqrt(facc), eps);
    (*fnorm)[px] = nf;
    double m = -1e300;
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int ch = 0; ch < c; ++ch) dot += feat->values[ch * plane + px] * protos[i]->values[ch];
      double cv = dot / (nf * pnorm[i]);
      (*cos)[static_cast<size_t>(i) * plane + px] = cv;
      double a = gates ? cv * (*gates)[static_cast<size_t>(i) * plane + px] : cv;
      (*att)[static_cast<size_t>(i) * plane + px] = a;
      m = std::max(m, a);
    }
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      double e = std::exp((*att)[static_cast<size_t>(i) * plane + px] - m);
      (*att)[static_cast<size_t>(i) * plane + px] = e;
      z += e;
    }
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      double wgt = (*att)[static_cast<size_t>(i) * plane + px] / z;
      (*att)[static_cast<size_t>(i) * plane + px] = wgt;
      s += wgt * (*cos)[static_cast<size_t>(i) * plane + px];
    }
    out->values[px] = s;
  }

  bool tracked = g.recording() && (feat->requires_grad || [&] {
                   for (const auto& p : protos)
                     if (p->requires_grad) return true;
                   return false;
                 }());
  if (tracked) {
    out->requires_grad = true;
    auto protos_copy = std::make_shared<std::vector<TensorPtr>>(protos);
    std::shared_ptr<std::vector<double>> gates_copy;
    if (gates) gates_copy = std::make_shared<std::vector<double>>(*gates);
    auto pn = std::make_shared<std::vector<double>>(std::move(pnorm));
    double eps_c = eps;
    g.record("score", [feat, protos_copy, gates_copy, cos, att, fnorm, pn, out, c, plane, n, eps_c] {
      if (out->grad.empty()) return;
      std::vector<std::uint8_t> p_clamped(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        const auto& p = (*protos_copy)[i];
        double pacc = 0.0;
        for (int ch = 0; ch < c; ++ch) pacc += p->values[ch] * p->values[ch];
        p_clamped[static_cast<size_t>(i)] = std::sqrt(pacc) < eps_c ? 1 : 0;
      }
      for (int px = 0; px < plane; ++px) {
        double go = out->grad[px];
        if (go == 0.0) continue;
        double s = out->values[px];
        double nf = (*fnorm)[px];
        bool f_clamped = false;
        {
          double facc = 0.0;
          for (int ch = 0; ch < c; ++ch) {
            double v = feat->values[ch * plane + px];
            facc += v * v;
          }
          f_clamped = std::sqrt(facc) < eps_c;
        }
        for (int i = 0; i < n; ++i) {
          double wgt = (*att)[static_cast<size_t>(i) * plane + px];
          double cv = (*cos)[static_cast<size_t>(i) * plane + px];
          double gate = gates_copy ? (*gates_copy)[static_cast<size_t>(i) * plane + px] : 1.0;
          // dS/dcos_i through both the value and the attention weights
          double dcos = go * wgt * (1.0 + gate * (cv - s));
          if (dcos == 0.0) continue;
          const auto& p = (*protos_copy)[i];
          double np = (*pn)[i];
          double inv = 1.0 / (nf * np);
          for (int ch = 0; ch < c; ++ch) {
            double fv = feat->values[ch * plane + px];
            double pv = p->values[ch];
            double df = pv * inv - (f_clamped ? 0.0 : cv * fv / (nf * nf));
            double dp = fv * inv - (p_clamped[static_cast<size_t>(i)] ? 0.0 : cv * pv / (np * np));
            detail::accumulate(feat, ch * plane + px, dcos * df);
            detail::accumulate(p, ch, dcos * dp);
          }
        }
      }
    });
  }
  return out;
}

namespace detail {
inline std::vector<TensorPtr> slot_vectors(const std::vector<ProtoSlot>& slots) {
  std::vector<TensorPtr> out;
  out.reserve(slots.size());
  for (const auto& s : slots) out.push_back(s.vec);
  return out;
}

inline BinaryMask decide(const TensorPtr& s_fg, const TensorPtr& s_bg) {
  int h = s_fg->shape[0], w = s_fg->shape[1];
  BinaryMask pred(h, w);
  for (int i = 0; i < h * w; ++i)
    pred.bits[static_cast<size_t>(i)] = s_fg->values[i] > s_bg->values[i] ? 1 : 0;
  return pred;
}
}  // namespace detail

/// Score the query against enriched foreground and plain background
/// prototypes, then threshold.
inline ScoreMaps classify(Graph& g, TensorPtr feat_q, const PrototypeSet& set, double eps = 1e-8) {
  if (set.fg_active().empty()) throw DegenerateSupportError("classify: no foreground prototypes");
  if (set.bg.empty()) throw DegenerateSupportError("classify: no background prototypes");
  ScoreMaps maps;
  maps.s_fg = score(g, feat_q, detail::slot_vectors(set.fg_active()), eps);
  maps.s_bg = score(g, feat_q, detail::slot_vectors(set.bg), eps);
  maps.pred = detail::decide(maps.s_fg, maps.s_bg);
  return maps;
}

/// Differentiable segmentation objective: pixel-average cross-entropy of the
/// binary softmax over (alpha*S_bg, alpha*S_fg) against the reference mask.
/// The hard argmax mask is reserved for evaluation.
inline TensorPtr seg_loss(Graph& g, const ScoreMaps& maps, const BinaryMask& gt, double alpha) {
  TensorPtr s_fg = maps.s_fg, s_bg = maps.s_bg;
  if (s_fg->shape != s_bg->shape) throw ShapeError("seg_loss: score map shapes differ");
  if (s_fg->shape.size() != 2 || gt.height != s_fg->shape[0] || gt.width != s_fg->shape[1])
    throw ShapeError("seg_loss: mask and score map shapes differ");
  int plane = gt.height * gt.width;

  auto softplus = [](double t) {
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
  };
  double loss = 0.0;
  for (int i = 0; i < plane; ++i) {
    double margin = gt.bits[static_cast<size_t>(i)]
                        ? alpha * (s_bg->values[i] - s_fg->values[i])
                        : alpha * (s_fg->values[i] - s_bg->values[i]);
    loss += softplus(margin);
  }
  loss /= plane;

  auto out = scalar_tensor(loss);
  if (g.track({s_fg, s_bg})) {
    out->requires_grad = true;
    auto bits = std::make_shared<std::vector<std::uint8_t>>(gt.bits);
    g.record("seg_loss", [s_fg, s_bg, out, bits, plane, alpha] {
      if (out->grad.empty()) return;
      double go = out->grad[0] / plane;
      for (int i = 0; i < plane; ++i) {
        bool fg = (*bits)[static_cast<size_t>(i)] != 0;
        double margin = fg ? alpha * (s_bg->values[i] - s_fg->values[i])
                           : alpha * (s_fg->values[i] - s_bg->values[i]);
        double sig = 1.0 / (1.0 + std::exp(-margin));
        double d = go * alpha * sig;
        detail::accumulate(s_fg, i, fg ? -d : d);
        detail::accumulate(s_bg, i, fg ? d : -d);
      }
    });
  }
  return out;
}

/// Bidirectional alignment term: raw (non-enriched) prototypes pooled from
/// the query under its hard predicted mask segment the support image back.
/// Degenerate predictions (no usable fg or bg cell) contribute zero.
inline TensorPtr align_loss(Graph& g, TensorPtr feat_s, const BinaryMask& mask_s, TensorPtr feat_q,
                            const BinaryMask& pred_q, const GridSpec& grid, double alpha,
                            double eps = 1e-8) {
  try {
    PrototypeSet qset = pool_prototypes(g, feat_q, pred_q, grid);
    if (qset.bg.empty()) return scalar_tensor(0.0);
    ScoreMaps maps;
    maps.s_fg = score(g, feat_s, detail::slot_vectors(qset.fg_raw), eps);
    maps.s_bg = score(g, feat_s, detail::slot_vectors(qset.bg), eps);
    maps.pred = detail::decide(maps.s_fg, maps.s_bg);
    return seg_loss(g, maps, mask_s, alpha);
  } catch (const DegenerateSupportError&) {
    return scalar_tensor(0.0);
  }
}

/// L = L_seg + L_align + lambda_geo * L_OSB.
inline LossBundle total_loss(Graph& g, TensorPtr l_seg, TensorPtr l_align, TensorPtr l_osb,
                             double lambda_geo) {
  if (lambda_geo < 0.0) throw ContractError("total_loss: lambda_geo must be nonnegative");
  LossBundle bundle;
  bundle.l_seg = l_seg;
  bundle.l_align = l_align;
  bundle.l_osb = l_osb;
  bundle.lambda_geo = lambda_geo;
  bundle.total = g.add(g.add(l_seg, l_align), g.scale(l_osb, lambda_geo));
  return bundle;
}

/// Query-side geometric re-weighting (analysis variant, off by default):
/// each foreground prototype's cosine is multiplied, inside the softmax,
/// by exp(-|g_hat(x) - d_bar_i/(K-1)| / tau). Background scoring unchanged.
inline ScoreMaps query_reweight(Graph& g, TensorPtr feat_q, const PrototypeSet& set,
                                const BinPrediction& binpred_q, double tau_gate,
                                double eps = 1e-8) {
  if (tau_gate <= 0.0) throw ConfigError("query_reweight: tau_gate must be positive");
  if (set.fg_active().empty()) throw DegenerateSupportError("query_reweight: no foreground prototypes");
  if (set.bg.empty()) throw DegenerateSupportError("query_reweight: no background prototypes");
  if (set.fg_meandist.size() != set.fg_active().size())
    throw ContractError("query_reweight: prototype set lacks expected-bin metadata");

  int K = binpred_q.num_bins, plane = binpred_q.height * binpred_q.width;
  // per-pixel normalised expected bin of the query prediction
  std::vector<double> g_hat(static_cast<size_t>(plane), 0.0);
  for (int i = 0; i < plane; ++i) {
    double acc = 0.0;
    for (int k = 0; k < K; ++k) acc += k * binpred_q.probs->values[k * plane + i];
    g_hat[static_cast<size_t>(i)] = acc / (K - 1);
  }

  int n = static_cast<int>(set.fg_active().size());
  std::vector<double> gates(static_cast<size_t>(n) * plane);
  for (int i = 0; i < n; ++i) {
    double level = set.fg_meandist[static_cast<size_t>(i)]->scalar() / (K - 1);
    for (int px = 0; px < plane; ++px)
      gates[static_cast<size_t>(i) * plane + px] =
          std::exp(-std::abs(g_hat[static_cast<size_t>(px)] - level) / tau_gate);
  }

  ScoreMaps maps;
  maps.s_fg = score(g, feat_q, detail::slot_vectors(set.fg_active()), eps, &gates);
  maps.s_bg = score(g, feat_q, detail::slot_vectors(set.bg), eps);
  maps.pred = detail::decide(maps.s_fg, maps.s_bg);
  return maps;
}

}  // namespace geoproto
