#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "geoproto/encoder.hpp"
#include "geoproto/geometry.hpp"
#include "geoproto/tensor.hpp"

namespace geoproto {

/// Decoder from C-channel features to K per-pixel bin logits:
/// two 3x3 conv+ReLU stages at constant width, then a 1x1 projection.
struct OsbParams {
  ConvLayer c1, c2, c3;
  int num_bins = 0;

  static OsbParams init(int channels, int K, std::uint64_t seed) {
    if (K < 2) throw ConfigError("osb: K must be at least 2");
    auto rng = make_rng(seed, "osb");
    OsbParams p;
    p.num_bins = K;
    p.c1 = make_conv_layer(channels, channels, 3, 1, 1, rng);
    p.c2 = make_conv_layer(channels, channels, 3, 1, 1, rng);
    p.c3 = make_conv_layer(channels, K, 1, 1, 0, rng);
    return p;
  }

  void named_tensors(std::vector<std::pair<std::string, TensorPtr>>& out) const {
    out.emplace_back("osb.conv1.kernel", c1.kernel);
    out.emplace_back("osb.conv1.bias", c1.bias);
    out.emplace_back("osb.conv2.kernel", c2.kernel);
    out.emplace_back("osb.conv2.bias", c2.bias);
    out.emplace_back("osb.conv3.kernel", c3.kernel);
    out.emplace_back("osb.conv3.bias", c3.bias);
  }
};

/// Per-pixel bin logits, softmax probabilities and the hard argmax map.
/// Ties in the argmax resolve to the lowest bin index.
struct BinPrediction {
  TensorPtr logits;       // [K,h,w]
  TensorPtr probs;        // [K,h,w]
  std::vector<int> hard;  // h*w entries in {0..K-1}
  int num_bins = 0;
  int height = 0;
  int width = 0;
};

inline BinPrediction predict_bins(Graph& g, TensorPtr feat, const OsbParams& params) {
  TensorPtr x = g.relu(g.bias_add(g.conv2d(feat, params.c1.kernel, 1, 1), params.c1.bias));
  x = g.relu(g.bias_add(g.conv2d(x, params.c2.kernel, 1, 1), params.c2.bias));
  TensorPtr logits = g.bias_add(g.conv2d(x, params.c3.kernel, 1, 0), params.c3.bias);

  BinPrediction pred;
  pred.logits = logits;
  pred.probs = g.softmax(logits, 0);
  pred.num_bins = params.num_bins;
  pred.height = logits->shape[1];
  pred.width = logits->shape[2];
  int plane = pred.height * pred.width;
  pred.hard.assign(static_cast<size_t>(plane), 0);
  for (int i = 0; i < plane; ++i) {
    int best = 0;
    double bv = logits->values[i];
    for (int k = 1; k < pred.num_bins; ++k) {
      double v = logits->values[k * plane + i];
      if (v > bv) {
        bv = v;
        best = k;
      }
    }
    pred.hard[i] = best;
  }
  return pred;
}

namespace detail {
inline void check_pred_gt(const BinPrediction& pred, const BinMap& gt, const char* op) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ShapeError(std::string(op) + ": prediction and bin map sizes differ");
  if (pred.num_bins != gt.num_bins)
    throw ShapeError(std::string(op) + ": bin count mismatch");
}
}  // namespace detail

/// Cross-entropy over foreground pixels with the 1/(2|fg|) normalisation.
/// Computed from logits via log-sum-exp; gradient is beta*(softmax - onehot).
inline TensorPtr loss_cls(Graph& g, const BinPrediction& pred, const BinMap& gt) {
  detail::check_pred_gt(pred, gt, "loss_cls");
  int fg = gt.foreground_count();
  if (fg == 0) throw EmptyRegionError("loss_cls: bin map has no foreground pixels");
  double beta = 1.0 / (2.0 * fg);

  TensorPtr logits = pred.logits;
  int K = pred.num_bins, plane = pred.height * pred.width;
  double loss = 0.0;
  for (int i = 0; i < plane; ++i) {
    int z = gt.bins[i];
    if (z < 0) continue;
    double m = logits->values[i];
    for (int k = 1; k < K; ++k) m = std::max(m, logits->values[k * plane + i]);
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(logits->values[k * plane + i] - m);
    double lse = m + std::log(sum);
    loss -= beta * (logits->values[z * plane + i] - lse);
  }
  auto out = scalar_tensor(loss);
  if (g.track({logits})) {
    out->requires_grad = true;
    auto bins = std::make_shared<std::vector<int>>(gt.bins);
    g.record("loss_cls", [logits, out, bins, K, plane, beta] {
      if (out->grad.empty()) return;
      double go = out->grad[0];
      logits->ensure_grad();
      for (int i = 0; i < plane; ++i) {
        int z = (*bins)[i];
        if (z < 0) continue;
        double m = logits->values[i];
        for (int k = 1; k < K; ++k) m = std::max(m, logits->values[k * plane + i]);
        double sum = 0.0;
        for (int k = 0; k < K; ++k) sum += std::exp(logits->values[k * plane + i] - m);
        for (int k = 0; k < K; ++k) {
          double p = std::exp(logits->values[k * plane + i] - m) / sum;
          logits->grad[k * plane + i] += go * beta * (p - (k == z ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

/// Ordinal penalty: -beta * sum_fg (|argmax - z| / K) * log(1 - max prob).
/// The gap factor is a stop-gradient weight; only the log term carries
/// gradient. 1 - max prob is evaluated as the summed complement mass and
/// clamped at 1e-12 before the log.
inline TensorPtr loss_dist(Graph& g, const BinPrediction& pred, const BinMap& gt) {
  detail::check_pred_gt(pred, gt, "loss_dist");
  int fg = gt.foreground_count();
  if (fg == 0) throw EmptyRegionError("loss_dist: bin map has no foreground pixels");
  double beta = 1.0 / (2.0 * fg);

  TensorPtr logits = pred.logits;
  int K = pred.num_bins, plane = pred.height * pred.width;

  // per-pixel stop-gradient weights gap/K; pixels with zero gap drop out
  auto weights = std::make_shared<std::vector<double>>(static_cast<size_t>(plane), 0.0);
  for (int i = 0; i < plane; ++i) {
    int z = gt.bins[i];
    if (z < 0) continue;
    (*weights)[i] = std::abs(pred.hard[i] - z) / static_cast<double>(K);
  }

  double loss = 0.0;
  for (int i = 0; i < plane; ++i) {
    double wgt = (*weights)[i];
    if (wgt == 0.0) continue;
    double m = logits->values[i];
    int arg = 0;
    for (int k = 1; k < K; ++k) {
      if (logits->values[k * plane + i] > m) {
        m = logits->values[k * plane + i];
        arg = k;
      }
    }
    double sum = 0.0, rest = 0.0;
    for (int k = 0; k < K; ++k) {
      double e = std::exp(logits->values[k * plane + i] - m);
      sum += e;
      if (k != arg) rest += e;
    }
    double complement = rest / sum;  // = 1 - max prob, without cancellation
    loss -= beta * wgt * std::log(std::max(complement, 1e-12));
  }
  auto out = scalar_tensor(loss);
  if (g.track({logits})) {
    out->requires_grad = true;
    g.record("loss_dist", [logits, out, weights, K, plane, beta] {
      if (out->grad.empty()) return;
      double go = out->grad[0];
      logits->ensure_grad();
      for (int i = 0; i < plane; ++i) {
        double wgt = (*weights)[i];
        if (wgt == 0.0) continue;
        double m = logits->values[i];
        int arg = 0;
        for (int k = 1; k < K; ++k) {
          if (logits->values[k * plane + i] > m) {
            m = logits->values[k * plane + i];
            arg = k;
          }
        }
        double sum = 0.0, rest = 0.0;
        for (int k = 0; k < K; ++k) {
          double e = std::exp(logits->values[k * plane + i] - m);
          sum += e;
          if (k != arg) rest += e;
        }
        double pm = (sum - rest) / sum;
        // d/dlogit_k of -log(1 - p_max): p_max at the argmax slot,
        // -p_max * p_k / (1 - p_max) elsewhere; both bounded by 1.
        for (int k = 0; k < K; ++k) {
          double pk = std::exp(logits->values[k * plane + i] - m) / sum;
          double d;
          if (k == arg) {
            d = pm;
          } else {
            double ratio = rest > 0.0 ? pk * sum / rest : 0.0;
            d = -pm * ratio;
          }
          logits->grad[k * plane + i] += go * beta * wgt * d;
        }
      }
    });
  }
  return out;
}

/// Combined ordinal objective: classification term plus weighted gap term.
inline TensorPtr loss_osb(Graph& g, const BinPrediction& pred, const BinMap& gt,
                          double lambda_dist) {
  if (lambda_dist < 0.0) throw ContractError("loss_osb: lambda_dist must be nonnegative");
  return g.add(loss_cls(g, pred, gt), g.scale(loss_dist(g, pred, gt), lambda_dist));
}

/// Mean absolute bin gap of the hard prediction over foreground pixels.
inline double bin_mae(const BinPrediction& pred, const BinMap& gt) {
  detail::check_pred_gt(pred, gt, "bin_mae");
  int fg = 0;
  double acc = 0.0;
  int plane = pred.height * pred.width;
  for (int i = 0; i < plane; ++i) {
    int z = gt.bins[i];
    if (z < 0) continue;
    acc += std::abs(pred.hard[i] - z);
    ++fg;
  }
  if (fg == 0) throw EmptyRegionError("bin_mae: bin map has no foreground pixels");
  return acc / fg;
}

}  // namespace geoproto
