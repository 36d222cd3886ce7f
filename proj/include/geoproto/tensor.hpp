#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "geoproto/error.hpp"

namespace geoproto {

using Shape = std::vector<int>;

inline int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense 64-bit float tensor participating in reverse-mode differentiation.
/// `grad` stays empty until a backward pass first touches this tensor.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;

  int numel() const { return static_cast<int>(values.size()); }
  bool is_scalar() const { return values.size() == 1; }

  double scalar() const {
    if (!is_scalar()) throw ContractError("tensor is not a scalar: shape " + shape_str(shape));
    return values[0];
  }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr tensor(Shape shape, double fill = 0.0, bool requires_grad = false) {
  auto t = std::make_shared<Tensor>();
  int n = shape_numel(shape);
  t->shape = std::move(shape);
  t->values.assign(static_cast<size_t>(n), fill);
  t->requires_grad = requires_grad;
  return t;
}

inline TensorPtr tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
  int n = shape_numel(shape);
  if (static_cast<size_t>(n) != values.size())
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

inline TensorPtr scalar_tensor(double v, bool requires_grad = false) {
  return tensor(Shape{1}, std::vector<double>{v}, requires_grad);
}

namespace detail {
inline void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
}
inline void accumulate(const TensorPtr& t, int i, double g) {
  if (!t->requires_grad) return;
  t->ensure_grad();
  t->grad[static_cast<size_t>(i)] += g;
}
}  // namespace detail

/// Reverse-mode tape. Operations append nodes in execution order; backward
/// replays them once in reverse. One backward pass per recorded trace.
///
/// Graphs are single-threaded; independent graphs may live on independent
/// threads. Leaf tensors (parameters) accumulate into their own grad buffers,
/// so a parameter shared by several sequential graphs sums gradients until
/// the optimizer consumes them.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  /// Extension point for fused operations defined outside this header.
  /// `backward_fn` must add into the inputs' grad buffers.
  void record(const char* name, std::function<void()> backward_fn) {
    if (!recording_) return;
    nodes_.push_back(Node{name, std::move(backward_fn)});
  }

  /// True when an op consuming these inputs should be traced.
  bool track(std::initializer_list<TensorPtr> inputs) const {
    if (!recording_) return false;
    for (const auto& t : inputs)
      if (t && t->requires_grad) return true;
    return false;
  }

  void backward(TensorPtr loss) {
    if (!loss || loss->numel() != 1) throw ContractError("backward requires a scalar loss");
    if (nodes_.empty()) throw StateError("backward: graph has no recorded operations");
    if (replayed_ == nodes_.size())
      throw StateError("backward: tape already consumed; run a new forward pass first");
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
    replayed_ = nodes_.size();
  }

  // ----- elementwise -----

  TensorPtr add(TensorPtr a, TensorPtr b) {
    detail::check_same_shape(a, b, "add");
    auto out = tensor(a->shape);
    for (int i = 0; i < out->numel(); ++i) out->values[i] = a->values[i] + b->values[i];
    if (track({a, b})) {
      out->requires_grad = true;
      record("add", [a, b, out] {
        if (out->grad.empty()) return;
        for (int i = 0; i < out->numel(); ++i) {
          detail::accumulate(a, i, out->grad[i]);
          detail::accumulate(b, i, out->grad[i]);
        }
      });
    }
    return out;
  }

  TensorPtr sub(TensorPtr a, TensorPtr b) {
    detail::check_same_shape(a, b, "sub");
    auto out = tensor(a->shape);
    for (int i = 0; i < out->numel(); ++i) out->values[i] = a->values[i] - b->values[i];
    if (track({a, b})) {
      out->requires_grad = true;
      record("sub", [a, b, out] {
        if (out->grad.empty()) return;
        for (int i = 0; i < out->numel(); ++i) {
          detail::accumulate(a, i, out->grad[i]);
          detail::accumulate(b, i, -out->grad[i]);
        }
      });
    }
    return out;
  }

  TensorPtr mul(TensorPtr a, TensorPtr b) {
    detail::check_same_shape(a, b, "mul");
    auto out = tensor(a->shape);
    for (int i = 0; i < out->numel(); ++i) out->values[i] = a->values[i] * b->values[i];
    if (track({a, b})) {
      out->requires_grad = true;
      record("mul", [a, b, out] {
        if (out->grad.empty()) return;
        for (int i = 0; i < out->numel(); ++i) {
          detail::accumulate(a, i, out->grad[i] * b->values[i]);
          detail::accumulate(b, i, out->grad[i] * a->values[i]);
        }
      });
    }
    return out;
  }

  TensorPtr scale(TensorPtr a, double c) {
    auto out = tensor(a->shape);
    for (int i = 0; i < out->numel(); ++i) out->values[i] = a->values[i] * c;
    if (track({a})) {
      out->requires_grad = true;
      record("scale", [a, out, c] {
        if (out->grad.empty()) return;
        for (int i = 0; i < out->numel(); ++i) detail::accumulate(a, i, out->grad[i] * c);
      });
    }
    return out;
  }

  TensorPtr offset(TensorPtr a, double c) {
    auto out = tensor(a->shape);
    for (int i = 0; i < out->numel(); ++i) out->values[i] = a->values[i] + c;
    if (track({a})) {
      out->requires_grad = true;
      record("offset", [a, out] {
        if (out->grad.empty()) return;
        for (int i = 0; i < out->numel(); ++i) detail::accumulate(a, i, out->grad[i]);
      });
    }
    return out;
  }

  TensorPtr relu(TensorPtr a) {
    auto out = tensor(a->shape);
    for (int i = 0; i < out->numel(); ++i) out->values[i] = a->values[i] > 0.0 ? a->values[i] : 0.0;
    if (track({a})) {
      out->requires_grad = true;
      record("relu", [a, out] {
        if (out->grad.empty()) return;
        for (int i = 0; i < out->numel(); ++i)
          if (a->values[i] > 0.0) detail::accumulate(a, i, out->grad[i]);
      });
    }
    return out;
  }

  TensorPtr softplus(TensorPtr a) {
    auto out = tensor(a->shape);
    for (int i = 0; i < out->numel(); ++i) {
      double x = a->values[i];
      out->values[i] = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    if (track({a})) {
      out->requires_grad = true;
      record("softplus", [a, out] {
        if (out->grad.empty()) return;
        for (int i = 0; i < out->numel(); ++i) {
          double s = 1.0 / (1.0 + std::exp(-a->values[i]));
          detail::accumulate(a, i, out->grad[i] * s);
        }
      });
    }
    return out;
  }

  // ----- reductions -----

  TensorPtr sum(TensorPtr a) {
    double acc = 0.0;
    for (double v : a->values) acc += v;
    auto out = scalar_tensor(acc);
    if (track({a})) {
      out->requires_grad = true;
      record("sum", [a, out] {
        if (out->grad.empty()) return;
        for (int i = 0; i < a->numel(); ++i) detail::accumulate(a, i, out->grad[0]);
      });
    }
    return out;
  }

  TensorPtr mean(TensorPtr a) { return scale(sum(a), 1.0 / a->numel()); }

  /// Dot product against a fixed (non-differentiated) coefficient vector.
  TensorPtr weighted_sum(TensorPtr a, std::vector<double> weights) {
    if (weights.size() != a->values.size())
      throw ShapeError("weighted_sum: weight count does not match tensor size");
    double acc = 0.0;
    for (int i = 0; i < a->numel(); ++i) acc += a->values[i] * weights[i];
    auto out = scalar_tensor(acc);
    if (track({a})) {
      out->requires_grad = true;
      auto w = std::make_shared<std::vector<double>>(std::move(weights));
      record("weighted_sum", [a, out, w] {
        if (out->grad.empty()) return;
        for (int i = 0; i < a->numel(); ++i) detail::accumulate(a, i, out->grad[0] * (*w)[i]);
      });
    }
    return out;
  }

  // ----- vectors -----

  TensorPtr concat(TensorPtr a, TensorPtr b) {
    if (a->shape.size() != 1 || b->shape.size() != 1)
      throw ShapeError("concat expects rank-1 tensors");
    auto out = tensor(Shape{a->numel() + b->numel()});
    std::copy(a->values.begin(), a->values.end(), out->values.begin());
    std::copy(b->values.begin(), b->values.end(), out->values.begin() + a->numel());
    if (track({a, b})) {
      out->requires_grad = true;
      record("concat", [a, b, out] {
        if (out->grad.empty()) return;
        int na = a->numel();
        for (int i = 0; i < na; ++i) detail::accumulate(a, i, out->grad[i]);
        for (int i = 0; i < b->numel(); ++i) detail::accumulate(b, i, out->grad[na + i]);
      });
    }
    return out;
  }

  /// y = W x + b with W:[out x in], x:[in], b:[out] (b may be null).
  TensorPtr linear(TensorPtr W, TensorPtr x, TensorPtr b) {
    if (W->shape.size() != 2 || x->shape.size() != 1 || W->shape[1] != x->shape[0])
      throw ShapeError("linear: W " + shape_str(W->shape) + " incompatible with x " + shape_str(x->shape));
    int rows = W->shape[0], cols = W->shape[1];
    if (b && (b->shape.size() != 1 || b->shape[0] != rows))
      throw ShapeError("linear: bias shape mismatch");
    auto out = tensor(Shape{rows});
    for (int r = 0; r < rows; ++r) {
      double acc = b ? b->values[r] : 0.0;
      for (int c = 0; c < cols; ++c) acc += W->values[r * cols + c] * x->values[c];
      out->values[r] = acc;
    }
    if (track({W, x, b})) {
      out->requires_grad = true;
      record("linear", [W, x, b, out, rows, cols] {
        if (out->grad.empty()) return;
        for (int r = 0; r < rows; ++r) {
          double g = out->grad[r];
          if (g == 0.0) continue;
          for (int c = 0; c < cols; ++c) {
            detail::accumulate(W, r * cols + c, g * x->values[c]);
            detail::accumulate(x, c, g * W->values[r * cols + c]);
          }
          if (b) detail::accumulate(b, r, g);
        }
      });
    }
    return out;
  }

  // ----- softmax -----

  /// Numerically stabilised softmax along `axis` (max subtraction, then
  /// normalisation by the computed sum, so slices sum to 1 up to rounding).
  TensorPtr softmax(TensorPtr a, int axis) {
    int rank = static_cast<int>(a->shape.size());
    if (axis < 0 || axis >= rank)
      throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_str(a->shape));
    int k = a->shape[axis];
    int inner = 1, outer = 1;
    for (int d = axis + 1; d < rank; ++d) inner *= a->shape[d];
    for (int d = 0; d < axis; ++d) outer *= a->shape[d];

    auto out = tensor(a->shape);
    for (int o = 0; o < outer; ++o) {
      for (int in = 0; in < inner; ++in) {
        int base = o * k * inner + in;
        double m = a->values[base];
        for (int j = 1; j < k; ++j) m = std::max(m, a->values[base + j * inner]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) {
          double e = std::exp(a->values[base + j * inner] - m);
          out->values[base + j * inner] = e;
          z += e;
        }
        for (int j = 0; j < k; ++j) out->values[base + j * inner] /= z;
      }
    }
    if (track({a})) {
      out->requires_grad = true;
      record("softmax", [a, out, k, inner, outer] {
        if (out->grad.empty()) return;
        for (int o = 0; o < outer; ++o) {
          for (int in = 0; in < inner; ++in) {
            int base = o * k * inner + in;
            double dot = 0.0;
            for (int j = 0; j < k; ++j) dot += out->values[base + j * inner] * out->grad[base + j * inner];
            for (int j = 0; j < k; ++j) {
              int idx = base + j * inner;
              detail::accumulate(a, idx, out->values[idx] * (out->grad[idx] - dot));
            }
          }
        }
      });
    }
    return out;
  }

  // ----- image ops -----

  /// Cross-correlation (no kernel flip): x:[Cin,H,W], k:[Cout,Cin,kh,kw].
  TensorPtr conv2d(TensorPtr x, TensorPtr k, int stride, int padding) {
    if (x->shape.size() != 3 || k->shape.size() != 4)
      throw ShapeError("conv2d: expected x rank 3 and kernel rank 4");
    int ci = x->shape[0], h = x->shape[1], w = x->shape[2];
    int co = k->shape[0], kci = k->shape[1], kh = k->shape[2], kw = k->shape[3];
    if (kci != ci) throw ShapeError("conv2d: channel mismatch");
    if (kh != kw || kh % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd size");
    if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
    if (h + 2 * padding < kh || w + 2 * padding < kw)
      throw ShapeError("conv2d: kernel larger than padded input");
    // standard floor convention when the stride does not divide evenly
    int ho = (h + 2 * padding - kh) / stride + 1;
    int wo = (w + 2 * padding - kw) / stride + 1;

    auto out = tensor(Shape{co, ho, wo});
    const double* xv = x->values.data();
    const double* kv = k->values.data();
    double* ov = out->values.data();
    for (int oc = 0; oc < co; ++oc) {
      for (int icx = 0; icx < ci; ++icx) {
        const double* xc = xv + static_cast<size_t>(icx) * h * w;
        const double* kc = kv + (static_cast<size_t>(oc) * ci + icx) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            double wgt = kc[ky * kw + kx];
            if (wgt == 0.0) continue;
            // valid output column range for this tap
            int ox0 = std::max(0, (padding - kx + stride - 1) / stride);
            int ox1 = std::min(wo - 1, (w - 1 - kx + padding) / stride);
            for (int oy = 0; oy < ho; ++oy) {
              int iy = oy * stride + ky - padding;
              if (iy < 0 || iy >= h) continue;
              const double* xrow = xc + static_cast<size_t>(iy) * w;
              double* orow = ov + (static_cast<size_t>(oc) * ho + oy) * wo;
              int ix = ox0 * stride + kx - padding;
              for (int ox = ox0; ox <= ox1; ++ox, ix += stride) orow[ox] += wgt * xrow[ix];
            }
          }
        }
      }
    }
    if (track({x, k})) {
      out->requires_grad = true;
      record("conv2d", [x, k, out, ci, h, w, co, kh, kw, stride, padding, ho, wo] {
        if (out->grad.empty()) return;
        const double* og = out->grad.data();
        bool gx = x->requires_grad, gk = k->requires_grad;
        if (gx) x->ensure_grad();
        if (gk) k->ensure_grad();
        for (int oc = 0; oc < co; ++oc) {
          for (int icx = 0; icx < ci; ++icx) {
            const double* xc = x->values.data() + static_cast<size_t>(icx) * h * w;
            double* xg = gx ? x->grad.data() + static_cast<size_t>(icx) * h * w : nullptr;
            const double* kc = k->values.data() + (static_cast<size_t>(oc) * ci + icx) * kh * kw;
            double* kg = gk ? k->grad.data() + (static_cast<size_t>(oc) * ci + icx) * kh * kw : nullptr;
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                double wgt = kc[ky * kw + kx];
                double kacc = 0.0;
                int ox0 = std::max(0, (padding - kx + stride - 1) / stride);
                int ox1 = std::min(wo - 1, (w - 1 - kx + padding) / stride);
                for (int oy = 0; oy < ho; ++oy) {
                  int iy = oy * stride + ky - padding;
                  if (iy < 0 || iy >= h) continue;
                  const double* grow = og + (static_cast<size_t>(oc) * ho + oy) * wo;
                  const double* xrow = xc + static_cast<size_t>(iy) * w;
                  double* xgrow = gx ? xg + static_cast<size_t>(iy) * w : nullptr;
                  int ix = ox0 * stride + kx - padding;
                  for (int ox = ox0; ox <= ox1; ++ox, ix += stride) {
                    double g = grow[ox];
                    if (gx) xgrow[ix] += wgt * g;
                    kacc += xrow[ix] * g;
                  }
                }
                if (gk) kg[ky * kw + kx] += kacc;
              }
            }
          }
        }
      });
    }
    return out;
  }

  /// x:[C,H,W] plus per-channel bias b:[C].
  TensorPtr bias_add(TensorPtr x, TensorPtr b) {
    if (x->shape.size() != 3 || b->shape.size() != 1 || b->shape[0] != x->shape[0])
      throw ShapeError("bias_add: bias shape mismatch");
    int c = x->shape[0], plane = x->shape[1] * x->shape[2];
    auto out = tensor(x->shape);
    for (int ch = 0; ch < c; ++ch) {
      double bv = b->values[ch];
      for (int i = 0; i < plane; ++i) out->values[ch * plane + i] = x->values[ch * plane + i] + bv;
    }
    if (track({x, b})) {
      out->requires_grad = true;
      record("bias_add", [x, b, out, c, plane] {
        if (out->grad.empty()) return;
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int i = 0; i < plane; ++i) {
            double g = out->grad[ch * plane + i];
            detail::accumulate(x, ch * plane + i, g);
            acc += g;
          }
          detail::accumulate(b, ch, acc);
        }
      });
    }
    return out;
  }

  /// Per-channel mean of x:[C,h,w] over active pixels of a h*w mask.
  /// Gradient distributes 1/|active| to each active pixel.
  TensorPtr masked_mean(TensorPtr x, const std::vector<std::uint8_t>& active) {
    if (x->shape.size() != 3) throw ShapeError("masked_mean: expected rank-3 input");
    int c = x->shape[0], plane = x->shape[1] * x->shape[2];
    if (static_cast<int>(active.size()) != plane)
      throw ShapeError("masked_mean: mask size does not match spatial extent");
    int n_active = 0;
    for (auto v : active) n_active += v ? 1 : 0;
    if (n_active == 0) throw EmptyRegionError("masked_mean: mask has no active pixels");

    auto out = tensor(Shape{c});
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (int i = 0; i < plane; ++i)
        if (active[i]) acc += x->values[ch * plane + i];
      out->values[ch] = acc / n_active;
    }
    if (track({x})) {
      out->requires_grad = true;
      auto m = std::make_shared<std::vector<std::uint8_t>>(active);
      record("masked_mean", [x, out, m, c, plane, n_active] {
        if (out->grad.empty()) return;
        double inv = 1.0 / n_active;
        for (int ch = 0; ch < c; ++ch) {
          double g = out->grad[ch] * inv;
          if (g == 0.0) continue;
          for (int i = 0; i < plane; ++i)
            if ((*m)[i]) detail::accumulate(x, ch * plane + i, g);
        }
      });
    }
    return out;
  }

  /// Cosine similarity of two vectors; each norm is clamped below by eps.
  TensorPtr cosine_similarity(TensorPtr a, TensorPtr b, double eps = 1e-8) {
    if (a->shape.size() != 1 || b->shape.size() != 1 || a->shape != b->shape)
      throw ShapeError("cosine_similarity: expects two equal-length vectors");
    int n = a->numel();
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int i = 0; i < n; ++i) {
      dot += a->values[i] * b->values[i];
      na2 += a->values[i] * a->values[i];
      nb2 += b->values[i] * b->values[i];
    }
    double na = std::max(std::sqrt(na2), eps);
    double nb = std::max(std::sqrt(nb2), eps);
    auto out = scalar_tensor(dot / (na * nb));
    if (track({a, b})) {
      out->requires_grad = true;
      bool ca = std::sqrt(na2) < eps, cb = std::sqrt(nb2) < eps;
      record("cosine_similarity", [a, b, out, n, na, nb, ca, cb] {
        if (out->grad.empty()) return;
        double g = out->grad[0];
        double val = out->values[0];
        double inv = 1.0 / (na * nb);
        for (int i = 0; i < n; ++i) {
          double da = b->values[i] * inv - (ca ? 0.0 : val * a->values[i] / (na * na));
          double db = a->values[i] * inv - (cb ? 0.0 : val * b->values[i] / (nb * nb));
          detail::accumulate(a, i, g * da);
          detail::accumulate(b, i, g * db);
        }
      });
    }
    return out;
  }

 private:
  struct Node {
    const char* name;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  size_t replayed_ = static_cast<size_t>(-1);
  bool recording_;
};

}  // namespace geoproto
