#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "geoproto/rng.hpp"
#include "geoproto/tensor.hpp"

namespace geoproto {

struct ConvLayer {
  TensorPtr kernel;  // [Cout, Cin, k, k]
  TensorPtr bias;    // [Cout]
  int stride = 1;
  int padding = 1;
};

inline ConvLayer make_conv_layer(int c_in, int c_out, int ksize, int stride, int padding,
                                 std::mt19937_64& rng) {
  ConvLayer layer;
  layer.stride = stride;
  layer.padding = padding;
  layer.kernel = tensor(Shape{c_out, c_in, ksize, ksize}, 0.0, true);
  layer.bias = tensor(Shape{c_out}, 0.0, true);
  double stddev = std::sqrt(2.0 / (c_in * ksize * ksize));  // He fan-in
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : layer.kernel->values) v = dist(rng);
  return layer;
}

/// Small trainable feature extractor shared by support and query images.
/// Four 3x3 conv+ReLU stages, channels 1 -> C/2 -> C/2(s2) -> C -> C(s2),
/// so a HxW grayscale image maps to C x H/4 x W/4 features.
struct EncoderParams {
  std::vector<ConvLayer> layers;
  int out_channels = 0;

  static constexpr int kTotalStride = 4;

  static EncoderParams init(int channels, std::uint64_t seed) {
    if (channels < 2) throw ConfigError("encoder: channels must be at least 2");
    auto rng = make_rng(seed, "encoder");
    int mid = channels / 2;
    EncoderParams p;
    p.out_channels = channels;
    p.layers.push_back(make_conv_layer(1, mid, 3, 1, 1, rng));
    p.layers.push_back(make_conv_layer(mid, mid, 3, 2, 1, rng));
    p.layers.push_back(make_conv_layer(mid, channels, 3, 1, 1, rng));
    p.layers.push_back(make_conv_layer(channels, channels, 3, 2, 1, rng));
    return p;
  }

  void named_tensors(std::vector<std::pair<std::string, TensorPtr>>& out) const {
    for (size_t i = 0; i < layers.size(); ++i) {
      out.emplace_back("encoder.conv" + std::to_string(i + 1) + ".kernel", layers[i].kernel);
      out.emplace_back("encoder.conv" + std::to_string(i + 1) + ".bias", layers[i].bias);
    }
  }
};

/// Per-image standardisation (zero mean, unit deviation, eps-guarded).
/// Images are inputs, not parameters, so this is plain preprocessing with
/// no tape involvement. Absolute intensity scale and offset vary across
/// imaging domains; features are learned on the standardised signal.
inline TensorPtr standardize_image(const TensorPtr& image) {
  double mean = 0.0;
  for (double v : image->values) mean += v;
  mean /= image->numel();
  double var = 0.0;
  for (double v : image->values) var += (v - mean) * (v - mean);
  double dev = std::max(std::sqrt(var / image->numel()), 1e-6);
  auto out = tensor(image->shape);
  for (int i = 0; i < image->numel(); ++i) out->values[i] = (image->values[i] - mean) / dev;
  return out;
}

inline TensorPtr encode(Graph& g, TensorPtr image, const EncoderParams& params) {
  if (image->shape.size() != 3 || image->shape[0] != 1)
    throw ShapeError("encode: expected a [1,H,W] image");
  int h = image->shape[1], w = image->shape[2];
  if (h % EncoderParams::kTotalStride != 0 || w % EncoderParams::kTotalStride != 0)
    throw ShapeError("encode: image size must be divisible by the total stride " +
                     std::to_string(EncoderParams::kTotalStride));
  TensorPtr x = standardize_image(image);
  for (const auto& layer : params.layers) {
    x = g.conv2d(x, layer.kernel, layer.stride, layer.padding);
    x = g.bias_add(x, layer.bias);
    x = g.relu(x);
  }
  return x;
}

}  // namespace geoproto
