#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "geoproto/checkpoint.hpp"
#include "geoproto/encoder.hpp"
#include "geoproto/gape.hpp"
#include "geoproto/osb.hpp"

namespace geoproto {

/// Fixed sinusoidal 2D code: for each of four frequencies, sin/cos of the
/// row phase and sin/cos of the column phase (16 channels total).
inline TensorPtr sinusoidal_position_code(int h, int w) {
  constexpr int kFreqs = 4;
  auto code = tensor(Shape{4 * kFreqs, h, w});
  for (int f = 0; f < kFreqs; ++f) {
    double wavelength = 4.0 * std::pow(2.0, f);
    double omega = 2.0 * M_PI / wavelength;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int base = 4 * f;
        code->values[((base + 0) * h + y) * w + x] = std::sin(omega * y);
        code->values[((base + 1) * h + y) * w + x] = std::cos(omega * y);
        code->values[((base + 2) * h + y) * w + x] = std::sin(omega * x);
        code->values[((base + 3) * h + y) * w + x] = std::cos(omega * x);
      }
    }
  }
  return code;
}

/// Learned 1x1 projection of the position code into feature space,
/// near-zero initialised so the variant starts as the identity.
struct PositionEmbeddingParams {
  TensorPtr kernel;  // [C, 16, 1, 1]
  TensorPtr bias;    // [C]

  static PositionEmbeddingParams init(int channels, std::uint64_t seed) {
    auto rng = make_rng(seed, "pe");
    std::uniform_real_distribution<double> dist(-1e-4, 1e-4);
    PositionEmbeddingParams p;
    p.kernel = tensor(Shape{channels, 16, 1, 1}, 0.0, true);
    p.bias = tensor(Shape{channels}, 0.0, true);
    for (auto& v : p.kernel->values) v = dist(rng);
    return p;
  }

  void named_tensors(std::vector<std::pair<std::string, TensorPtr>>& out) const {
    out.emplace_back("pe.kernel", kernel);
    out.emplace_back("pe.bias", bias);
  }
};

/// Adds the projected position code to a feature map (the Table-4 style
/// spatial-context baseline component, applied to support features before
/// prototype pooling).
inline TensorPtr apply_position_embedding(Graph& g, TensorPtr feat,
                                          const PositionEmbeddingParams& params) {
  auto code = sinusoidal_position_code(feat->shape[1], feat->shape[2]);
  auto projected = g.bias_add(g.conv2d(code, params.kernel, 1, 0), params.bias);
  return g.add(feat, projected);
}

/// Structural switches baked into a parameter set; persisted as meta
/// tensors inside checkpoints so evaluation can rebuild the right model.
struct ModelConfig {
  int channels = 32;
  int bins = 10;       // K
  int mlp_hidden = 16; // H_e
  bool mlp_bias = true;
  bool enrichment = true;
  bool osb_loss = true;
  bool position_embedding = false;
  bool bg_enrich = false;
  FusionMode fusion = FusionMode::kAdditive;
};

struct ModelParams {
  ModelConfig config;
  EncoderParams encoder;
  OsbParams osb;
  GapeMlpParams gape;
  GapeMlpParams bg_gape;                    // allocated when bg_enrich
  std::unique_ptr<FusionProj> fusion_proj;  // allocated for concat_proj
  std::unique_ptr<PositionEmbeddingParams> pe;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p;
    p.config = cfg;
    p.encoder = EncoderParams::init(cfg.channels, seed);
    p.osb = OsbParams::init(cfg.channels, cfg.bins, seed);
    p.gape = GapeMlpParams::init(cfg.channels, cfg.mlp_hidden, seed, cfg.mlp_bias, "gape");
    if (cfg.bg_enrich)
      p.bg_gape = GapeMlpParams::init(cfg.channels, cfg.mlp_hidden, seed, cfg.mlp_bias, "bg_gape");
    if (cfg.fusion == FusionMode::kConcatProj)
      p.fusion_proj = std::make_unique<FusionProj>(FusionProj::init(cfg.channels, seed));
    if (cfg.position_embedding)
      p.pe = std::make_unique<PositionEmbeddingParams>(
          PositionEmbeddingParams::init(cfg.channels, seed));
    return p;
  }

  std::vector<std::pair<std::string, TensorPtr>> named_tensors() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    encoder.named_tensors(out);
    osb.named_tensors(out);
    gape.named_tensors(out, "gape");
    if (config.bg_enrich) bg_gape.named_tensors(out, "bg_gape");
    if (fusion_proj) fusion_proj->named_tensors(out);
    if (pe) pe->named_tensors(out);
    return out;
  }

  void save(const std::string& path) const {
    auto tensors = named_tensors();
    auto meta = [](double v) { return scalar_tensor(v); };
    tensors.emplace_back("meta.channels", meta(config.channels));
    tensors.emplace_back("meta.bins", meta(config.bins));
    tensors.emplace_back("meta.mlp_hidden", meta(config.mlp_hidden));
    tensors.emplace_back("meta.mlp_bias", meta(config.mlp_bias ? 1 : 0));
    tensors.emplace_back("meta.enrichment", meta(config.enrichment ? 1 : 0));
    tensors.emplace_back("meta.osb_loss", meta(config.osb_loss ? 1 : 0));
    tensors.emplace_back("meta.position_embedding", meta(config.position_embedding ? 1 : 0));
    tensors.emplace_back("meta.bg_enrich", meta(config.bg_enrich ? 1 : 0));
    tensors.emplace_back("meta.fusion", meta(static_cast<int>(config.fusion)));
    save_checkpoint(path, tensors);
  }

  static ModelParams load(const std::string& path) {
    auto blob = load_checkpoint(path);
    auto meta = [&blob, &path](const std::string& key) {
      auto it = blob.find(key);
      if (it == blob.end()) throw FormatError("checkpoint " + path + " lacks " + key);
      return it->second->values[0];
    };
    ModelConfig cfg;
    cfg.channels = static_cast<int>(meta("meta.channels"));
    cfg.bins = static_cast<int>(meta("meta.bins"));
    cfg.mlp_hidden = static_cast<int>(meta("meta.mlp_hidden"));
    cfg.mlp_bias = meta("meta.mlp_bias") != 0;
    cfg.enrichment = meta("meta.enrichment") != 0;
    cfg.osb_loss = meta("meta.osb_loss") != 0;
    cfg.position_embedding = meta("meta.position_embedding") != 0;
    cfg.bg_enrich = meta("meta.bg_enrich") != 0;
    cfg.fusion = static_cast<FusionMode>(static_cast<int>(meta("meta.fusion")));

    ModelParams p = init(cfg, 0);
    for (auto& [name, t] : p.named_tensors()) {
      auto it = blob.find(name);
      if (it == blob.end()) throw FormatError("checkpoint " + path + " lacks tensor " + name);
      if (it->second->shape != t->shape)
        throw FormatError("checkpoint " + path + ": shape mismatch for " + name);
      t->values = it->second->values;
    }
    return p;
  }
};

}  // namespace geoproto
