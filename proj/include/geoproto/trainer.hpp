#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "geoproto/episodes.hpp"
#include "geoproto/matcher.hpp"
#include "geoproto/metrics.hpp"
#include "geoproto/model.hpp"
#include "geoproto/pgm.hpp"

namespace geoproto {

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// Full run configuration: paper defaults where the paper pins a value,
/// desk-scale defaults elsewhere.
struct TrainConfig {
  // model structure
  int channels = 32;
  int bins = 10;
  int grid = 8;
  double tau_occ = 0.05;
  int mlp_hidden = 16;
  bool mlp_bias = true;
  // components
  bool enrichment = true;
  bool osb_loss = true;
  bool position_embedding = false;
  bool bg_enrich = false;
  FusionMode fusion = FusionMode::kAdditive;
  double query_reweight_tau = 0.0;  // 0 disables the gate
  bool expected_bin_masked = false;
  // loss weights
  double lambda_dist = 1.0;
  double lambda_geo = 0.3;
  double alpha = 20.0;
  // optimisation
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_decay = 0.95;
  int lr_decay_every = 1000;
  int episodes = 4000;
  int checkpoint_every = 500;
  int holdout_episodes = 16;
  // data
  int image_size = 64;
  int shots = 1;
  std::vector<std::string> train_families = {"ellipse", "annulus", "blob"};
  std::vector<std::string> eval_families = {"ellipse", "annulus", "blob"};
  std::string source_domain = "source";
  std::string target_domain = "target";
  int eval_episodes = 200;

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.channels = channels;
    mc.bins = bins;
    mc.mlp_hidden = mlp_hidden;
    mc.mlp_bias = mlp_bias;
    mc.enrichment = enrichment;
    mc.osb_loss = osb_loss;
    mc.position_embedding = position_embedding;
    mc.bg_enrich = bg_enrich;
    mc.fusion = fusion;
    return mc;
  }

  EpisodeSampler sampler() const {
    EpisodeSampler s;
    for (const auto& f : train_families)
      s.train_families.push_back(ShapeFamily::preset(shape_kind_from_string(f)));
    for (const auto& f : eval_families)
      s.eval_families.push_back(ShapeFamily::preset(shape_kind_from_string(f)));
    s.source_domain = DomainSpec::preset(source_domain);
    s.target_domain = DomainSpec::preset(target_domain);
    s.image_size = image_size;
    s.shots = shots;
    s.feature_stride = EncoderParams::kTotalStride;
    s.grid = grid;
    s.tau_occ = tau_occ;
    return s;
  }

  void validate() const {
    if (lr <= 0 || momentum < 0 || weight_decay < 0 || lr_decay <= 0 || lr_decay_every < 1)
      throw ConfigError("optimiser rates must be positive");
    if (episodes < 0 || checkpoint_every < 1 || holdout_episodes < 0 || eval_episodes < 1)
      throw ConfigError("episode counts out of range");
    if (image_size < 8 || image_size % EncoderParams::kTotalStride != 0)
      throw ConfigError("image_size must be a positive multiple of " +
                        std::to_string(EncoderParams::kTotalStride));
    if (bins < 2) throw ConfigError("bins must be at least 2");
    if (grid < 1 || grid > image_size / EncoderParams::kTotalStride)
      throw ConfigError("grid must lie in [1, feature size]");
    if (lambda_dist < 0 || lambda_geo < 0 || alpha <= 0)
      throw ConfigError("loss weights out of range");
    if (query_reweight_tau < 0) throw ConfigError("query_reweight_tau must be >= 0");
    if (query_reweight_tau > 0 && !enrichment)
      throw ConfigError("query re-weighting needs enrichment for prototype bin levels");
    if (shots < 1) throw ConfigError("shots must be at least 1");
    if (tau_occ < 0 || tau_occ > 1) throw ConfigError("tau_occ must lie in [0,1]");
    if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be positive");
    if (train_families.empty() || eval_families.empty())
      throw ConfigError("family lists must be nonempty");
  }
};

enum class RunMode { kTrain, kEval };

struct EpisodeResult {
  LossBundle losses;
  EvalRecord record;
  BinaryMask pred_mask;          // feature-resolution prediction
  BinaryMask query_mask_small;   // downsampled reference
  BinMap support_gt_bins;        // shot 0
  BinMap support_pred_bins;      // shot 0, hard OSB output
};

/// One full forward pass (plus backward in training mode). Parameters are
/// read; their grad buffers accumulate when mode is kTrain.
inline EpisodeResult run_episode(ModelParams& params, const Episode& ep, const TrainConfig& cfg,
                                 RunMode mode) {
  Graph g(mode == RunMode::kTrain);
  const int fsz = cfg.image_size / EncoderParams::kTotalStride;
  GridSpec grid = GridSpec::make(cfg.grid, fsz, fsz, cfg.tau_occ);

  // support forward: features, bin predictions, prototypes
  PrototypeSet protos;
  std::vector<TensorPtr> support_feats;
  std::vector<BinaryMask> support_small;
  std::vector<BinPrediction> support_binpred;
  std::vector<BinMap> support_gt;
  TensorPtr l_osb = scalar_tensor(0.0);
  for (const auto& [image, mask] : ep.support) {
    BinaryMask small = downsample_mask(mask, fsz, fsz);
    TensorPtr feat = encode(g, image, params.encoder);
    BinPrediction binpred = predict_bins(g, feat, params.osb);
    BinMap gt_bins = quantise(edt(small), small, cfg.bins);
    if (cfg.osb_loss) l_osb = g.add(l_osb, loss_osb(g, binpred, gt_bins, cfg.lambda_dist));

    TensorPtr pool_feat = params.pe ? apply_position_embedding(g, feat, *params.pe) : feat;
    PrototypeSet set = pool_prototypes(g, pool_feat, small, grid);
    if (cfg.enrichment)
      enrich(g, set, binpred, grid, params.gape, cfg.fusion, params.fusion_proj.get(),
             cfg.expected_bin_masked ? &small : nullptr);
    if (cfg.bg_enrich) enrich_background(g, set, small, grid, params.bg_gape);

    // union of active slots across shots
    protos.fg_raw.insert(protos.fg_raw.end(), set.fg_raw.begin(), set.fg_raw.end());
    protos.fg_enriched.insert(protos.fg_enriched.end(), set.fg_enriched.begin(),
                              set.fg_enriched.end());
    protos.fg_meandist.insert(protos.fg_meandist.end(), set.fg_meandist.begin(),
                              set.fg_meandist.end());
    protos.bg.insert(protos.bg.end(), set.bg.begin(), set.bg.end());

    support_feats.push_back(feat);
    support_small.push_back(std::move(small));
    support_binpred.push_back(std::move(binpred));
    support_gt.push_back(std::move(gt_bins));
  }
  if (ep.support.size() > 1) l_osb = g.scale(l_osb, 1.0 / ep.support.size());

  // query forward and matching
  BinaryMask query_small = downsample_mask(ep.query.second, fsz, fsz);
  TensorPtr feat_q = encode(g, ep.query.first, params.encoder);
  ScoreMaps maps;
  if (cfg.query_reweight_tau > 0.0) {
    BinPrediction binpred_q = predict_bins(g, feat_q, params.osb);
    maps = query_reweight(g, feat_q, protos, binpred_q, cfg.query_reweight_tau);
  } else {
    maps = classify(g, feat_q, protos);
  }
  TensorPtr l_seg = seg_loss(g, maps, query_small, cfg.alpha);

  TensorPtr l_align = scalar_tensor(0.0);
  for (size_t s = 0; s < support_feats.size(); ++s)
    l_align = g.add(l_align, align_loss(g, support_feats[s], support_small[s], feat_q, maps.pred,
                                        grid, cfg.alpha));
  if (ep.support.size() > 1) l_align = g.scale(l_align, 1.0 / ep.support.size());

  EpisodeResult res;
  res.losses = total_loss(g, l_seg, l_align, l_osb, cfg.lambda_geo);
  if (mode == RunMode::kTrain) g.backward(res.losses.total);

  res.pred_mask = maps.pred;
  res.query_mask_small = query_small;
  res.support_gt_bins = support_gt[0];
  res.support_pred_bins.height = fsz;
  res.support_pred_bins.width = fsz;
  res.support_pred_bins.num_bins = cfg.bins;
  res.support_pred_bins.bins.assign(support_binpred[0].hard.begin(), support_binpred[0].hard.end());
  for (size_t i = 0; i < res.support_pred_bins.bins.size(); ++i)
    if (!support_small[0].bits[i]) res.support_pred_bins.bins[i] = -1;

  res.record.seed = ep.seed;
  res.record.family = ep.family;
  res.record.domain = ep.domain;
  res.record.dsc = dsc(maps.pred, query_small);
  double mae = 0.0;
  for (size_t s = 0; s < support_binpred.size(); ++s)
    mae += bin_mae(support_binpred[s], support_gt[s]);
  res.record.bin_mae = mae / support_binpred.size();
  try {
    BinMap query_bins = quantise(edt(query_small), query_small, cfg.bins);
    res.record.bc = bhattacharyya(bin_histogram(support_gt[0]), bin_histogram(query_bins));
  } catch (const EmptyRegionError&) {
    res.record.bc = 0.0;  // query vanished at feature resolution
  }
  return res;
}

/// SGD with momentum and decoupled-from-nothing classic weight decay:
/// v <- mu*v + (g + wd*theta); theta <- theta - lr*v. Grads are consumed.
struct OptimizerState {
  std::vector<std::vector<double>> momentum;
  double lr = 0.0;
  int episode = 0;

  static OptimizerState init(const ModelParams& params, const TrainConfig& cfg) {
    OptimizerState st;
    st.lr = cfg.lr;
    for (const auto& [name, t] : params.named_tensors())
      st.momentum.emplace_back(t->values.size(), 0.0);
    return st;
  }
};

inline void sgd_update(const std::vector<TensorPtr>& tensors, OptimizerState& state,
                       double momentum, double weight_decay) {
  if (tensors.size() != state.momentum.size())
    throw ContractError("sgd_update: optimizer state does not match parameter list");
  for (size_t p = 0; p < tensors.size(); ++p) {
    TensorPtr t = tensors[p];
    auto& v = state.momentum[p];
    t->ensure_grad();
    for (size_t i = 0; i < t->values.size(); ++i) {
      double g = t->grad[i] + weight_decay * t->values[i];
      v[i] = momentum * v[i] + g;
      t->values[i] -= state.lr * v[i];
    }
    t->zero_grad();
  }
}

inline void sgd_step(ModelParams& params, OptimizerState& state, const TrainConfig& cfg) {
  std::vector<TensorPtr> tensors;
  for (const auto& [name, t] : params.named_tensors()) tensors.push_back(t);
  sgd_update(tensors, state, cfg.momentum, cfg.weight_decay);
}

struct TrainResult {
  std::vector<std::string> checkpoints;
  std::vector<std::pair<int, double>> holdout_mae;  // (episode, mean bin MAE)
  std::vector<std::pair<int, double>> holdout_dsc;
  std::string final_checkpoint;
};

namespace detail {
inline std::string ck_name(int episode) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ck_%05d.gprt", episode);
  return buf;
}
}  // namespace detail

/// Episodic optimisation: sample, forward/backward, SGD step, decay the
/// learning rate at each lr_decay_every boundary, checkpoint on cadence.
/// Fully reproducible from (config, seed).
inline TrainResult train(const TrainConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  ModelParams params = ModelParams::init(cfg.model_config(), seed);
  OptimizerState state = OptimizerState::init(params, cfg);
  EpisodeSampler sampler = cfg.sampler();

  std::vector<Episode> holdout;
  for (int j = 0; j < cfg.holdout_episodes; ++j)
    holdout.push_back(sampler.sample(Split::kTrain, derive_seed(seed, "holdout", j)));

  std::ofstream log(out_dir + "/train_log.csv");
  log << "episode,loss_seg,loss_align,loss_osb,loss_total,lr\n";
  std::ofstream holdout_log(out_dir + "/holdout.csv");
  holdout_log << "episode,bin_mae,dsc\n";

  TrainResult result;
  auto measure_holdout = [&](int episode) {
    if (holdout.empty()) return;
    double mae = 0.0, d = 0.0;
    for (const auto& ep : holdout) {
      auto res = run_episode(params, ep, cfg, RunMode::kEval);
      mae += res.record.bin_mae;
      d += res.record.dsc;
    }
    mae /= holdout.size();
    d /= holdout.size();
    result.holdout_mae.emplace_back(episode, mae);
    result.holdout_dsc.emplace_back(episode, d);
    holdout_log << episode << "," << fmt_g(mae) << "," << fmt_g(d) << "\n";
  };
  auto checkpoint = [&](int episode) {
    std::string path = out_dir + "/" + detail::ck_name(episode);
    params.save(path);
    result.checkpoints.push_back(path);
    result.final_checkpoint = path;
    measure_holdout(episode);
  };

  checkpoint(0);
  for (int e = 1; e <= cfg.episodes; ++e) {
    Episode ep;
    bool ok = false;
    for (int retry = 0; retry < 20 && !ok; ++retry) {
      ep = sampler.sample(Split::kTrain, derive_seed(seed, "train", static_cast<std::uint64_t>(e) * 32 + retry));
      try {
        auto res = run_episode(params, ep, cfg, RunMode::kTrain);
        log << e << "," << fmt_g(res.losses.l_seg->scalar()) << ","
            << fmt_g(res.losses.l_align->scalar()) << "," << fmt_g(res.losses.l_osb->scalar())
            << "," << fmt_g(res.losses.total->scalar()) << "," << fmt_g(state.lr) << "\n";
        ok = true;
      } catch (const DegenerateSupportError&) {
        continue;
      }
    }
    if (!ok) throw GenerationError("train: no usable episode after 20 retries at step " +
                                   std::to_string(e));
    sgd_step(params, state, cfg);
    state.episode = e;
    if (e % cfg.lr_decay_every == 0) state.lr *= cfg.lr_decay;
    if (e % cfg.checkpoint_every == 0) checkpoint(e);
  }
  if (cfg.episodes % cfg.checkpoint_every != 0) checkpoint(cfg.episodes);
  return result;
}

struct EvalOptions {
  std::string domain = "target";       // rendering domain for eval episodes
  std::string out_dir;                 // empty: no CSV output
  bool export_maps = false;
  int n_episodes = 200;
  std::uint64_t seed = 1;
};

inline void write_records_csv(const std::string& path, const std::vector<EvalRecord>& records) {
  std::ofstream out(path);
  out << "seed,family,domain,dsc,bin_mae,bc\n";
  for (const auto& r : records)
    out << r.seed << "," << r.family << "," << r.domain << "," << fmt_g(r.dsc) << ","
        << fmt_g(r.bin_mae) << "," << fmt_g(r.bc) << "\n";
}

inline void write_summary_csv(const std::string& path, const std::vector<GroupStats>& stats) {
  std::ofstream out(path);
  out << "group,metric,n,mean,median,std\n";
  for (const auto& s : stats)
    out << s.group << "," << s.metric << "," << s.n << "," << fmt_g(s.mean) << ","
        << fmt_g(s.median) << "," << fmt_g(s.stddev) << "\n";
}

/// Runs eval episodes with hard-argmax prediction and no parameter updates.
inline std::vector<EvalRecord> evaluate(ModelParams& params, const TrainConfig& cfg,
                                        const EvalOptions& opt) {
  EpisodeSampler sampler = cfg.sampler();
  sampler.target_domain = DomainSpec::preset(opt.domain);
  if (!opt.out_dir.empty()) std::filesystem::create_directories(opt.out_dir);

  std::vector<EvalRecord> records;
  for (int j = 0; j < opt.n_episodes; ++j) {
    Episode ep = sampler.sample(Split::kEval, derive_seed(opt.seed, "eval", j));
    auto res = run_episode(params, ep, cfg, RunMode::kEval);
    records.push_back(res.record);
    if (opt.export_maps && !opt.out_dir.empty()) {
      char tag[32];
      std::snprintf(tag, sizeof tag, "ep%04d", j);
      std::string base = opt.out_dir + "/" + tag;
      const auto& [simg, smask] = ep.support[0];
      write_gray_pgm(simg->values, cfg.image_size, cfg.image_size, base + "_support.pgm");
      write_mask_pgm(smask, base + "_support_mask.pgm");
      write_binmap_pgm(res.support_gt_bins, base + "_gt_bins.pgm");
      write_binmap_pgm(res.support_pred_bins, base + "_pred_bins.pgm");
      write_mask_pgm(res.pred_mask, base + "_pred_mask.pgm");
      write_gray_pgm(ep.query.first->values, cfg.image_size, cfg.image_size, base + "_query.pgm");
      write_mask_pgm(res.query_mask_small, base + "_query_mask.pgm");
    }
  }
  if (!opt.out_dir.empty()) {
    write_records_csv(opt.out_dir + "/eval_records.csv", records);
    write_summary_csv(opt.out_dir + "/summary.csv", aggregate(records));
  }
  return records;
}

}  // namespace geoproto
