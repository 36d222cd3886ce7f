// Acceptance suite: each criterion prints one pass/fail line.
// Run with criterion numbers as arguments, or no arguments for all ten.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "geoproto/gradcheck.hpp"
#include "geoproto/prior.hpp"
#include "geoproto/trainer.hpp"

using namespace geoproto;

namespace {

std::string g_detail;

std::string tmp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("geoproto_acceptance_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::vector<char> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

TensorPtr rand_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi,
                      bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  auto t = tensor(std::move(shape), 0.0, requires_grad);
  for (auto& v : t->values) v = dist(rng);
  return t;
}

BinaryMask rand_mask(int h, int w, double p_fg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  BinaryMask m(h, w);
  for (auto& b : m.bits) b = dist(rng) < p_fg ? 1 : 0;
  return m;
}

BinPrediction pred_from_logits(Graph& g, TensorPtr logits) {
  BinPrediction p;
  p.logits = logits;
  p.probs = g.softmax(logits, 0);
  p.num_bins = logits->shape[0];
  p.height = logits->shape[1];
  p.width = logits->shape[2];
  int plane = p.height * p.width;
  p.hard.assign(static_cast<size_t>(plane), 0);
  for (int i = 0; i < plane; ++i) {
    int best = 0;
    for (int k = 1; k < p.num_bins; ++k)
      if (logits->values[k * plane + i] > logits->values[best * plane + i]) best = k;
    p.hard[static_cast<size_t>(i)] = best;
  }
  return p;
}

// ---------- criterion 1 ----------

bool criterion_edt_oracle() {
  std::mt19937_64 rng(20260801);
  int checked = 0;
  double worst = 0.0;
  while (checked < 100) {
    auto mask = rand_mask(32, 32, 0.25 + 0.25 * (checked % 3), rng);
    bool any_bg = false;
    for (auto b : mask.bits) any_bg |= b == 0;
    if (!any_bg) continue;
    ++checked;
    auto fast = edt(mask);
    std::vector<std::pair<int, int>> bg;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (!mask.at(y, x)) bg.emplace_back(y, x);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        double expect = 0.0;
        if (mask.at(y, x)) {
          double best = 1e300;
          for (auto [by, bx] : bg) {
            double dy = y - by, dx = x - bx;
            best = std::min(best, dy * dy + dx * dx);
          }
          expect = std::sqrt(best);
        }
        worst = std::max(worst, std::abs(fast.at(y, x) - expect));
      }
    }
  }
  g_detail = "100 masks, max |two-pass - brute force| = " + fmt_g(worst);
  return worst <= 1e-9;
}

// ---------- criterion 2 ----------

bool criterion_binmap_law() {
  BinaryMask square(9, 9);
  for (int y = 2; y <= 6; ++y)
    for (int x = 2; x <= 6; ++x) square.set(y, x, true);
  auto bm = quantise(edt(square), square, 3);
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 9; ++x) {
      int expect = -1;
      if (square.at(y, x))
        expect = std::min(std::min(y - 2, 6 - y), std::min(x - 2, 6 - x));
      if (bm.at(y, x) != expect) {
        g_detail = "ring fixture mismatch";
        return false;
      }
    }
  }

  std::mt19937_64 rng(77);
  int cases = 0;
  while (cases < 200) {
    auto mask = rand_mask(12, 12, 0.5, rng);
    if (mask.count() == 0 || mask.count() == 144) continue;
    ++cases;
    auto field = edt(mask);
    int K = 2 + static_cast<int>(rng() % 9);
    auto base = quantise(field, mask, K);
    std::uniform_real_distribution<double> su(0.01, 100.0);
    DistanceField scaled = field;
    double s = su(rng);
    for (auto& v : scaled.values) v *= s;
    if (quantise(scaled, mask, K).bins != base.bins) {
      g_detail = "scale invariance violated";
      return false;
    }
    std::vector<std::pair<double, int>> fg;
    for (size_t i = 0; i < mask.bits.size(); ++i)
      if (mask.bits[i]) fg.emplace_back(field.values[i], base.bins[i]);
    std::sort(fg.begin(), fg.end());
    for (size_t i = 1; i < fg.size(); ++i) {
      if (fg[i - 1].second > fg[i].second) {
        g_detail = "monotonicity violated";
        return false;
      }
    }
  }
  g_detail = "ring fixture exact; 200 random cases monotone and scale invariant";
  return true;
}

// ---------- criterion 3 ----------

bool criterion_gradients() {
  std::mt19937_64 rng(424242);
  double worst_overall = 0.0;

  auto check = [&](const std::string& name,
                   const std::function<TensorPtr(Graph&, TensorPtr)>& make, Shape shape,
                   double lo, double hi) {
    for (int t = 0; t < 20; ++t) {
      auto x = rand_tensor(shape, rng, lo, hi);
      Graph g;
      TensorPtr y = make(g, x);
      std::vector<double> w(y->values.size());
      for (size_t i = 0; i < w.size(); ++i) w[i] = 0.25 + 0.13 * static_cast<double>(i % 5);
      TensorPtr loss = y->numel() == 1 ? y : g.weighted_sum(y, w);
      g.backward(loss);
      auto numeric = finite_diff_grad(
          [&](const Tensor& probe) {
            Graph g2(false);
            auto px = std::make_shared<Tensor>(probe);
            TensorPtr py = make(g2, px);
            if (py->numel() == 1) return py->values[0];
            double acc = 0.0;
            for (size_t i = 0; i < py->values.size(); ++i) acc += w[i] * py->values[i];
            return acc;
          },
          *x, 1e-4);
      double err = max_grad_rel_err(x->grad, numeric);
      worst_overall = std::max(worst_overall, err);
      if (err >= 1e-3) {
        g_detail = name + " instance " + std::to_string(t) + " rel err " + fmt_g(err);
        return false;
      }
    }
    return true;
  };

  auto other34 = rand_tensor({3, 4}, rng, -1, 1, false);
  auto kernel = rand_tensor({3, 2, 3, 3}, rng, -0.7, 0.7, false);
  auto image = rand_tensor({2, 6, 6}, rng, -1, 1, false);
  auto w45 = rand_tensor({4, 5}, rng, -1, 1, false);
  auto b4 = rand_tensor({4}, rng, -1, 1, false);
  auto vec5 = rand_tensor({5}, rng, -1, 1, false);
  auto tail3 = rand_tensor({3}, rng, -1, 1, false);
  auto img322 = rand_tensor({3, 2, 2}, rng, -1, 1, false);
  std::vector<std::uint8_t> mask22 = {1, 0, 1, 1};
  auto cos_other = rand_tensor({6}, rng, -1, 1, false);
  std::vector<double> ws = {0.2, -0.4, 1.1, 0.6, -0.9, 0.3, 0.0, 0.8, 0.5, -1.2, 0.7, 0.1};

  bool ok =
      check("add", [&](Graph& g, TensorPtr x) { return g.add(x, other34); }, {3, 4}, -1, 1) &&
      check("sub", [&](Graph& g, TensorPtr x) { return g.sub(other34, x); }, {3, 4}, -1, 1) &&
      check("mul", [&](Graph& g, TensorPtr x) { return g.mul(x, other34); }, {3, 4}, -1, 1) &&
      check("scale", [&](Graph& g, TensorPtr x) { return g.scale(x, -1.7); }, {3, 4}, -1, 1) &&
      check("offset", [&](Graph& g, TensorPtr x) { return g.offset(x, 2.1); }, {3, 4}, -1, 1) &&
      check("relu", [&](Graph& g, TensorPtr x) { return g.relu(x); }, {3, 4}, 0.15, 1.2) &&
      check("softplus", [&](Graph& g, TensorPtr x) { return g.softplus(x); }, {3, 4}, -2, 2) &&
      check("sum", [&](Graph& g, TensorPtr x) { return g.sum(x); }, {3, 4}, -1, 1) &&
      check("mean", [&](Graph& g, TensorPtr x) { return g.mean(x); }, {3, 4}, -1, 1) &&
      check("weighted_sum", [&](Graph& g, TensorPtr x) { return g.weighted_sum(x, ws); }, {3, 4},
            -1, 1) &&
      check("concat", [&](Graph& g, TensorPtr x) { return g.concat(x, tail3); }, {5}, -1, 1) &&
      check("linear_x", [&](Graph& g, TensorPtr x) { return g.linear(w45, x, b4); }, {5}, -1, 1) &&
      check("linear_W", [&](Graph& g, TensorPtr x) { return g.linear(x, vec5, nullptr); }, {4, 5},
            -1, 1) &&
      check("bias_add", [&](Graph& g, TensorPtr x) { return g.bias_add(img322, x); }, {3}, -1, 1) &&
      check("softmax", [&](Graph& g, TensorPtr x) { return g.softmax(x, 0); }, {5, 2, 2}, -2, 2) &&
      check("conv2d_x", [&](Graph& g, TensorPtr x) { return g.conv2d(x, kernel, 1, 1); }, {2, 6, 6},
            -1, 1) &&
      check("conv2d_x_s2", [&](Graph& g, TensorPtr x) { return g.conv2d(x, kernel, 2, 1); },
            {2, 7, 7}, -1, 1) &&
      check("conv2d_k", [&](Graph& g, TensorPtr x) { return g.conv2d(image, x, 1, 0); },
            {3, 2, 3, 3}, -1, 1) &&
      check("masked_mean", [&](Graph& g, TensorPtr x) { return g.masked_mean(x, mask22); },
            {3, 2, 2}, -1, 1) &&
      check("cosine", [&](Graph& g, TensorPtr x) { return g.cosine_similarity(x, cos_other); },
            {6}, 0.2, 1.3);
  if (!ok) return false;

  BinMap gt;
  gt.height = 4;
  gt.width = 4;
  gt.num_bins = 4;
  gt.bins.assign(16, -1);
  for (int i = 0; i < 16; ++i)
    if (i % 3 != 1) gt.bins[static_cast<size_t>(i)] = i % 4;
  ok = check("loss_cls",
             [&](Graph& g, TensorPtr x) { return loss_cls(g, pred_from_logits(g, x), gt); },
             {4, 4, 4}, -1.5, 1.5) &&
       check("loss_dist",
             [&](Graph& g, TensorPtr x) { return loss_dist(g, pred_from_logits(g, x), gt); },
             {4, 4, 4}, -1.5, 1.5);
  if (!ok) return false;

  auto protoA = rand_tensor({3}, rng, -1, 1, false);
  auto protoB = rand_tensor({3}, rng, -1, 1, false);
  auto proto2 = rand_tensor({2}, rng, -1, 1, false);
  std::vector<double> gates(2 * 9);
  for (auto& v : gates) v = 0.4 + 0.6 * std::uniform_real_distribution<double>(0, 1)(rng);
  BinaryMask gt_mask(3, 3);
  for (int i = 0; i < 4; ++i) gt_mask.bits[static_cast<size_t>(i * 2)] = 1;
  auto sbg = rand_tensor({3, 3}, rng, -0.6, 0.6, false);
  ok = check("score_feat", [&](Graph& g, TensorPtr x) { return score(g, x, {protoA, protoB}); },
             {3, 3, 3}, 0.2, 1.2) &&
       check("score_gated",
             [&](Graph& g, TensorPtr x) { return score(g, x, {protoA, protoB}, 1e-8, &gates); },
             {3, 3, 3}, 0.2, 1.2) &&
       check("score_proto", [&](Graph& g, TensorPtr x) { return score(g, image, {x, proto2}); },
             {2}, 0.2, 1.2) &&
       check("seg_loss",
             [&](Graph& g, TensorPtr x) {
               ScoreMaps maps;
               maps.s_fg = x;
               maps.s_bg = sbg;
               return seg_loss(g, maps, gt_mask, 6.0);
             },
             {3, 3}, -0.6, 0.6);
  if (!ok) return false;

  // full episode objective against finite differences on sampled
  // parameter coordinates. The check needs a locally smooth, well
  // conditioned operating point: the production near-zero MLP init puts
  // every ReLU kink inside the finite-difference window and all-dead
  // feature pixels sit on the cosine eps clamp, so the probe model gets
  // positive conv biases plus O(0.5) MLP weights. Probes whose +-h
  // evaluations flip any hard decision (argmax boundaries of the predicted
  // mask, bin argmaxes, or the alignment pooling) are resampled.
  TrainConfig cfg;
  cfg.channels = 6;
  cfg.bins = 3;
  cfg.grid = 2;
  cfg.mlp_hidden = 3;
  cfg.image_size = 16;
  cfg.holdout_episodes = 0;
  auto sampler = cfg.sampler();
  ShapeFamily disc = ShapeFamily::preset(ShapeKind::kCompactEllipse);
  disc.radius_lo = 3.0;
  disc.radius_hi = 5.0;
  sampler.train_families = {disc};
  sampler.eval_families = {disc};

  auto fingerprint = [&](ModelParams& params, const Episode& ep) {
    auto r = run_episode(params, ep, cfg, RunMode::kEval);
    size_t h = 1469598103934665603ULL;
    auto mix = [&h](int v) { h = (h ^ static_cast<size_t>(v + 7)) * 1099511628211ULL; };
    for (auto b : r.pred_mask.bits) mix(b);
    for (auto b : r.support_pred_bins.bins) mix(b);
    return std::pair<double, size_t>{r.losses.total->values[0], h};
  };

  int checked_instances = 0, skipped_probes = 0;
  for (int t = 0; checked_instances < 20 && t < 40; ++t) {
    Episode ep = sampler.sample(Split::kTrain, derive_seed(5150, "gradsuite", t));
    ModelParams params = ModelParams::init(cfg.model_config(), 1000 + t);
    {
      std::uniform_real_distribution<double> bias_u(0.05, 0.15), mlp_u(-0.5, 0.5);
      for (auto& layer : params.encoder.layers)
        for (auto& v : layer.bias->values) v = bias_u(rng);
      for (auto* t2 : {&params.osb.c1.bias, &params.osb.c2.bias})
        for (auto& v : (*t2)->values) v = bias_u(rng);
      for (auto* t2 : {&params.gape.W1, &params.gape.b1, &params.gape.W2, &params.gape.b2})
        for (auto& v : (*t2)->values) v = mlp_u(rng);
    }
    run_episode(params, ep, cfg, RunMode::kTrain);
    auto named = params.named_tensors();
    ++checked_instances;
    for (int probe_i = 0; probe_i < 6; ++probe_i) {
      auto& [name, tn] = named[rng() % named.size()];
      int ci = static_cast<int>(rng() % tn->values.size());
      double analytic = tn->grad.empty() ? 0.0 : tn->grad[static_cast<size_t>(ci)];
      double v0 = tn->values[static_cast<size_t>(ci)];
      auto fd_at = [&](double h) {
        tn->values[static_cast<size_t>(ci)] = v0 + h;
        auto [fp, hp] = fingerprint(params, ep);
        tn->values[static_cast<size_t>(ci)] = v0 - h;
        auto [fm, hm] = fingerprint(params, ep);
        tn->values[static_cast<size_t>(ci)] = v0;
        return std::pair<double, bool>{(fp - fm) / (2.0 * h), hp != hm};
      };
      auto [numeric, flipped] = fd_at(1e-4);
      auto [half, flipped_half] = fd_at(0.5e-4);
      // validity guard: a ReLU kink or argmax boundary inside the window
      // makes the finite difference inconsistent with itself; a wrong
      // analytic gradient stays wrong at every step size and still fails
      if (flipped || flipped_half || grad_rel_err(numeric, half) > 5e-4) {
        ++skipped_probes;
        --probe_i;
        if (skipped_probes > 300) {
          g_detail = "too many non-smooth probe windows";
          return false;
        }
        continue;
      }
      double err = grad_rel_err(analytic, numeric);
      worst_overall = std::max(worst_overall, err);
      if (err >= 1e-3) {
        g_detail = "episode loss @" + name + "[" + std::to_string(ci) + "] rel err " + fmt_g(err);
        return false;
      }
    }
  }

  g_detail = "all differentiable ops + episode loss, 20 instances each; worst rel err " +
             fmt_g(worst_overall) + ", " + std::to_string(skipped_probes) +
             " boundary probes resampled";
  return true;
}

// ---------- criterion 4 ----------

bool criterion_loss_cases() {
  Graph g;
  BinMap one_px;
  one_px.height = one_px.width = 1;
  one_px.num_bins = 10;
  one_px.bins = {4};
  double lcls = loss_cls(g, pred_from_logits(g, tensor({10, 1, 1}, 0.0)), one_px)->values[0];
  if (std::abs(lcls - 0.5 * std::log(10.0)) > 1e-6) {
    g_detail = "L_cls uniform value " + fmt_g(lcls);
    return false;
  }
  std::vector<double> vals(10);
  for (int k = 0; k < 10; ++k) vals[static_cast<size_t>(k)] = std::log(k == 7 ? 0.8 : 0.2 / 9.0);
  double ldist =
      loss_dist(g, pred_from_logits(g, tensor({10, 1, 1}, vals)), one_px)->values[0];
  if (std::abs(ldist - 0.5 * 0.3 * (-std::log(0.2))) > 1e-6) {
    g_detail = "L_dist hand value " + fmt_g(ldist);
    return false;
  }

  std::mt19937_64 rng(99);
  BinMap gt;
  gt.height = 2;
  gt.width = 3;
  gt.num_bins = 4;
  gt.bins = {0, 2, -1, 3, 1, 0};
  int plane = 6;
  auto correct = tensor({4, 2, 3}, 0.0);
  for (int i = 0; i < plane; ++i)
    if (gt.bins[static_cast<size_t>(i)] >= 0)
      correct->values[static_cast<size_t>(gt.bins[static_cast<size_t>(i)]) * plane + i] = 500.0;
  if (loss_cls(g, pred_from_logits(g, correct), gt)->values[0] > 1e-12) {
    g_detail = "L_cls not ~0 at one-hot correct";
    return false;
  }
  if (loss_dist(g, pred_from_logits(g, correct), gt)->values[0] != 0.0) {
    g_detail = "L_dist not 0 at zero gap";
    return false;
  }
  auto wrong = tensor({4, 2, 3}, correct->values);
  wrong->values[static_cast<size_t>(1) * plane + 0] = 600.0;
  if (loss_cls(g, pred_from_logits(g, wrong), gt)->values[0] <= 0.0 ||
      loss_dist(g, pred_from_logits(g, wrong), gt)->values[0] <= 0.0) {
    g_detail = "losses not positive at a wrong prediction";
    return false;
  }

  auto base_logits = rand_tensor({4, 2, 3}, rng, -1, 1, false);
  double c0 = loss_cls(g, pred_from_logits(g, base_logits), gt)->values[0];
  double d0 = loss_dist(g, pred_from_logits(g, base_logits), gt)->values[0];
  auto moved = tensor(base_logits->shape, base_logits->values);
  for (int k = 0; k < 4; ++k) moved->values[static_cast<size_t>(k) * plane + 2] += 11.0;
  if (std::abs(loss_cls(g, pred_from_logits(g, moved), gt)->values[0] - c0) > 1e-12 ||
      std::abs(loss_dist(g, pred_from_logits(g, moved), gt)->values[0] - d0) > 1e-12) {
    g_detail = "losses depend on background logits";
    return false;
  }
  g_detail = "hand values within 1e-6; zero/positivity and background independence hold";
  return true;
}

// ---------- criterion 5 ----------

bool criterion_enrichment_noop() {
  TrainConfig off;
  off.channels = 16;
  off.bins = 10;
  off.grid = 4;
  off.image_size = 32;
  off.enrichment = false;
  TrainConfig add = off;
  add.enrichment = true;
  add.fusion = FusionMode::kAdditive;
  TrainConfig gate = off;
  gate.enrichment = true;
  gate.fusion = FusionMode::kScaleGate;

  ModelParams p_off = ModelParams::init(off.model_config(), 4242);
  ModelParams p_add = ModelParams::init(add.model_config(), 4242);
  ModelParams p_gate = ModelParams::init(gate.model_config(), 4242);

  auto sampler = off.sampler();
  for (int t = 0; t < 30; ++t) {
    Episode ep = sampler.sample(Split::kEval, derive_seed(888, "noop", t));
    auto r_off = run_episode(p_off, ep, off, RunMode::kEval);
    auto r_add = run_episode(p_add, ep, add, RunMode::kEval);
    auto r_gate = run_episode(p_gate, ep, gate, RunMode::kEval);
    if (!(r_add.pred_mask == r_off.pred_mask)) {
      g_detail = "additive mask differs at episode " + std::to_string(t);
      return false;
    }
    if (!(r_gate.pred_mask == r_off.pred_mask)) {
      g_detail = "scale-gate mask differs at episode " + std::to_string(t);
      return false;
    }
  }
  g_detail = "30 episodes: additive and scale-gate masks identical to enrichment-off";
  return true;
}

// ---------- criterion 6 ----------

bool criterion_osb_convergence() {
  TrainConfig cfg;
  cfg.bins = 5;
  cfg.episodes = 2000;
  cfg.checkpoint_every = 500;
  cfg.holdout_episodes = 24;
  auto dir = tmp_dir("c6");
  auto result = train(cfg, 20260806, dir);
  std::filesystem::remove_all(dir);

  std::vector<double> mae;
  std::ostringstream curve;
  for (auto& [ep, m] : result.holdout_mae) {
    mae.push_back(m);
    curve << " " << ep << ":" << fmt_g(m);
  }
  if (mae.size() < 4) {
    g_detail = "too few checkpoints";
    return false;
  }
  std::vector<double> smooth;
  for (size_t i = 0; i + 3 <= mae.size(); ++i)
    smooth.push_back((mae[i] + mae[i + 1] + mae[i + 2]) / 3.0);
  bool monotone = true;
  for (size_t i = 1; i < smooth.size(); ++i)
    if (smooth[i] > smooth[i - 1] + 1e-12) monotone = false;
  g_detail = "held-out MAE" + curve.str() +
             (monotone ? "; smoothed curve non-increasing" : "; smoothed curve NOT monotone");
  return monotone && mae.back() < 1.0;
}

// ---------- criterion 7 ----------

bool criterion_ablation_direction() {
  TrainConfig base;
  base.episodes = 1500;
  base.checkpoint_every = 1500;
  base.holdout_episodes = 0;
  base.eval_episodes = 200;

  struct Cell {
    std::string name;
    TrainConfig cfg;
    std::vector<EvalRecord> records;
    double mean_dsc = 0.0;
  };
  std::vector<Cell> cells;
  {
    TrainConfig off = base;
    off.enrichment = false;
    off.osb_loss = false;
    cells.push_back({"baseline", off, {}, 0.0});
    TrainConfig pe = off;
    pe.position_embedding = true;
    cells.push_back({"pe", pe, {}, 0.0});
    TrainConfig geoe = off;
    geoe.enrichment = true;
    cells.push_back({"geoe", geoe, {}, 0.0});
    TrainConfig osbl = off;
    osbl.osb_loss = true;
    cells.push_back({"osbl", osbl, {}, 0.0});
    TrainConfig full = off;
    full.enrichment = true;
    full.osb_loss = true;
    cells.push_back({"full", full, {}, 0.0});
  }

  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      auto dir = tmp_dir("c7_" + cells[i].name);
      auto tr = train(cells[i].cfg, 20260807, dir);
      ModelParams params = ModelParams::load(tr.final_checkpoint);
      EvalOptions opt;
      opt.domain = "target";
      opt.n_episodes = cells[i].cfg.eval_episodes;
      opt.seed = 31337;  // shared seed grid across cells
      cells[i].records = evaluate(params, cells[i].cfg, opt);
      double acc = 0.0;
      for (auto& r : cells[i].records) acc += r.dsc;
      cells[i].mean_dsc = acc / cells[i].records.size();
      std::filesystem::remove_all(dir);
    }
  };
  unsigned n_threads =
      std::max(1u, std::min(static_cast<unsigned>(cells.size()), std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::ostringstream os;
  for (auto& c : cells) os << " " << c.name << "=" << fmt_g(c.mean_dsc);
  auto [delta, n] = paired_dsc_delta(cells[4].records, cells[0].records);
  os << " | paired full-baseline delta " << fmt_g(delta) << " on " << n << " episodes";
  g_detail = os.str();

  if (n < 200) return false;
  if (delta < 0.03) return false;  // three DSC points
  for (size_t i = 1; i <= 3; ++i)
    if (cells[4].mean_dsc < cells[i].mean_dsc - 0.01) return false;  // one-point band
  return true;
}

// ---------- criterion 8 ----------

bool criterion_prior() {
  std::vector<ShapeFamily> families = {ShapeFamily::preset(ShapeKind::kCompactEllipse),
                                       ShapeFamily::preset(ShapeKind::kAnnulus),
                                       ShapeFamily::preset(ShapeKind::kIrregularBlob)};
  auto report = run_prior_validation(families, 10, 64, 500, 20260808);

  std::vector<double> within;
  for (const auto& f : report.families)
    within.insert(within.end(), f.within_bc.begin(), f.within_bc.end());
  double within_median = PriorReport::median_of(within);
  std::vector<double> cross_medians;
  for (const auto& [pair, m] : report.cross_median) cross_medians.push_back(m);
  double cross_median = PriorReport::median_of(cross_medians);

  double annulus_lower = 0.0, disc_lower = 0.0;
  for (const auto& f : report.families) {
    if (f.family == "annulus") annulus_lower = lower_half_mass(f.mean_hist);
    if (f.family == "ellipse") disc_lower = lower_half_mass(f.mean_hist);
  }
  std::ostringstream os;
  os << "within median BC " << fmt_g(within_median) << " vs cross " << fmt_g(cross_median)
     << "; annulus lower-half " << fmt_g(annulus_lower) << ", disc " << fmt_g(disc_lower);
  g_detail = os.str();
  return within_median > cross_median && annulus_lower >= 0.8 && disc_lower < 0.8;
}

// ---------- criterion 9 ----------

bool criterion_determinism() {
  const std::string cli = GEOPROTO_CLI_PATH;
  auto dir = tmp_dir("c9");
  const std::string sets =
      " --set channels=8 --set bins=5 --set grid=4 --set mlp_hidden=4 --set image_size=32"
      " --set holdout_episodes=2 --set episodes=6 --set checkpoint_every=3";
  auto sh = [&](const std::string& cmd) {
    int status = std::system((cli + " " + cmd + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  for (const char* run : {"a", "b"}) {
    if (sh("train --seed 17" + sets + " --out " + dir + "/t" + run) != 0) {
      g_detail = "train command failed";
      return false;
    }
    if (sh(std::string("eval --ckpt ") + dir + "/t" + run + "/ck_00006.gprt --episodes 5" + sets +
           " --seed 23 --out " + dir + "/e" + run) != 0) {
      g_detail = "eval command failed";
      return false;
    }
  }
  for (const char* f :
       {"ck_00000.gprt", "ck_00003.gprt", "ck_00006.gprt", "train_log.csv", "holdout.csv"}) {
    if (file_bytes(dir + "/ta/" + f) != file_bytes(dir + "/tb/" + f)) {
      g_detail = std::string("train outputs differ: ") + f;
      return false;
    }
  }
  for (const char* f : {"eval_records.csv", "summary.csv"}) {
    if (file_bytes(dir + "/ea/" + f) != file_bytes(dir + "/eb/" + f)) {
      g_detail = std::string("eval outputs differ: ") + f;
      return false;
    }
  }
  std::filesystem::remove_all(dir);
  g_detail = "checkpoints and CSVs byte-identical across repeated train and eval runs";
  return true;
}

// ---------- criterion 10 ----------

bool criterion_variant_parity() {
  TrainConfig base;
  base.channels = 16;
  base.bins = 10;
  base.grid = 4;
  base.image_size = 32;

  TrainConfig bg = base;
  bg.bg_enrich = true;
  ModelParams p_base = ModelParams::init(base.model_config(), 777);
  ModelParams p_bg = ModelParams::init(bg.model_config(), 777);
  ModelParams p_bg_zero = ModelParams::init(bg.model_config(), 777);
  std::fill(p_bg_zero.bg_gape.W1->values.begin(), p_bg_zero.bg_gape.W1->values.end(), 0.0);
  std::fill(p_bg_zero.bg_gape.W2->values.begin(), p_bg_zero.bg_gape.W2->values.end(), 0.0);

  TrainConfig qr = base;
  qr.query_reweight_tau = 1e12;

  auto sampler = base.sampler();
  for (int t = 0; t < 25; ++t) {
    Episode ep = sampler.sample(Split::kEval, derive_seed(555, "parity", t));
    auto r_base = run_episode(p_base, ep, base, RunMode::kEval);
    auto r_bg = run_episode(p_bg, ep, bg, RunMode::kEval);
    auto r_bg_zero = run_episode(p_bg_zero, ep, bg, RunMode::kEval);
    auto r_qr = run_episode(p_base, ep, qr, RunMode::kEval);
    if (!(r_bg_zero.pred_mask == r_base.pred_mask) ||
        r_bg_zero.losses.l_seg->values[0] != r_base.losses.l_seg->values[0]) {
      g_detail = "zero-MLP BG-enrich diverges from the default pipeline";
      return false;
    }
    if (!(r_bg.pred_mask == r_base.pred_mask)) {
      g_detail = "near-zero BG-enrich changes predicted masks";
      return false;
    }
    if (!(r_qr.pred_mask == r_base.pred_mask)) {
      g_detail = "query re-weighting at tau->inf changes predicted masks";
      return false;
    }
    if (std::abs(r_qr.losses.l_seg->values[0] - r_base.losses.l_seg->values[0]) > 1e-9) {
      g_detail = "query re-weighting at tau->inf shifts the segmentation loss";
      return false;
    }
  }
  g_detail = "25 episodes: BG-enrich and query re-weighting identity limits match the default";
  return true;
}

struct Criterion {
  int id;
  const char* name;
  bool (*fn)();
};

const Criterion kCriteria[] = {
    {1, "EDT oracle equivalence", criterion_edt_oracle},
    {2, "bin-map law", criterion_binmap_law},
    {3, "gradient suite", criterion_gradients},
    {4, "loss zero/positivity and hand values", criterion_loss_cases},
    {5, "enrichment no-op at initialisation", criterion_enrichment_noop},
    {6, "OSB convergence", criterion_osb_convergence},
    {7, "ablation direction", criterion_ablation_direction},
    {8, "geometric-prior validation", criterion_prior},
    {9, "determinism", criterion_determinism},
    {10, "appendix-variant parity", criterion_variant_parity},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  bool all_ok = true;
  for (const auto& c : kCriteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    g_detail.clear();
    bool ok = false;
    try {
      ok = c.fn();
    } catch (const std::exception& e) {
      g_detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", c.id, c.name,
                g_detail.empty() ? "" : " -- ", g_detail.c_str());
    std::fflush(stdout);
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 1;
}
