// Command-line entry point for the geometry-aware few-shot segmentation
// pipeline: training, evaluation, ablation sweeps, geometric-prior
// validation and episode export.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "geoproto/config.hpp"
#include "geoproto/prior.hpp"
#include "geoproto/svg.hpp"
#include "geoproto/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::string timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

std::string default_out_dir(const std::string& cmd, std::uint64_t seed) {
  return "runs/" + cmd + "-" + timestamp() + "-s" + std::to_string(seed);
}

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 7;
  std::string out_dir;

  geoproto::RunConfig load() const {
    geoproto::RunConfig cfg = config_path.empty() ? geoproto::RunConfig()
                                                  : geoproto::RunConfig::from_file(config_path);
    for (const auto& kv : sets) cfg.set_pair(kv);
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "configuration file (key = value lines)");
  cmd->add_option("--set", args.sets, "override one key, e.g. --set episodes=100")
      ->take_all();
  cmd->add_option("--seed", args.seed, "master seed");
  cmd->add_option("--out", args.out_dir, "output directory (default: runs/<cmd>-<time>-s<seed>)");
}

int cmd_train(const CommonArgs& args) {
  geoproto::RunConfig cfg = args.load();
  geoproto::TrainConfig tc = cfg.train_config();
  std::string out = args.out_dir.empty() ? default_out_dir("train", args.seed) : args.out_dir;
  std::filesystem::create_directories(out);
  cfg.write_echo(out + "/config.echo");
  auto result = geoproto::train(tc, args.seed, out);
  std::cout << "trained " << tc.episodes << " episodes, " << result.checkpoints.size()
            << " checkpoints under " << out << "\n";
  return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& ckpt, int episodes,
             const std::string& domain, bool export_maps) {
  geoproto::RunConfig cfg = args.load();
  geoproto::TrainConfig tc = cfg.train_config();
  geoproto::ModelParams params = geoproto::ModelParams::load(ckpt);
  // structural keys travel with the checkpoint
  tc.channels = params.config.channels;
  tc.bins = params.config.bins;
  tc.mlp_hidden = params.config.mlp_hidden;
  tc.mlp_bias = params.config.mlp_bias;
  tc.enrichment = params.config.enrichment;
  tc.osb_loss = params.config.osb_loss;
  tc.position_embedding = params.config.position_embedding;
  tc.bg_enrich = params.config.bg_enrich;
  tc.fusion = params.config.fusion;
  tc.validate();

  geoproto::EvalOptions opt;
  opt.domain = domain;
  opt.n_episodes = episodes > 0 ? episodes : tc.eval_episodes;
  opt.seed = args.seed;
  opt.export_maps = export_maps;
  opt.out_dir = args.out_dir.empty() ? default_out_dir("eval", args.seed) : args.out_dir;
  std::filesystem::create_directories(opt.out_dir);
  cfg.write_echo(opt.out_dir + "/config.echo");

  auto records = geoproto::evaluate(params, tc, opt);
  double mean = 0.0;
  for (const auto& r : records) mean += r.dsc;
  mean /= records.size();
  std::cout << "evaluated " << records.size() << " episodes on domain '" << opt.domain
            << "': mean DSC " << geoproto::fmt_g(mean) << " (outputs under " << opt.out_dir
            << ")\n";
  return kExitOk;
}

struct AblateCell {
  std::string name;
  geoproto::TrainConfig config;
  bool is_baseline = false;
  // filled by the run
  bool ok = false;
  std::string error;
  std::vector<geoproto::EvalRecord> records;
};

std::vector<AblateCell> build_cells(const std::string& sweep, std::vector<std::string> values,
                                    const geoproto::TrainConfig& base) {
  std::vector<AblateCell> cells;
  auto push = [&cells](const std::string& name, geoproto::TrainConfig tc, bool baseline = false) {
    AblateCell cell;
    cell.name = name;
    cell.config = std::move(tc);
    cell.is_baseline = baseline;
    cells.push_back(std::move(cell));
  };
  if (sweep == "components") {
    geoproto::TrainConfig off = base;
    off.enrichment = false;
    off.osb_loss = false;
    off.position_embedding = false;
    push("baseline", off, true);
    geoproto::TrainConfig pe = off;
    pe.position_embedding = true;
    push("pe", pe);
    geoproto::TrainConfig geoe = off;
    geoe.enrichment = true;
    push("geoe", geoe);
    geoproto::TrainConfig osbl = off;
    osbl.osb_loss = true;
    push("osbl", osbl);
    geoproto::TrainConfig full = off;
    full.enrichment = true;
    full.osb_loss = true;
    push("full", full);
    return cells;
  }
  if (sweep == "K") {
    if (values.empty()) values = {"5", "10", "15", "20"};
    for (const auto& v : values) {
      geoproto::TrainConfig tc = base;
      tc.bins = std::stoi(v);
      push("K" + v, tc, tc.bins == base.bins);
    }
  } else if (sweep == "G") {
    if (values.empty()) values = {"4", "8", "16"};
    for (const auto& v : values) {
      geoproto::TrainConfig tc = base;
      tc.grid = std::stoi(v);
      push("G" + v, tc, tc.grid == base.grid);
    }
  } else if (sweep == "fusion") {
    if (values.empty()) values = {"additive", "concat_proj", "scale_gate"};
    for (const auto& v : values) {
      geoproto::TrainConfig tc = base;
      tc.fusion = geoproto::fusion_mode_from_string(v);
      push(v, tc, tc.fusion == base.fusion);
    }
  } else {
    throw geoproto::ConfigError("ablate: unknown sweep '" + sweep +
                                "' (expected components, K, G or fusion)");
  }
  if (!cells.empty() && std::none_of(cells.begin(), cells.end(),
                                     [](const AblateCell& c) { return c.is_baseline; }))
    cells.front().is_baseline = true;
  return cells;
}

int cmd_ablate(const CommonArgs& args, const std::string& sweep,
               const std::vector<std::string>& values, int jobs) {
  geoproto::RunConfig cfg = args.load();
  geoproto::TrainConfig base = cfg.train_config();
  std::string out = args.out_dir.empty() ? default_out_dir("ablate", args.seed) : args.out_dir;
  std::filesystem::create_directories(out);
  cfg.write_echo(out + "/config.echo");

  std::vector<AblateCell> cells = build_cells(sweep, values, base);
  std::atomic<size_t> next{0};
  std::mutex io_mutex;
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      AblateCell& cell = cells[i];
      try {
        cell.config.validate();
        std::string cell_dir = out + "/" + cell.name;
        auto tr = geoproto::train(cell.config, args.seed, cell_dir);
        geoproto::ModelParams params = geoproto::ModelParams::load(tr.final_checkpoint);
        geoproto::EvalOptions opt;
        opt.domain = cell.config.target_domain;
        opt.n_episodes = cell.config.eval_episodes;
        opt.seed = geoproto::derive_seed(args.seed, "ablate_eval");
        opt.out_dir = cell_dir;
        cell.records = geoproto::evaluate(params, cell.config, opt);
        cell.ok = true;
        std::lock_guard<std::mutex> lock(io_mutex);
        std::cout << "cell " << cell.name << " done\n";
      } catch (const std::exception& e) {
        cell.error = e.what();
        std::lock_guard<std::mutex> lock(io_mutex);
        std::cerr << "cell " << cell.name << " failed: " << e.what() << "\n";
      }
    }
  };
  int n_threads = std::max(1, jobs);
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  const AblateCell* baseline = nullptr;
  for (const auto& c : cells)
    if (c.is_baseline && c.ok) baseline = &c;

  std::ofstream table(out + "/cells.csv");
  table << "cell,status,n,mean_dsc,median_dsc,std_dsc,delta_vs_baseline,paired_n\n";
  bool any_failed = false;
  for (const auto& c : cells) {
    if (!c.ok) {
      any_failed = true;
      table << c.name << ",error,0,,,,,\n";
      continue;
    }
    std::vector<double> d;
    for (const auto& r : c.records) d.push_back(r.dsc);
    auto stats = geoproto::detail::stats_of("all", "dsc", d);
    double delta = 0.0;
    int paired_n = 0;
    if (baseline && baseline != &c)
      std::tie(delta, paired_n) = geoproto::paired_dsc_delta(c.records, baseline->records);
    table << c.name << ",ok," << stats.n << "," << geoproto::fmt_g(stats.mean) << ","
          << geoproto::fmt_g(stats.median) << "," << geoproto::fmt_g(stats.stddev) << ","
          << geoproto::fmt_g(delta) << "," << paired_n << "\n";
  }
  std::cout << "ablation table written to " << out << "/cells.csv\n";
  return any_failed ? kExitRuntime : kExitOk;
}

int cmd_validate_prior(const CommonArgs& args, int per_family) {
  geoproto::RunConfig cfg = args.load();
  geoproto::TrainConfig tc = cfg.train_config();
  std::string out = args.out_dir.empty() ? default_out_dir("validate-prior", args.seed)
                                         : args.out_dir;
  std::filesystem::create_directories(out);
  cfg.write_echo(out + "/config.echo");

  std::vector<geoproto::ShapeFamily> families;
  for (const auto& f : tc.eval_families)
    families.push_back(geoproto::ShapeFamily::preset(geoproto::shape_kind_from_string(f)));
  auto report = geoproto::run_prior_validation(families, tc.bins, tc.image_size, per_family,
                                               args.seed);

  std::ofstream hist(out + "/prior_hist.csv");
  hist << "family,bin,mass\n";
  for (const auto& f : report.families) {
    for (int k = 0; k < report.bins; ++k)
      hist << f.family << "," << k << "," << geoproto::fmt_g(f.mean_hist[k]) << "\n";
    geoproto::write_bar_chart_svg(out + "/hist_" + f.family + ".svg",
                                  f.family + " stratum histogram", f.mean_hist);
  }
  std::ofstream bc(out + "/prior_bc.csv");
  bc << "pair,kind,n,median_bc\n";
  for (const auto& f : report.families) {
    bc << f.family << "|" << f.family << ",within," << f.within_bc.size() << ","
       << geoproto::fmt_g(geoproto::PriorReport::median_of(f.within_bc)) << "\n";
    std::cout << "family " << f.family << ": within-family median BC "
              << geoproto::fmt_g(geoproto::PriorReport::median_of(f.within_bc))
              << ", lower-half mass " << geoproto::fmt_g(geoproto::lower_half_mass(f.mean_hist))
              << "\n";
  }
  for (const auto& [pair, median] : report.cross_median) {
    bc << pair << ",cross," << report.episodes_per_family << "," << geoproto::fmt_g(median)
       << "\n";
    std::cout << "cross-family " << pair << ": median BC " << geoproto::fmt_g(median) << "\n";
  }
  std::cout << "prior validation outputs under " << out << "\n";
  return kExitOk;
}

int cmd_export_episodes(const CommonArgs& args, int count, const std::string& split_name) {
  geoproto::RunConfig cfg = args.load();
  geoproto::TrainConfig tc = cfg.train_config();
  std::string out = args.out_dir.empty() ? default_out_dir("export-episodes", args.seed)
                                         : args.out_dir;
  std::filesystem::create_directories(out);
  cfg.write_echo(out + "/config.echo");

  geoproto::Split split;
  if (split_name == "train")
    split = geoproto::Split::kTrain;
  else if (split_name == "eval")
    split = geoproto::Split::kEval;
  else
    throw geoproto::ConfigError("export-episodes: split must be train or eval");

  auto sampler = tc.sampler();
  for (int i = 0; i < count; ++i) {
    std::uint64_t ep_seed = geoproto::derive_seed(args.seed, "export", i);
    geoproto::Episode ep = sampler.sample(split, ep_seed);
    char tag[32];
    std::snprintf(tag, sizeof tag, "ep%04d", i);
    std::string dir = out + "/" + tag;
    std::filesystem::create_directories(dir);
    geoproto::write_gray_pgm(ep.support[0].first->values, tc.image_size, tc.image_size,
                             dir + "/support.pgm");
    geoproto::write_mask_pgm(ep.support[0].second, dir + "/support_mask.pgm");
    geoproto::write_gray_pgm(ep.query.first->values, tc.image_size, tc.image_size,
                             dir + "/query.pgm");
    geoproto::write_mask_pgm(ep.query.second, dir + "/query_mask.pgm");
    std::ofstream manifest(dir + "/manifest.txt");
    manifest << "seed=" << ep.seed << "\n"
             << "family=" << ep.family << "\n"
             << "domain=" << ep.domain << "\n"
             << "split=" << split_name << "\n";
  }
  std::cout << "exported " << count << " episodes under " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geometry-aware few-shot segmentation pipeline"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, ablate_args, prior_args, export_args;

  auto* train_cmd = app.add_subcommand("train", "episodic training run");
  add_common(train_cmd, train_args);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_args);
  std::string ckpt, eval_domain = "target";
  int eval_episodes = 0;
  bool export_maps = false;
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--episodes", eval_episodes, "evaluation episode count");
  eval_cmd->add_option("--domain", eval_domain, "rendering domain: source or target");
  eval_cmd->add_flag("--export-maps", export_maps, "write PGM maps per episode");

  auto* ablate_cmd = app.add_subcommand("ablate", "train/evaluate a config sweep");
  add_common(ablate_cmd, ablate_args);
  std::string sweep = "components";
  std::vector<std::string> sweep_values;
  int jobs = 1;
  ablate_cmd->add_option("--sweep", sweep, "components, K, G or fusion");
  ablate_cmd->add_option("--values", sweep_values, "sweep values")->delimiter(',');
  ablate_cmd->add_option("--jobs", jobs, "concurrent cells");

  auto* prior_cmd = app.add_subcommand("validate-prior", "geometric prior statistics");
  add_common(prior_cmd, prior_args);
  int per_family = 500;
  prior_cmd->add_option("--episodes-per-family", per_family, "episodes per shape family");

  auto* export_cmd = app.add_subcommand("export-episodes", "dump episodes as PGM + manifest");
  add_common(export_cmd, export_args);
  int export_count = 8;
  std::string export_split = "train";
  export_cmd->add_option("--n", export_count, "episode count");
  export_cmd->add_option("--split", export_split, "train or eval");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*eval_cmd) return cmd_eval(eval_args, ckpt, eval_episodes, eval_domain, export_maps);
    if (*ablate_cmd) return cmd_ablate(ablate_args, sweep, sweep_values, jobs);
    if (*prior_cmd) return cmd_validate_prior(prior_args, per_family);
    if (*export_cmd) return cmd_export_episodes(export_args, export_count, export_split);
  } catch (const geoproto::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const geoproto::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
