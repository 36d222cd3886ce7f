#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "geoproto/error.hpp"
#include "geoproto/trainer.hpp"

namespace geoproto {

/// Plain-text run configuration: `key = value` lines, `#` comments,
/// validated against the full key schema. Unknown keys are rejected by name.
class RunConfig {
 public:
  RunConfig() { defaults_(); }

  static RunConfig from_file(const std::string& path) {
    RunConfig cfg;
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::string trimmed = trim_(line);
      if (trimmed.empty()) continue;
      auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
      cfg.set(trim_(trimmed.substr(0, eq)), trim_(trimmed.substr(eq + 1)));
    }
    return cfg;
  }

  /// Applies one `key=value` override (the --set form).
  void set_pair(const std::string& pair) {
    auto eq = pair.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + pair);
    set(trim_(pair.substr(0, eq)), trim_(pair.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) {
    if (values_.find(key) == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    values_[key] = value;
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
  }

  /// Materialise and validate the trainer configuration.
  TrainConfig train_config() const {
    TrainConfig t;
    t.channels = get_int("channels", 2, 1024);
    t.bins = get_int("bins", 2, 256);
    t.grid = get_int("grid", 1, 256);
    t.tau_occ = get_double("tau_occ");
    t.mlp_hidden = get_int("mlp_hidden", 1, 4096);
    t.mlp_bias = get_bool("mlp_bias");
    t.enrichment = get_bool("enrichment");
    t.osb_loss = get_bool("osb_loss");
    t.position_embedding = get_bool("position_embedding");
    t.bg_enrich = get_bool("bg_enrich");
    t.fusion = fusion_mode_from_string(get("fusion"));
    t.query_reweight_tau = get_double("query_reweight_tau");
    t.expected_bin_masked = get_bool("expected_bin_masked");
    t.lambda_dist = get_double("lambda_dist");
    t.lambda_geo = get_double("lambda_geo");
    t.alpha = get_double("alpha");
    t.lr = get_double("lr");
    t.momentum = get_double("momentum");
    t.weight_decay = get_double("weight_decay");
    t.lr_decay = get_double("lr_decay");
    t.lr_decay_every = get_int("lr_decay_every", 1, 1 << 30);
    t.episodes = get_int("episodes", 0, 1 << 30);
    t.checkpoint_every = get_int("checkpoint_every", 1, 1 << 30);
    t.holdout_episodes = get_int("holdout_episodes", 0, 1 << 20);
    t.image_size = get_int("image_size", 8, 4096);
    t.shots = get_int("shots", 1, 64);
    t.train_families = get_list("train_families");
    t.eval_families = get_list("eval_families");
    t.source_domain = get("source_domain");
    t.target_domain = get("target_domain");
    t.eval_episodes = get_int("eval_episodes", 1, 1 << 30);
    t.validate();
    for (const auto& f : t.train_families) shape_kind_from_string(f);
    for (const auto& f : t.eval_families) shape_kind_from_string(f);
    DomainSpec::preset(t.source_domain);
    DomainSpec::preset(t.target_domain);
    return t;
  }

  /// Deterministic echo of the effective configuration.
  void write_echo(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("config: cannot write echo to " + path);
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  }

 private:
  std::map<std::string, std::string> values_;

  void defaults_() {
    TrainConfig t;
    values_["channels"] = std::to_string(t.channels);
    values_["bins"] = std::to_string(t.bins);
    values_["grid"] = std::to_string(t.grid);
    values_["tau_occ"] = fmt_g(t.tau_occ);
    values_["mlp_hidden"] = std::to_string(t.mlp_hidden);
    values_["mlp_bias"] = t.mlp_bias ? "on" : "off";
    values_["enrichment"] = t.enrichment ? "on" : "off";
    values_["osb_loss"] = t.osb_loss ? "on" : "off";
    values_["position_embedding"] = t.position_embedding ? "on" : "off";
    values_["bg_enrich"] = t.bg_enrich ? "on" : "off";
    values_["fusion"] = to_string(t.fusion);
    values_["query_reweight_tau"] = fmt_g(t.query_reweight_tau);
    values_["expected_bin_masked"] = t.expected_bin_masked ? "on" : "off";
    values_["lambda_dist"] = fmt_g(t.lambda_dist);
    values_["lambda_geo"] = fmt_g(t.lambda_geo);
    values_["alpha"] = fmt_g(t.alpha);
    values_["lr"] = fmt_g(t.lr);
    values_["momentum"] = fmt_g(t.momentum);
    values_["weight_decay"] = fmt_g(t.weight_decay);
    values_["lr_decay"] = fmt_g(t.lr_decay);
    values_["lr_decay_every"] = std::to_string(t.lr_decay_every);
    values_["episodes"] = std::to_string(t.episodes);
    values_["checkpoint_every"] = std::to_string(t.checkpoint_every);
    values_["holdout_episodes"] = std::to_string(t.holdout_episodes);
    values_["image_size"] = std::to_string(t.image_size);
    values_["shots"] = std::to_string(t.shots);
    values_["train_families"] = join_(t.train_families);
    values_["eval_families"] = join_(t.eval_families);
    values_["source_domain"] = t.source_domain;
    values_["target_domain"] = t.target_domain;
    values_["eval_episodes"] = std::to_string(t.eval_episodes);
  }

  int get_int(const std::string& key, long lo, long hi) const {
    const std::string& s = get(key);
    try {
      size_t pos = 0;
      long v = std::stol(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      if (v < lo || v > hi)
        throw ConfigError("config: " + key + " = " + s + " out of range [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + "]");
      return static_cast<int>(v);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("config: " + key + " expects an integer, got '" + s + "'");
    }
  }

  double get_double(const std::string& key) const {
    const std::string& s = get(key);
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: " + key + " expects a number, got '" + s + "'");
    }
  }

  bool get_bool(const std::string& key) const {
    const std::string& s = get(key);
    if (s == "on" || s == "true" || s == "1") return true;
    if (s == "off" || s == "false" || s == "0") return false;
    throw ConfigError("config: " + key + " expects on/off, got '" + s + "'");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim_(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  static std::string join_(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) out += ",";
      out += v[i];
    }
    return out;
  }

  static std::string trim_(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }
};

}  // namespace geoproto
