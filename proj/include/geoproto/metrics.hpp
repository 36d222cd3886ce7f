#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "geoproto/error.hpp"
#include "geoproto/geometry.hpp"

namespace geoproto {

/// Dice similarity: 2|P.G| / (|P|+|G|). Two empty masks agree perfectly (1).
inline double dsc(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ShapeError("dsc: mask shapes differ");
  long long inter = 0, total = 0;
  for (size_t i = 0; i < pred.bits.size(); ++i) {
    bool p = pred.bits[i] != 0, g = gt.bits[i] != 0;
    inter += (p && g) ? 1 : 0;
    total += (p ? 1 : 0) + (g ? 1 : 0);
  }
  if (total == 0) return 1.0;
  return 2.0 * inter / total;
}

/// Bhattacharyya coefficient of two discrete distributions.
inline double bhattacharyya(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ContractError("bhattacharyya: length mismatch");
  double sp = 0.0, sq = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] < -1e-12 || q[i] < -1e-12) throw ContractError("bhattacharyya: negative entry");
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9)
    throw ContractError("bhattacharyya: inputs are not normalised");
  double bc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) bc += std::sqrt(std::max(0.0, p[i]) * std::max(0.0, q[i]));
  return std::min(1.0, bc);
}

struct EvalRecord {
  std::uint64_t seed = 0;
  double dsc = 0.0;
  double bin_mae = 0.0;
  double bc = 0.0;  // support-query bin histogram similarity
  std::string family;
  std::string domain;
};

struct GroupStats {
  std::string group;   // "all", "family:<id>" or "domain:<id>"
  std::string metric;  // "dsc", "bin_mae" or "bc"
  int n = 0;
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;
};

namespace detail {
inline GroupStats stats_of(const std::string& group, const std::string& metric,
                           std::vector<double> values) {
  GroupStats s;
  s.group = group;
  s.metric = metric;
  s.n = static_cast<int>(values.size());
  double acc = 0.0;
  for (double v : values) acc += v;
  s.mean = acc / s.n;
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / s.n);
  std::sort(values.begin(), values.end());
  s.median = s.n % 2 ? values[s.n / 2] : 0.5 * (values[s.n / 2 - 1] + values[s.n / 2]);
  return s;
}
}  // namespace detail

/// Deterministic per-group summaries (overall, per family, per domain).
inline std::vector<GroupStats> aggregate(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ContractError("aggregate: no records");
  std::map<std::string, std::vector<const EvalRecord*>> groups;
  for (const auto& r : records) {
    groups["all"].push_back(&r);
    groups["family:" + r.family].push_back(&r);
    groups["domain:" + r.domain].push_back(&r);
  }
  std::vector<GroupStats> out;
  for (const auto& [name, rs] : groups) {
    std::vector<double> d, m, b;
    for (const auto* r : rs) {
      d.push_back(r->dsc);
      m.push_back(r->bin_mae);
      b.push_back(r->bc);
    }
    out.push_back(detail::stats_of(name, "dsc", d));
    out.push_back(detail::stats_of(name, "bin_mae", m));
    out.push_back(detail::stats_of(name, "bc", b));
  }
  return out;
}

/// Mean of per-seed DSC differences (a - b) over seeds present in both runs.
/// Returns the pair (delta, matched count).
inline std::pair<double, int> paired_dsc_delta(const std::vector<EvalRecord>& a,
                                               const std::vector<EvalRecord>& b) {
  std::map<std::uint64_t, double> bmap;
  for (const auto& r : b) bmap[r.seed] = r.dsc;
  double acc = 0.0;
  int n = 0;
  for (const auto& r : a) {
    auto it = bmap.find(r.seed);
    if (it == bmap.end()) continue;
    acc += r.dsc - it->second;
    ++n;
  }
  return {n ? acc / n : 0.0, n};
}

}  // namespace geoproto
