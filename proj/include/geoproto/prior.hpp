#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "geoproto/episodes.hpp"
#include "geoproto/geometry.hpp"
#include "geoproto/metrics.hpp"
#include "geoproto/rng.hpp"

namespace geoproto {

/// Geometric-prior statistics for one shape family: the mean stratum
/// histogram and the distribution of support-query histogram similarities.
struct FamilyPrior {
  std::string family;
  std::vector<double> mean_hist;
  std::vector<double> within_bc;  // support vs query, same episode
};

struct PriorReport {
  int bins = 0;
  int episodes_per_family = 0;
  std::vector<FamilyPrior> families;
  // medians of BC between support histograms of different families,
  // keyed "famA|famB"
  std::map<std::string, double> cross_median;

  double within_median(const std::string& family) const {
    for (const auto& f : families)
      if (f.family == family) return median_of(f.within_bc);
    throw ContractError("prior report: unknown family " + family);
  }

  static double median_of(std::vector<double> v) {
    if (v.empty()) throw ContractError("median of empty set");
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
};

/// Pure-geometry validation pass: per family, sample support/query mask
/// pairs, quantise their distance fields into K strata at image resolution
/// and compare histograms within and across families.
inline PriorReport run_prior_validation(const std::vector<ShapeFamily>& families, int bins,
                                        int image_size, int episodes_per_family,
                                        std::uint64_t seed) {
  if (families.empty()) throw ContractError("prior validation: no families");
  PriorReport report;
  report.bins = bins;
  report.episodes_per_family = episodes_per_family;

  auto hist_of = [&](const BinaryMask& mask) {
    return bin_histogram(quantise(edt(mask), mask, bins));
  };

  std::vector<std::vector<std::vector<double>>> support_hists(families.size());
  for (size_t fi = 0; fi < families.size(); ++fi) {
    FamilyPrior fp;
    fp.family = to_string(families[fi].kind);
    fp.mean_hist.assign(static_cast<size_t>(bins), 0.0);
    for (int e = 0; e < episodes_per_family; ++e) {
      auto rng_s = make_rng(seed, "prior_support_" + fp.family, e);
      auto rng_q = make_rng(seed, "prior_query_" + fp.family, e);
      auto hs = hist_of(sample_shape(families[fi], image_size, image_size, rng_s));
      auto hq = hist_of(sample_shape(families[fi], image_size, image_size, rng_q));
      fp.within_bc.push_back(bhattacharyya(hs, hq));
      for (int k = 0; k < bins; ++k) fp.mean_hist[static_cast<size_t>(k)] += hs[static_cast<size_t>(k)];
      support_hists[fi].push_back(std::move(hs));
    }
    for (auto& v : fp.mean_hist) v /= episodes_per_family;
    report.families.push_back(std::move(fp));
  }

  for (size_t a = 0; a < families.size(); ++a) {
    for (size_t b = a + 1; b < families.size(); ++b) {
      std::vector<double> cross;
      for (int e = 0; e < episodes_per_family; ++e)
        cross.push_back(bhattacharyya(support_hists[a][static_cast<size_t>(e)],
                                      support_hists[b][static_cast<size_t>(e)]));
      report.cross_median[report.families[a].family + "|" + report.families[b].family] =
          PriorReport::median_of(cross);
    }
  }
  return report;
}

/// Fraction of histogram mass in the lower half of the strata (bins 0..K/2-1).
inline double lower_half_mass(const std::vector<double>& hist) {
  size_t half = hist.size() / 2;
  double acc = 0.0;
  for (size_t k = 0; k < half; ++k) acc += hist[k];
  return acc;
}

}  // namespace geoproto
