#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "weightcorr/linalg.hpp"
#include "weightcorr/nn.hpp"
#include "weightcorr/wc_core.hpp"

namespace weightcorr {

enum class SigmaRule {
  /// sigma_l^2 = 1/L: PB = sum |dtheta|^2 / 2, PBC = PB + sum g / L.
  kOneOverL,
  /// Fixed sigma^2: PB = sum |dtheta|^2 / (2 sigma^2), PBC = PB + sum g.
  kConstant,
};

struct MeasureConfig {
  SigmaRule sigma_rule = SigmaRule::kOneOverL;
  double sigma_sq = 1.0;  // used by kConstant only
  double g_cap = kDefaultGCap;
};

/// Complexity measures of one trained network.
struct MeasureReport {
  double pfn = 0.0;   // product of Frobenius norms of final weights
  double psn = 0.0;   // product of spectral norms of final weights
  double nop = 0.0;   // parameter count
  double sosp = 0.0;  // nop * sum of spectral norms of weight displacements
  double wc = 0.0;    // mean weight correlation
  double pb = 0.0;
  double pbc = 0.0;
  std::optional<double> ge;
  /// Natural logs of pfn / psn; the products themselves can overflow.
  double log_pfn = 0.0;
  double log_psn = 0.0;
};

MeasureReport compute_measures(const NetworkSpec& spec, std::span<const LayerParams> initial,
                               std::span<const LayerParams> final_params,
                               const MeasureConfig& cfg = {});
MeasureReport compute_measures(const Network& net, const MeasureConfig& cfg = {});

double generalisation_error(double test_loss, double train_loss);

enum class TiePolicy {
  /// Tied pairs count as neither concordant nor discordant.
  kNeither,
  /// Tied pairs count as concordant. Used for published tables whose
  /// printed precision creates ties absent from the underlying values.
  kConcordant,
};

struct KendallResult {
  double tau = 0.0;
  std::size_t concordant = 0;
  std::size_t discordant = 0;
  std::size_t ties = 0;
};

/// (concordant - discordant) / (n (n - 1) / 2) over all pairs i < j.
KendallResult kendall_tau(std::span<const double> xs, std::span<const double> ys,
                          TiePolicy ties = TiePolicy::kNeither);

/// empirical_loss + sqrt((kl + ln(m / delta)) / (2 (m - 1))).
double pac_bayes_bound(double kl, std::size_t m, double delta, double empirical_loss);

struct FilterHeatmap {
  /// N_l x N_l; entry (i, j) is the channel-averaged |cos| between filters i
  /// and j, diagonal fixed at 1.
  Matrix pairwise;
  /// Mean of each row's off-diagonal entries.
  std::vector<double> per_filter;
};

FilterHeatmap filter_heatmap(const FilterTensor& w);

struct RankingRow {
  std::string measure;
  KendallResult result;
};

struct MeasureTable {
  std::vector<std::string> names;
  std::vector<std::string> measures;
  /// values[m][i] is measure m of network i.
  std::vector<std::vector<double>> values;
  std::vector<double> ge;
};

/// Kendall's tau of every measure column against GE.
std::vector<RankingRow> rank_measures(const MeasureTable& table,
                                      TiePolicy ties = TiePolicy::kNeither);

}  // namespace weightcorr
