#include "weightcorr/measures.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "weightcorr/errors.hpp"

namespace weightcorr {
namespace {

Matrix weight_matrix(const Weights& w) {
  if (const auto* m = std::get_if<Matrix>(&w)) return *m;
  return std::get<FilterTensor>(w).as_matrix();
}

double log_or_neg_inf(double x) {
  return x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity();
}

}  // namespace

MeasureReport compute_measures(const NetworkSpec& spec, std::span<const LayerParams> initial,
                               std::span<const LayerParams> final_params,
                               const MeasureConfig& cfg) {
  // Validates shapes and parameter layout against the spec.
  const Network net(spec, {initial.begin(), initial.end()},
                    {final_params.begin(), final_params.end()});
  if (cfg.sigma_rule == SigmaRule::kConstant && !(cfg.sigma_sq > 0.0)) {
    throw UsageError("compute_measures: sigma_sq must be > 0");
  }
  const std::size_t num_layers = final_params.size();
  if (num_layers == 0) throw UsageError("compute_measures: network has no trainable layers");

  MeasureReport r;
  double sum_sq = 0.0;
  double sum_g = 0.0;
  double sum_displacement_spectral = 0.0;
  double wc_sum = 0.0;
  std::size_t wc_count = 0;

  for (std::size_t l = 0; l < num_layers; ++l) {
    const LayerParams& f = final_params[l];
    const LayerParams& i = initial[l];
    const Matrix wf = weight_matrix(f.weights);
    const Matrix w0 = weight_matrix(i.weights);

    r.log_pfn += log_or_neg_inf(frobenius_norm(wf));
    r.log_psn += log_or_neg_inf(spectral_norm(wf).value);
    sum_displacement_spectral += spectral_norm(w0 - wf).value;
    r.nop += static_cast<double>(parameter_count(f));

    const KlBreakdown kl = kl_layer(f, i, 1.0, cfg.g_cap);
    sum_sq += 2.0 * kl.distance_term;
    sum_g += kl.g;

    if (module_count(f.weights) > 1) {
      wc_sum += weight_correlation(f.weights);
      ++wc_count;
    }
  }

  r.pfn = std::exp(r.log_pfn);
  r.psn = std::exp(r.log_psn);
  r.sosp = r.nop * sum_displacement_spectral;
  r.wc = wc_count > 0 ? wc_sum / static_cast<double>(wc_count)
                      : std::numeric_limits<double>::quiet_NaN();
  if (cfg.sigma_rule == SigmaRule::kOneOverL) {
    r.pb = sum_sq / 2.0;
    r.pbc = r.pb + sum_g / static_cast<double>(num_layers);
  } else {
    r.pb = sum_sq / (2.0 * cfg.sigma_sq);
    r.pbc = r.pb + sum_g;
  }
  return r;
}

MeasureReport compute_measures(const Network& net, const MeasureConfig& cfg) {
  return compute_measures(net.spec(), net.initial(), net.params(), cfg);
}

double generalisation_error(double test_loss, double train_loss) {
  if (!std::isfinite(test_loss) || !std::isfinite(train_loss)) {
    throw UsageError("generalisation_error: losses must be finite");
  }
  return test_loss - train_loss;
}

KendallResult kendall_tau(std::span<const double> xs, std::span<const double> ys,
                          TiePolicy ties) {
  if (xs.size() != ys.size()) {
    throw UsageError("kendall_tau: length mismatch (" + std::to_string(xs.size()) + " vs " +
                     std::to_string(ys.size()) + ")");
  }
  const std::size_t n = xs.size();
  if (n < 2) throw UsageError("kendall_tau: need at least 2 observations");
  KendallResult r;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = (xs[i] - xs[j]) * (ys[i] - ys[j]);
      if (s > 0.0) {
        ++r.concordant;
      } else if (s < 0.0) {
        ++r.discordant;
      } else {
        ++r.ties;
        if (ties == TiePolicy::kConcordant) ++r.concordant;
      }
    }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  r.tau = (static_cast<double>(r.concordant) - static_cast<double>(r.discordant)) / pairs;
  return r;
}

double pac_bayes_bound(double kl, std::size_t m, double delta, double empirical_loss) {
  if (m < 2) throw UsageError("pac_bayes_bound: m must be >= 2");
  if (!(delta > 0.0 && delta <= 1.0)) throw UsageError("pac_bayes_bound: delta must be in (0, 1]");
  if (!(kl >= 0.0)) throw UsageError("pac_bayes_bound: kl must be >= 0");
  const double md = static_cast<double>(m);
  return empirical_loss + std::sqrt((kl + std::log(md / delta)) / (2.0 * (md - 1.0)));
}

FilterHeatmap filter_heatmap(const FilterTensor& w) {
  const std::size_t n = w.out_channels();
  if (n < 2) throw UsageError("filter_heatmap: correlation undefined for N_l = 1");
  const double channels = static_cast<double>(w.in_channels());
  FilterHeatmap h{Matrix::identity(n), std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t z = 0; z < w.in_channels(); ++z) {
        acc += std::abs(cosine_similarity(w.channel_column(i, z), w.channel_column(j, z)));
      }
      h.pairwise(i, j) = h.pairwise(j, i) = acc / channels;
    }
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row += h.pairwise(i, j);
    h.per_filter[i] = row / static_cast<double>(n - 1);
  }
  return h;
}

std::vector<RankingRow> rank_measures(const MeasureTable& table, TiePolicy ties) {
  if (table.values.size() != table.measures.size()) {
    throw UsageError("rank_measures: one value column per measure required");
  }
  std::vector<RankingRow> rows;
  for (std::size_t m = 0; m < table.measures.size(); ++m) {
    rows.push_back({table.measures[m], kendall_tau(table.values[m], table.ge, ties)});
  }
  return rows;
}

}  // namespace weightcorr
