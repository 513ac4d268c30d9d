#include "weightcorr/wc_core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "weightcorr/errors.hpp"

namespace weightcorr {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void require_multi_module(std::size_t n, const char* what) {
  if (n < 2) {
    throw UsageError(std::string(what) + ": correlation undefined for N_l = 1");
  }
}

// Sum over unordered pairs of |cos| for the given columns.
double pairwise_abs_cos_sum(std::span<const std::span<const double>> cols) {
  double acc = 0.0;
  for (std::size_t i = 0; i < cols.size(); ++i)
    for (std::size_t j = i + 1; j < cols.size(); ++j)
      acc += std::abs(cosine_similarity(cols[i], cols[j]));
  return acc;
}

// Accumulates scale * d/dw sum_{i<j} |cos(w_i, w_j)| into grads. Pairs with a
// zero-norm member, and exactly orthogonal pairs, contribute nothing.
void accumulate_pairwise_gradient(std::span<const std::span<const double>> cols,
                                  std::span<const std::span<double>> grads, double scale) {
  const std::size_t n = cols.size();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = norm2(cols[i]);
  for (std::size_t j = 0; j < n; ++j) {
    if (norms[j] < kCosineEpsilon) continue;
    for (std::size_t q = 0; q < n; ++q) {
      if (q == j || norms[q] < kCosineEpsilon) continue;
      const double d = dot(cols[j], cols[q]);
      const double sign = (d > 0.0) - (d < 0.0);
      if (sign == 0.0) continue;
      const double inv = 1.0 / (norms[j] * norms[q]);
      const double self = d / (norms[j] * norms[j] * norms[j] * norms[q]);
      auto g = grads[j];
      const auto wj = cols[j];
      const auto wq = cols[q];
      for (std::size_t i = 0; i < wj.size(); ++i) {
        g[i] += scale * sign * (wq[i] * inv - wj[i] * self);
      }
    }
  }
}

std::vector<std::vector<double>> columns_of(const Matrix& w) {
  std::vector<std::vector<double>> cols(w.cols());
  for (std::size_t c = 0; c < w.cols(); ++c) cols[c] = w.column(c);
  return cols;
}

}  // namespace

std::size_t module_count(const Weights& w) {
  return std::visit(overloaded{[](const Matrix& m) { return m.cols(); },
                               [](const FilterTensor& t) { return t.out_channels(); }},
                    w);
}

std::size_t module_fan_in(const Weights& w) {
  return std::visit(overloaded{[](const Matrix& m) { return m.rows(); },
                               [](const FilterTensor& t) { return t.in_channels(); }},
                    w);
}

std::size_t parameter_count(const LayerParams& p) {
  return flat(p.weights).size() + p.bias.size();
}

Weights zeros_like(const Weights& w) {
  return std::visit(
      overloaded{[](const Matrix& m) -> Weights { return Matrix(m.rows(), m.cols()); },
                 [](const FilterTensor& t) -> Weights {
                   return FilterTensor(t.kernel(), t.in_channels(), t.out_channels());
                 }},
      w);
}

std::span<const double> flat(const Weights& w) {
  return std::visit([](const auto& x) -> std::span<const double> { return x.data(); }, w);
}

std::span<double> flat(Weights& w) {
  return std::visit([](auto& x) -> std::span<double> { return x.data(); }, w);
}

LayerCorrelation::LayerCorrelation(double rho_value, std::size_t n_out_value,
                                   std::size_t n_in_value)
    : rho(rho_value), n_out(n_out_value), n_in(n_in_value) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw UsageError("rho must lie in [0, 1], got " + std::to_string(rho));
  }
  if (n_out < 1 || n_in < 1) throw UsageError("layer sizes must be >= 1");
}

double wc_fcn(const Matrix& w) {
  require_multi_module(w.cols(), "wc_fcn");
  const auto cols = columns_of(w);
  std::vector<std::span<const double>> views(cols.begin(), cols.end());
  const double n = static_cast<double>(w.cols());
  return 2.0 * pairwise_abs_cos_sum(views) / (n * (n - 1.0));
}

double wc_cnn(const FilterTensor& w) {
  require_multi_module(w.out_channels(), "wc_cnn");
  double acc = 0.0;
  std::vector<std::span<const double>> views(w.out_channels());
  for (std::size_t z = 0; z < w.in_channels(); ++z) {
    for (std::size_t o = 0; o < w.out_channels(); ++o) views[o] = w.channel_column(o, z);
    acc += pairwise_abs_cos_sum(views);
  }
  const double n = static_cast<double>(w.out_channels());
  return 2.0 * acc / (n * (n - 1.0) * static_cast<double>(w.in_channels()));
}

double weight_correlation(const Weights& w) {
  return std::visit(overloaded{[](const Matrix& m) { return wc_fcn(m); },
                               [](const FilterTensor& t) { return wc_cnn(t); }},
                    w);
}

LayerCorrelation layer_correlation(const Weights& w) {
  const std::size_t n_out = module_count(w);
  const double rho = n_out > 1 ? weight_correlation(w) : 0.0;
  // Rounding can push an all-parallel layer a hair above 1.
  return LayerCorrelation(std::min(rho, 1.0), n_out, module_fan_in(w));
}

double g_term(const LayerCorrelation& c, double cap) {
  if (!(cap > 0.0)) throw UsageError("g_term: cap must be positive");
  if (c.rho >= 1.0) return cap;
  const double n_out = static_cast<double>(c.n_out);
  const double n_in = static_cast<double>(c.n_in);
  const double value =
      -(n_out - 1.0) * n_in * std::log1p(-c.rho) - n_in * std::log1p((n_out - 1.0) * c.rho);
  return std::min(value, cap);
}

KlBreakdown kl_layer(const LayerParams& final_params, const LayerParams& initial_params,
                     double sigma_sq, double cap) {
  return kl_layer(final_params, initial_params, layer_correlation(final_params.weights),
                  sigma_sq, cap);
}

KlBreakdown kl_layer(const LayerParams& final_params, const LayerParams& initial_params,
                     const LayerCorrelation& correlation, double sigma_sq, double cap) {
  if (!(sigma_sq > 0.0)) throw UsageError("kl_layer: sigma_sq must be positive");
  const auto wf = flat(final_params.weights);
  const auto w0 = flat(initial_params.weights);
  if (final_params.weights.index() != initial_params.weights.index() ||
      module_count(final_params.weights) != module_count(initial_params.weights) ||
      module_fan_in(final_params.weights) != module_fan_in(initial_params.weights) ||
      wf.size() != w0.size() || final_params.bias.size() != initial_params.bias.size()) {
    throw UsageError("kl_layer: final and initial parameters differ in shape");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < wf.size(); ++i) sq += (wf[i] - w0[i]) * (wf[i] - w0[i]);
  for (std::size_t i = 0; i < final_params.bias.size(); ++i) {
    const double d = final_params.bias[i] - initial_params.bias[i];
    sq += d * d;
  }
  KlBreakdown out;
  out.distance_term = sq / (2.0 * sigma_sq);
  if (correlation.n_out != module_count(final_params.weights) ||
      correlation.n_in != module_fan_in(final_params.weights)) {
    throw UsageError("kl_layer: correlation sizes do not match the layer");
  }
  out.g = g_term(correlation, cap);
  out.log_det_term = 0.5 * out.g;
  out.total = out.distance_term + out.log_det_term;
  return out;
}

double kl_network(std::span<const KlBreakdown> layers) {
  double total = 0.0;
  for (const auto& l : layers) total += l.total;
  return total;
}

Matrix posterior_covariance(const LayerCorrelation& c, double sigma_sq) {
  if (c.rho >= 1.0) throw UsageError("posterior_covariance: rho = 1 gives a singular covariance");
  if (!(sigma_sq > 0.0)) throw UsageError("posterior_covariance: sigma_sq must be positive");
  Matrix corr(c.n_out, c.n_out, c.rho);
  for (std::size_t i = 0; i < c.n_out; ++i) corr(i, i) = 1.0;
  return kronecker(corr, sigma_sq * Matrix::identity(c.n_in));
}

double g_gradient_bracket(const LayerCorrelation& c) {
  if (c.rho >= 1.0) throw UsageError("g_gradient_bracket: undefined at rho = 1");
  const double n_out = static_cast<double>(c.n_out);
  const double k = static_cast<double>(c.n_in) * (n_out - 1.0);
  return k / (1.0 - c.rho) - k / (1.0 + (n_out - 1.0) * c.rho);
}

Matrix rho_gradient_fcn(const Matrix& w) {
  require_multi_module(w.cols(), "rho_gradient_fcn");
  const auto cols = columns_of(w);
  std::vector<std::vector<double>> grad_cols(w.cols(), std::vector<double>(w.rows(), 0.0));
  std::vector<std::span<const double>> views(cols.begin(), cols.end());
  std::vector<std::span<double>> grad_views(grad_cols.begin(), grad_cols.end());
  const double n = static_cast<double>(w.cols());
  // Each unordered pair appears twice in the i != j sum.
  accumulate_pairwise_gradient(views, grad_views, 2.0 / (n * (n - 1.0)));
  Matrix out(w.rows(), w.cols());
  for (std::size_t c = 0; c < w.cols(); ++c)
    for (std::size_t r = 0; r < w.rows(); ++r) out(r, c) = grad_cols[c][r];
  return out;
}

FilterTensor rho_gradient_cnn(const FilterTensor& w) {
  require_multi_module(w.out_channels(), "rho_gradient_cnn");
  FilterTensor out(w.kernel(), w.in_channels(), w.out_channels());
  const double n = static_cast<double>(w.out_channels());
  const double scale = 2.0 / (n * (n - 1.0) * static_cast<double>(w.in_channels()));
  std::vector<std::span<const double>> views(w.out_channels());
  std::vector<std::span<double>> grad_views(w.out_channels());
  for (std::size_t z = 0; z < w.in_channels(); ++z) {
    for (std::size_t o = 0; o < w.out_channels(); ++o) {
      views[o] = w.channel_column(o, z);
      grad_views[o] = out.channel_column(o, z);
    }
    accumulate_pairwise_gradient(views, grad_views, scale);
  }
  return out;
}

Weights rho_gradient(const Weights& w) {
  return std::visit(
      overloaded{[](const Matrix& m) -> Weights { return rho_gradient_fcn(m); },
                 [](const FilterTensor& t) -> Weights { return rho_gradient_cnn(t); }},
      w);
}

Weights wcd_gradient(const Weights& w, double cap) {
  const LayerCorrelation c = layer_correlation(w);
  if (c.n_out < 2 || c.rho >= 1.0 || g_term(c, cap) >= cap) return zeros_like(w);
  const double bracket = g_gradient_bracket(c);
  Weights grad = rho_gradient(w);
  for (double& v : flat(grad)) v *= bracket;
  return grad;
}

}  // namespace weightcorr
