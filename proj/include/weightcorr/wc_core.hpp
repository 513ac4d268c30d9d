#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "weightcorr/linalg.hpp"

namespace weightcorr {

/// Weights of one trainable layer. Dense weights are N_{l-1} x N_l with one
/// column per neuron; convolution weights are a filter bank.
using Weights = std::variant<Matrix, FilterTensor>;

struct LayerParams {
  Weights weights;
  std::vector<double> bias;

  bool operator==(const LayerParams&) const = default;
};

inline constexpr double kDefaultGCap = 50000.0;

/// Number of neurons (dense) or filters (conv), N_l.
std::size_t module_count(const Weights& w);
/// N_{l-1}: dense fan-in or conv input channels.
std::size_t module_fan_in(const Weights& w);
std::size_t parameter_count(const LayerParams& p);
Weights zeros_like(const Weights& w);
std::span<const double> flat(const Weights& w);
std::span<double> flat(Weights& w);

struct LayerCorrelation {
  LayerCorrelation(double rho, std::size_t n_out, std::size_t n_in);

  double rho;
  std::size_t n_out;
  std::size_t n_in;
};

/// Exact per-layer Gaussian KL between the correlated posterior and the
/// isotropic prior. log_det_term is half the log-determinant ratio, i.e.
/// g / 2; `g` is the (capped) penalty itself.
struct KlBreakdown {
  double distance_term = 0.0;
  double log_det_term = 0.0;
  double total = 0.0;
  double g = 0.0;
};

double wc_fcn(const Matrix& w);
double wc_cnn(const FilterTensor& w);
double weight_correlation(const Weights& w);

/// Correlation summary for a layer. Single-module layers report rho = 0.
LayerCorrelation layer_correlation(const Weights& w);

/// -(N_l-1) N_{l-1} ln(1-rho) - N_{l-1} ln(1+(N_l-1) rho), clamped to cap.
double g_term(const LayerCorrelation& c, double cap = kDefaultGCap);

KlBreakdown kl_layer(const LayerParams& final_params, const LayerParams& initial_params,
                     double sigma_sq, double cap = kDefaultGCap);

/// Same closed form with the layer correlation supplied by the caller
/// instead of measured from final_params.
KlBreakdown kl_layer(const LayerParams& final_params, const LayerParams& initial_params,
                     const LayerCorrelation& correlation, double sigma_sq,
                     double cap = kDefaultGCap);

double kl_network(std::span<const KlBreakdown> layers);

/// Sigma_rho (x) sigma^2 I_{N_{l-1}}, size N_l N_{l-1}.
Matrix posterior_covariance(const LayerCorrelation& c, double sigma_sq);

/// dg/drho.
double g_gradient_bracket(const LayerCorrelation& c);

Matrix rho_gradient_fcn(const Matrix& w);
FilterTensor rho_gradient_cnn(const FilterTensor& w);
Weights rho_gradient(const Weights& w);

/// Gradient of g(rho(w)) with respect to w. Zero when g sits at the cap or
/// the layer has a single module.
Weights wcd_gradient(const Weights& w, double cap = kDefaultGCap);

}  // namespace weightcorr
