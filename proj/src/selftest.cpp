#include "weightcorr/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "weightcorr/linalg.hpp"
#include "weightcorr/nn.hpp"
#include "weightcorr/wc_core.hpp"

namespace weightcorr {
namespace {

constexpr double kStep = 1e-6;

// max |a - b| / max(|a|_inf, |b|_inf)
double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return scale == 0.0 ? diff : diff / scale;
}

std::vector<double> central_difference(std::span<double> x,
                                       const std::function<double()>& f) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + kStep;
    const double up = f();
    x[i] = saved - kStep;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * kStep);
  }
  return g;
}

std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

// True when no pair of columns is within `margin` of orthogonal, so a finite
// difference step cannot cross the |cos| kink.
bool away_from_kinks(const std::vector<std::span<const double>>& cols, double margin) {
  for (std::size_t i = 0; i < cols.size(); ++i)
    for (std::size_t j = i + 1; j < cols.size(); ++j)
      if (std::abs(cosine_similarity(cols[i], cols[j])) < margin) return false;
  return true;
}

Matrix random_dense(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  while (true) {
    Matrix m(rows, cols, gaussian_vector(rng, rows * cols));
    std::vector<std::vector<double>> c;
    for (std::size_t j = 0; j < cols; ++j) c.push_back(m.column(j));
    std::vector<std::span<const double>> views(c.begin(), c.end());
    if (away_from_kinks(views, 1e-3)) return m;
  }
}

FilterTensor random_filters(std::mt19937_64& rng, std::size_t f, std::size_t in,
                            std::size_t out) {
  while (true) {
    FilterTensor t(f, in, out, gaussian_vector(rng, f * f * in * out));
    bool ok = true;
    for (std::size_t z = 0; z < in && ok; ++z) {
      std::vector<std::span<const double>> views;
      for (std::size_t o = 0; o < out; ++o) views.push_back(t.channel_column(o, z));
      ok = away_from_kinks(views, 1e-3);
    }
    if (ok) return t;
  }
}

template <class Check>
SuiteResult run_suite(const std::string& name, double tolerance, const SelftestOptions& opt,
                      std::uint64_t salt, Check check) {
  SuiteResult r{name, 0.0, tolerance, opt.cases_per_suite, {}};
  for (std::size_t c = 0; c < opt.cases_per_suite; ++c) {
    const std::uint64_t case_seed = opt.seed ^ (salt * 0x9E3779B97F4A7C15ull) ^ c;
    std::mt19937_64 rng(case_seed);
    const double err = check(rng);
    r.max_error = std::max(r.max_error, err);
    if (!(err <= tolerance)) r.failing_seeds.push_back(case_seed);
  }
  return r;
}

}  // namespace

std::vector<SuiteResult> run_selftest(const SelftestOptions& opt) {
  std::vector<SuiteResult> results;

  results.push_back(run_suite("rho_gradient_fcn", 1e-5, opt, 1, [](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dim(2, 5);
    Matrix w = random_dense(rng, dim(rng), dim(rng));
    const Matrix analytic = rho_gradient_fcn(w);
    const auto numeric = central_difference(w.data(), [&] { return wc_fcn(w); });
    return relative_error(analytic.data(), numeric);
  }));

  results.push_back(run_suite("rho_gradient_cnn", 1e-5, opt, 2, [](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dim(2, 4);
    FilterTensor w = random_filters(rng, 3, dim(rng), dim(rng));
    const FilterTensor analytic = rho_gradient_cnn(w);
    const auto numeric = central_difference(w.data(), [&] { return wc_cnn(w); });
    return relative_error(analytic.data(), numeric);
  }));

  results.push_back(run_suite("wcd_gradient", 1e-5, opt, 3, [](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dim(2, 5);
    Weights w = random_dense(rng, dim(rng), dim(rng));
    const Weights analytic = wcd_gradient(w);
    const auto numeric =
        central_difference(flat(w), [&] { return g_term(layer_correlation(w)); });
    return relative_error(flat(analytic), numeric);
  }));

  const double sign = opt.flip_bracket_sign ? -1.0 : 1.0;
  results.push_back(run_suite("g_gradient_bracket", 1e-6, opt, 4, [sign](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dim(2, 6);
    std::uniform_real_distribution<double> rho_dist(0.05, 0.9);
    const std::size_t n_out = dim(rng);
    const std::size_t n_in = dim(rng);
    const double rho = rho_dist(rng);
    const double analytic = sign * g_gradient_bracket(LayerCorrelation(rho, n_out, n_in));
    const double numeric = (g_term(LayerCorrelation(rho + kStep, n_out, n_in)) -
                            g_term(LayerCorrelation(rho - kStep, n_out, n_in))) /
                           (2.0 * kStep);
    return std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-12);
  }));

  results.push_back(run_suite("kl_closed_form_vs_gaussian", 1e-8, opt, 5, [](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dim(2, 4);
    std::uniform_int_distribution<int> tenth(0, 9);
    std::uniform_real_distribution<double> sig(0.2, 2.0);
    const std::size_t n_in = dim(rng);
    const std::size_t n_out = dim(rng);
    const double rho = tenth(rng) / 10.0;
    const double sigma_sq = sig(rng);
    const LayerCorrelation c(rho, n_out, n_in);
    const LayerParams init{Matrix(n_in, n_out, gaussian_vector(rng, n_in * n_out)),
                           gaussian_vector(rng, n_out)};
    const LayerParams fin{Matrix(n_in, n_out, gaussian_vector(rng, n_in * n_out)),
                          gaussian_vector(rng, n_out)};
    const double closed = kl_layer(fin, init, c, sigma_sq).total;

    // Weights stacked neuron by neuron, then the bias.
    const std::size_t k = n_in * n_out + n_out;
    std::vector<double> mu_q(k);
    std::vector<double> mu_p(k);
    const auto& wf = std::get<Matrix>(fin.weights);
    const auto& w0 = std::get<Matrix>(init.weights);
    for (std::size_t j = 0; j < n_out; ++j)
      for (std::size_t r = 0; r < n_in; ++r) {
        mu_q[j * n_in + r] = wf(r, j);
        mu_p[j * n_in + r] = w0(r, j);
      }
    for (std::size_t j = 0; j < n_out; ++j) {
      mu_q[n_in * n_out + j] = fin.bias[j];
      mu_p[n_in * n_out + j] = init.bias[j];
    }
    Matrix sigma_q = sigma_sq * Matrix::identity(k);
    const Matrix block = posterior_covariance(c, sigma_sq);
    for (std::size_t i = 0; i < block.rows(); ++i)
      for (std::size_t j = 0; j < block.cols(); ++j) sigma_q(i, j) = block(i, j);
    const double oracle = gaussian_kl(mu_q, sigma_q, mu_p, sigma_sq * Matrix::identity(k));
    return std::abs(closed - oracle) / std::max(std::abs(oracle), 1e-300);
  }));

  results.push_back(run_suite("determinant_identity", 1e-8, opt, 6, [](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dim(2, 4);
    std::uniform_int_distribution<int> tenth(0, 9);
    std::uniform_real_distribution<double> sig(0.5, 2.0);
    const std::size_t n_in = dim(rng);
    const std::size_t n_out = dim(rng);
    const double rho = tenth(rng) / 10.0;
    const double s2 = sig(rng);
    const double det = determinant(posterior_covariance(LayerCorrelation(rho, n_out, n_in), s2));
    const double ni = static_cast<double>(n_in);
    const double no = static_cast<double>(n_out);
    const double closed = std::pow(s2, ni * no) * std::pow(1.0 - rho, (no - 1.0) * ni) *
                          std::pow(1.0 + (no - 1.0) * rho, ni);
    return std::abs(det - closed) / closed;
  }));

  results.push_back(run_suite("nn_backprop", 1e-5, opt, 7, [](std::mt19937_64& rng) {
    NetworkSpec spec{Shape{2, 6, 6},
                     {LayerSpec::conv2d(3, 2, 3), LayerSpec::relu(), LayerSpec::maxpool2(),
                      LayerSpec::tanh(), LayerSpec::flatten(), LayerSpec::dense(27, 5),
                      LayerSpec::relu(), LayerSpec::dense(5, 3)}};
    Network net = init_network(spec, rng(), 0.5);
    for (auto& p : net.params())
      for (double& b : p.bias) b = 0.1 * std::normal_distribution<double>(0.0, 1.0)(rng);
    Batch batch{gaussian_vector(rng, 4 * spec.input.size()), {0, 1, 2, 1}};
    const LossAndGrad lg = loss_and_grad(net, batch.view());
    std::vector<double> analytic;
    std::vector<double> numeric;
    for (std::size_t p = 0; p < net.params().size(); ++p) {
      auto loss = [&] { return loss_and_grad(net, batch.view()).loss; };
      const auto gw = central_difference(flat(net.params()[p].weights), loss);
      const auto gb = central_difference(net.params()[p].bias, loss);
      const auto aw = flat(lg.grads[p].weights);
      analytic.insert(analytic.end(), aw.begin(), aw.end());
      analytic.insert(analytic.end(), lg.grads[p].bias.begin(), lg.grads[p].bias.end());
      numeric.insert(numeric.end(), gw.begin(), gw.end());
      numeric.insert(numeric.end(), gb.begin(), gb.end());
    }
    return relative_error(analytic, numeric);
  }));

  return results;
}

}  // namespace weightcorr
