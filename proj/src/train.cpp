#include "weightcorr/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "weightcorr/errors.hpp"

namespace weightcorr {
namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool params_finite(const std::vector<LayerParams>& params) {
  return std::all_of(params.begin(), params.end(), [](const LayerParams& p) {
    return all_finite(flat(p.weights)) && all_finite(p.bias);
  });
}

Batch gather(const Dataset& data, std::span<const std::size_t> indices) {
  Batch b;
  const std::size_t n = data.sample_shape.size();
  b.inputs.reserve(indices.size() * n);
  b.labels.reserve(indices.size());
  for (std::size_t idx : indices) {
    const auto s = data.sample(idx);
    b.inputs.insert(b.inputs.end(), s.begin(), s.end());
    b.labels.push_back(data.labels[idx]);
  }
  return b;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (!(alpha >= 0.0)) throw UsageError("alpha must be >= 0");
  if (!(g_cap > 0.0)) throw UsageError("g_cap must be > 0");
  if (!(early_stop_window > 0.0 && early_stop_window <= 1.0)) {
    throw UsageError("early_stop_window must lie in (0, 1]");
  }
}

double mean_wc(const Network& net) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& p : net.params()) {
    if (module_count(p.weights) < 2) continue;
    sum += weight_correlation(p.weights);
    ++count;
  }
  if (count == 0) throw UsageError("mean_wc: no trainable layer has more than one module");
  return sum / static_cast<double>(count);
}

double total_g(const Network& net, double cap) {
  double sum = 0.0;
  for (const auto& p : net.params()) sum += g_term(layer_correlation(p.weights), cap);
  return sum;
}

void add_wcd_penalty(const Network& net, Gradients& grads, double alpha, double cap) {
  for (std::size_t p = 0; p < grads.size(); ++p) {
    const Weights& w = net.params()[p].weights;
    if (module_count(w) < 2) continue;
    const Weights penalty = wcd_gradient(w, cap);
    auto g = flat(grads[p].weights);
    const auto d = flat(penalty);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += alpha * d[i];
  }
}

std::size_t early_stop_select(std::span<const EpochRecord> history, double window) {
  if (history.empty()) throw UsageError("early_stop_select: empty history");
  if (!(window > 0.0 && window <= 1.0)) throw UsageError("early_stop_select: bad window");
  const auto n = history.size();
  const auto span_len = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(window * static_cast<double>(n))));
  std::size_t best = n - std::min(span_len, n);
  for (std::size_t e = best + 1; e < n; ++e) {
    if (history[e].test_loss < history[best].test_loss) best = e;
  }
  return best;
}

TrainReport train(Network& net, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg) {
  cfg.validate();
  train_set.validate();
  test_set.validate();
  const std::size_t in = net.input_shape().size();
  if (train_set.sample_shape.size() != in || test_set.sample_shape.size() != in) {
    throw UsageError("dataset samples do not match the network input size");
  }
  if (train_set.num_classes > net.num_classes()) {
    throw UsageError("dataset has more classes than the network has outputs");
  }

  std::vector<Weights> velocity_w;
  std::vector<std::vector<double>> velocity_b;
  for (const auto& p : net.params()) {
    velocity_w.push_back(zeros_like(p.weights));
    velocity_b.emplace_back(p.bias.size(), 0.0);
  }

  std::vector<std::size_t> order(train_set.size());
  TrainReport report;
  double best_window_loss = 0.0;
  const auto window_len = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::ceil(cfg.early_stop_window * static_cast<double>(cfg.epochs))));
  const std::size_t window_start = cfg.epochs - std::min(window_len, cfg.epochs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) {
      std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(epoch)};
      std::mt19937_64 rng(seq);
      std::shuffle(order.begin(), order.end(), rng);
    }

    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Batch batch =
          gather(train_set, std::span<const std::size_t>(order).subspan(start, end - start));
      LossAndGrad lg = loss_and_grad(net, batch.view());
      if (!std::isfinite(lg.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      if (cfg.alpha > 0.0) add_wcd_penalty(net, lg.grads, cfg.alpha, cfg.g_cap);

      for (std::size_t p = 0; p < net.params().size(); ++p) {
        auto w = flat(net.params()[p].weights);
        auto vw = flat(velocity_w[p]);
        const auto gw = flat(lg.grads[p].weights);
        for (std::size_t i = 0; i < w.size(); ++i) {
          vw[i] = cfg.momentum * vw[i] - cfg.learning_rate * gw[i];
          w[i] += vw[i];
        }
        auto& b = net.params()[p].bias;
        auto& vb = velocity_b[p];
        const auto& gb = lg.grads[p].bias;
        for (std::size_t i = 0; i < b.size(); ++i) {
          vb[i] = cfg.momentum * vb[i] - cfg.learning_rate * gb[i];
          b[i] += vb[i];
        }
      }
      if (!params_finite(net.params())) {
        throw NumericError("non-finite parameters at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index));
      }
    }

    EpochRecord rec;
    const Evaluation tr = evaluate(net, train_set, cfg.eval_threads);
    const Evaluation te = evaluate(net, test_set, cfg.eval_threads);
    rec.train_loss = tr.loss;
    rec.train_error = tr.error_rate;
    rec.test_loss = te.loss;
    rec.test_error = te.error_rate;
    rec.mean_wc = mean_wc(net);
    rec.regularised_loss = tr.loss + cfg.alpha * total_g(net, cfg.g_cap);
    report.history.push_back(rec);

    // Same rule as early_stop_select, tracked online to keep the parameters.
    if (epoch >= window_start && (epoch == window_start || rec.test_loss < best_window_loss)) {
      best_window_loss = rec.test_loss;
      report.best_epoch = epoch;
      report.best_params = net.params();
    }
  }
  return report;
}

}  // namespace weightcorr
