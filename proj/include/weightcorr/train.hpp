#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "weightcorr/dataset.hpp"
#include "weightcorr/nn.hpp"

namespace weightcorr {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  /// Strength of the weight-correlation penalty; 0 disables it.
  double alpha = 0.0;
  std::uint64_t seed = 1;
  double g_cap = kDefaultGCap;
  bool shuffle = true;
  /// Fraction of final epochs searched by early_stop_select.
  double early_stop_window = 0.25;
  std::size_t eval_threads = 1;

  /// Throws UsageError on out-of-range values.
  void validate() const;
};

struct EpochRecord {
  double train_loss = 0.0;
  double train_error = 0.0;
  double test_loss = 0.0;
  double test_error = 0.0;
  double mean_wc = 0.0;
  /// train_loss + alpha * sum_l g(w_l).
  double regularised_loss = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  /// Parameters at the end of best_epoch.
  std::vector<LayerParams> best_params;
};

/// Mini-batch SGD with momentum on the cross-entropy plus alpha * g(w).
/// `net` holds the final parameters on return. Throws NumericError naming the
/// epoch and batch if the loss or parameters stop being finite.
TrainReport train(Network& net, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg);

/// Earliest epoch with minimum test loss among the last
/// ceil(window * epochs) epochs.
std::size_t early_stop_select(std::span<const EpochRecord> history, double window = 0.25);

/// Mean rho over trainable layers with more than one neuron or filter.
/// Throws UsageError when no layer qualifies.
double mean_wc(const Network& net);

/// Sum of g over trainable layers.
double total_g(const Network& net, double cap = kDefaultGCap);

/// Adds alpha * wcd_gradient(w) to every weight gradient; biases untouched.
void add_wcd_penalty(const Network& net, Gradients& grads, double alpha, double cap);

}  // namespace weightcorr
