#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "weightcorr/dataset.hpp"
#include "weightcorr/wc_core.hpp"

namespace weightcorr {

enum class LayerKind { kDense, kConv2d, kRelu, kTanh, kMaxPool2, kFlatten };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// One layer of a feed-forward network. Dense layers use `in`/`out` feature
/// counts; conv layers use `in`/`out` channel counts and an odd `kernel`
/// (stride 1, zero padding that preserves spatial size). Max pooling uses a
/// 2x2 window with stride 2.
struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv2d(std::size_t kernel, std::size_t in_channels, std::size_t out_channels);
  static LayerSpec relu();
  static LayerSpec tanh();
  static LayerSpec maxpool2();
  static LayerSpec flatten();

  bool trainable() const noexcept {
    return kind == LayerKind::kDense || kind == LayerKind::kConv2d;
  }
  bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
  Shape input;
  std::vector<LayerSpec> layers;

  bool operator==(const NetworkSpec&) const = default;
};

/// Shape entering each layer, followed by the output shape. Throws
/// UsageError naming the first layer whose input does not compose.
std::vector<Shape> infer_shapes(const NetworkSpec& spec);

/// Parameters of every trainable layer plus the frozen initial snapshot.
class Network {
 public:
  Network(NetworkSpec spec, std::vector<LayerParams> params);
  Network(NetworkSpec spec, std::vector<LayerParams> initial, std::vector<LayerParams> current);

  const NetworkSpec& spec() const noexcept { return spec_; }
  const std::vector<Shape>& shapes() const noexcept { return shapes_; }
  Shape input_shape() const noexcept { return shapes_.front(); }
  std::size_t num_classes() const noexcept { return shapes_.back().size(); }

  /// Indices into spec().layers of the layers that own parameters, in order.
  const std::vector<std::size_t>& trainable_layers() const noexcept { return trainable_; }

  std::vector<LayerParams>& params() noexcept { return params_; }
  const std::vector<LayerParams>& params() const noexcept { return params_; }
  const std::vector<LayerParams>& initial() const noexcept { return initial_; }

  std::size_t parameter_count() const;

 private:
  NetworkSpec spec_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> trainable_;
  std::vector<LayerParams> initial_;
  std::vector<LayerParams> params_;
};

/// Weights i.i.d. N(0, sigma_init^2) from a generator seeded with `seed`,
/// biases zero.
Network init_network(const NetworkSpec& spec, std::uint64_t seed, double sigma_init);

/// Non-owning view of a mini-batch: batch * input_size values and one label
/// per sample.
struct BatchView {
  std::span<const double> inputs;
  std::span<const int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct Batch {
  std::vector<double> inputs;
  std::vector<int> labels;

  BatchView view() const noexcept { return {inputs, labels}; }
};

struct ForwardResult {
  /// activations[s][l] is the input to layer l for sample s; the final entry
  /// of each row is the logits vector.
  std::vector<std::vector<std::vector<double>>> activations;
  /// batch x num_classes, row-major.
  std::vector<double> logits;
};

ForwardResult forward(const Network& net, BatchView batch);

using Gradients = std::vector<LayerParams>;

struct LossAndGrad {
  double loss = 0.0;
  Gradients grads;
};

/// Mean softmax cross-entropy over the batch and its exact gradient.
LossAndGrad loss_and_grad(const Network& net, BatchView batch);

/// Softmax cross-entropy for one logits row.
double cross_entropy(std::span<const double> logits, int label);

struct Evaluation {
  double loss = 0.0;
  double error_rate = 0.0;
};

/// Mean loss and top-1 error. Work is split into fixed chunks reduced in
/// order, so the result does not depend on `threads`.
Evaluation evaluate(const Network& net, const Dataset& data, std::size_t threads = 1);

}  // namespace weightcorr
