#include "weightcorr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <thread>

#include "weightcorr/errors.hpp"

namespace weightcorr {
namespace {

std::string layer_label(std::size_t index, LayerKind kind) {
  return "layer " + std::to_string(index) + " (" + std::string(to_string(kind)) + ")";
}

std::string shape_str(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

LayerParams zero_params(const LayerSpec& spec) {
  if (spec.kind == LayerKind::kDense) {
    return {Matrix(spec.in, spec.out), std::vector<double>(spec.out, 0.0)};
  }
  return {FilterTensor(spec.kernel, spec.in, spec.out), std::vector<double>(spec.out, 0.0)};
}

void check_params(const LayerSpec& spec, const LayerParams& p, std::size_t index) {
  const bool dense = spec.kind == LayerKind::kDense;
  bool ok = p.bias.size() == spec.out;
  if (dense) {
    const auto* m = std::get_if<Matrix>(&p.weights);
    ok = ok && m != nullptr && m->rows() == spec.in && m->cols() == spec.out;
  } else {
    const auto* t = std::get_if<FilterTensor>(&p.weights);
    ok = ok && t != nullptr && t->kernel() == spec.kernel && t->in_channels() == spec.in &&
         t->out_channels() == spec.out;
  }
  if (!ok) {
    throw UsageError("parameters do not match " + layer_label(index, spec.kind));
  }
}

void dense_forward(const Matrix& w, std::span<const double> bias, std::span<const double> x,
                   std::vector<double>& y) {
  y.assign(bias.begin(), bias.end());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    for (std::size_t o = 0; o < w.cols(); ++o) y[o] += w(i, o) * xi;
  }
}

void dense_backward(const Matrix& w, std::span<const double> x, std::span<const double> dy,
                    LayerParams& grad, std::vector<double>& dx) {
  auto& gw = std::get<Matrix>(grad.weights);
  dx.assign(w.rows(), 0.0);
  for (std::size_t o = 0; o < w.cols(); ++o) grad.bias[o] += dy[o];
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t o = 0; o < w.cols(); ++o) {
      gw(i, o) += x[i] * dy[o];
      acc += w(i, o) * dy[o];
    }
    dx[i] = acc;
  }
}

void conv_forward(const FilterTensor& w, std::span<const double> bias, const Shape& in,
                  std::span<const double> x, std::vector<double>& y) {
  const std::size_t h = in.height;
  const std::size_t wd = in.width;
  const auto f = static_cast<std::ptrdiff_t>(w.kernel());
  const std::ptrdiff_t pad = (f - 1) / 2;
  y.assign(w.out_channels() * h * wd, 0.0);
  for (std::size_t o = 0; o < w.out_channels(); ++o) {
    double* out = y.data() + o * h * wd;
    for (std::size_t p = 0; p < h * wd; ++p) out[p] = bias[o];
    for (std::size_t z = 0; z < w.in_channels(); ++z) {
      const double* src = x.data() + z * h * wd;
      for (std::ptrdiff_t ky = 0; ky < f; ++ky)
        for (std::ptrdiff_t kx = 0; kx < f; ++kx) {
          const double k = w(o, z, ky, kx);
          for (std::size_t r = 0; r < h; ++r) {
            const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r) + ky - pad;
            if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t c = 0; c < wd; ++c) {
              const std::ptrdiff_t sc = static_cast<std::ptrdiff_t>(c) + kx - pad;
              if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(wd)) continue;
              out[r * wd + c] += k * src[sr * static_cast<std::ptrdiff_t>(wd) + sc];
            }
          }
        }
    }
  }
}

void conv_backward(const FilterTensor& w, const Shape& in, std::span<const double> x,
                   std::span<const double> dy, LayerParams& grad, std::vector<double>& dx) {
  auto& gw = std::get<FilterTensor>(grad.weights);
  const std::size_t h = in.height;
  const std::size_t wd = in.width;
  const auto f = static_cast<std::ptrdiff_t>(w.kernel());
  const std::ptrdiff_t pad = (f - 1) / 2;
  dx.assign(x.size(), 0.0);
  for (std::size_t o = 0; o < w.out_channels(); ++o) {
    const double* g = dy.data() + o * h * wd;
    for (std::size_t p = 0; p < h * wd; ++p) grad.bias[o] += g[p];
    for (std::size_t z = 0; z < w.in_channels(); ++z) {
      const double* src = x.data() + z * h * wd;
      double* dsrc = dx.data() + z * h * wd;
      for (std::ptrdiff_t ky = 0; ky < f; ++ky)
        for (std::ptrdiff_t kx = 0; kx < f; ++kx) {
          const double k = w(o, z, ky, kx);
          double acc = 0.0;
          for (std::size_t r = 0; r < h; ++r) {
            const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r) + ky - pad;
            if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t c = 0; c < wd; ++c) {
              const std::ptrdiff_t sc = static_cast<std::ptrdiff_t>(c) + kx - pad;
              if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(wd)) continue;
              const std::ptrdiff_t s = sr * static_cast<std::ptrdiff_t>(wd) + sc;
              acc += g[r * wd + c] * src[s];
              dsrc[s] += k * g[r * wd + c];
            }
          }
          gw(o, z, ky, kx) += acc;
        }
    }
  }
}

// Index of the first (row-major) maximum within the 2x2 window.
std::size_t pool_argmax(const Shape& in, std::span<const double> x, std::size_t ch,
                        std::size_t r, std::size_t c) {
  std::size_t best = (ch * in.height + 2 * r) * in.width + 2 * c;
  for (std::size_t dr = 0; dr < 2; ++dr)
    for (std::size_t dc = 0; dc < 2; ++dc) {
      const std::size_t idx = (ch * in.height + 2 * r + dr) * in.width + 2 * c + dc;
      if (x[idx] > x[best]) best = idx;
    }
  return best;
}

void layer_forward(const LayerSpec& spec, const LayerParams* params, const Shape& in,
                   const Shape& out, std::span<const double> x, std::vector<double>& y) {
  switch (spec.kind) {
    case LayerKind::kDense:
      dense_forward(std::get<Matrix>(params->weights), params->bias, x, y);
      return;
    case LayerKind::kConv2d:
      conv_forward(std::get<FilterTensor>(params->weights), params->bias, in, x, y);
      return;
    case LayerKind::kRelu:
      y.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      return;
    case LayerKind::kTanh:
      y.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
      return;
    case LayerKind::kMaxPool2:
      y.resize(out.size());
      for (std::size_t ch = 0; ch < out.channels; ++ch)
        for (std::size_t r = 0; r < out.height; ++r)
          for (std::size_t c = 0; c < out.width; ++c)
            y[(ch * out.height + r) * out.width + c] = x[pool_argmax(in, x, ch, r, c)];
      return;
    case LayerKind::kFlatten:
      y.assign(x.begin(), x.end());
      return;
  }
}

void layer_backward(const LayerSpec& spec, const LayerParams* params, LayerParams* grad,
                    const Shape& in, const Shape& out, std::span<const double> x,
                    std::span<const double> y, std::span<const double> dy,
                    std::vector<double>& dx) {
  switch (spec.kind) {
    case LayerKind::kDense:
      dense_backward(std::get<Matrix>(params->weights), x, dy, *grad, dx);
      return;
    case LayerKind::kConv2d:
      conv_backward(std::get<FilterTensor>(params->weights), in, x, dy, *grad, dx);
      return;
    case LayerKind::kRelu:
      dx.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
      return;
    case LayerKind::kTanh:
      dx.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * (1.0 - y[i] * y[i]);
      return;
    case LayerKind::kMaxPool2:
      dx.assign(x.size(), 0.0);
      for (std::size_t ch = 0; ch < out.channels; ++ch)
        for (std::size_t r = 0; r < out.height; ++r)
          for (std::size_t c = 0; c < out.width; ++c)
            dx[pool_argmax(in, x, ch, r, c)] += dy[(ch * out.height + r) * out.width + c];
      return;
    case LayerKind::kFlatten:
      dx.assign(dy.begin(), dy.end());
      return;
  }
}

void check_batch(const Network& net, BatchView batch) {
  const std::size_t in = net.input_shape().size();
  if (batch.inputs.size() != batch.size() * in) {
    throw UsageError("batch input size " + std::to_string(batch.inputs.size()) +
                     " does not match " + std::to_string(batch.size()) + " samples of layer 0 " +
                     "input size " + std::to_string(in));
  }
  for (int label : batch.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= net.num_classes()) {
      throw UsageError("label " + std::to_string(label) + " outside [0, " +
                       std::to_string(net.num_classes()) + ")");
    }
  }
}

// Runs every layer for one sample; acts[l] is the input to layer l.
void forward_sample(const Network& net, std::span<const double> x,
                    std::vector<std::vector<double>>& acts) {
  const auto& layers = net.spec().layers;
  const auto& shapes = net.shapes();
  acts.resize(layers.size() + 1);
  acts[0].assign(x.begin(), x.end());
  std::size_t p = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerParams* params = layers[l].trainable() ? &net.params()[p++] : nullptr;
    layer_forward(layers[l], params, shapes[l], shapes[l + 1], acts[l], acts[l + 1]);
  }
}

void softmax(std::span<const double> logits, std::vector<double>& probs) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  probs.resize(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct ChunkSums {
  double loss = 0.0;
  std::size_t errors = 0;
};

ChunkSums evaluate_range(const Network& net, const Dataset& data, std::size_t begin,
                         std::size_t end) {
  ChunkSums sums;
  std::vector<std::vector<double>> acts;
  for (std::size_t i = begin; i < end; ++i) {
    forward_sample(net, data.sample(i), acts);
    const auto& logits = acts.back();
    sums.loss += cross_entropy(logits, data.labels[i]);
    if (argmax(logits) != static_cast<std::size_t>(data.labels[i])) ++sums.errors;
  }
  return sums;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense:
      return "dense";
    case LayerKind::kConv2d:
      return "conv2d";
    case LayerKind::kRelu:
      return "relu";
    case LayerKind::kTanh:
      return "tanh";
    case LayerKind::kMaxPool2:
      return "maxpool2";
    case LayerKind::kFlatten:
      return "flatten";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (auto k : {LayerKind::kDense, LayerKind::kConv2d, LayerKind::kRelu, LayerKind::kTanh,
                 LayerKind::kMaxPool2, LayerKind::kFlatten}) {
    if (to_string(k) == name) return k;
  }
  throw UsageError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  return {LayerKind::kDense, in, out, 0};
}
LayerSpec LayerSpec::conv2d(std::size_t kernel, std::size_t in_channels,
                            std::size_t out_channels) {
  return {LayerKind::kConv2d, in_channels, out_channels, kernel};
}
LayerSpec LayerSpec::relu() { return {LayerKind::kRelu, 0, 0, 0}; }
LayerSpec LayerSpec::tanh() { return {LayerKind::kTanh, 0, 0, 0}; }
LayerSpec LayerSpec::maxpool2() { return {LayerKind::kMaxPool2, 0, 0, 0}; }
LayerSpec LayerSpec::flatten() { return {LayerKind::kFlatten, 0, 0, 0}; }

std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
  if (spec.input.size() == 0) throw UsageError("network input shape is empty");
  if (spec.layers.empty()) throw UsageError("network has no layers");
  std::vector<Shape> shapes{spec.input};
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& layer = spec.layers[l];
    const Shape in = shapes.back();
    auto fail = [&](const std::string& why) {
      throw UsageError(layer_label(l, layer.kind) + " does not compose with input " +
                       shape_str(in) + ": " + why);
    };
    Shape out = in;
    switch (layer.kind) {
      case LayerKind::kDense:
        if (!in.is_flat()) fail("dense layers need a flat input (add a flatten layer)");
        if (layer.in != in.channels) fail("expects " + std::to_string(layer.in) + " inputs");
        if (layer.out == 0) fail("needs at least one output");
        out = Shape{layer.out, 1, 1};
        break;
      case LayerKind::kConv2d:
        if (layer.in != in.channels) {
          fail("expects " + std::to_string(layer.in) + " input channels");
        }
        if (layer.out == 0) fail("needs at least one filter");
        if (layer.kernel == 0 || layer.kernel % 2 == 0) fail("kernel size must be odd");
        out = Shape{layer.out, in.height, in.width};
        break;
      case LayerKind::kMaxPool2:
        if (in.height < 2 || in.width < 2) fail("pooling needs spatial size >= 2");
        out = Shape{in.channels, in.height / 2, in.width / 2};
        break;
      case LayerKind::kFlatten:
        out = Shape{in.size(), 1, 1};
        break;
      case LayerKind::kRelu:
      case LayerKind::kTanh:
        break;
    }
    shapes.push_back(out);
  }
  if (!shapes.back().is_flat() || shapes.back().channels < 2) {
    throw UsageError("network output must be a flat vector of at least 2 logits");
  }
  return shapes;
}

Network::Network(NetworkSpec spec, std::vector<LayerParams> params)
    : Network(std::move(spec), params, params) {}

Network::Network(NetworkSpec spec, std::vector<LayerParams> initial,
                 std::vector<LayerParams> current)
    : spec_(std::move(spec)),
      shapes_(infer_shapes(spec_)),
      initial_(std::move(initial)),
      params_(std::move(current)) {
  for (std::size_t l = 0; l < spec_.layers.size(); ++l)
    if (spec_.layers[l].trainable()) trainable_.push_back(l);
  if (initial_.size() != trainable_.size() || params_.size() != trainable_.size()) {
    throw UsageError("expected parameters for " + std::to_string(trainable_.size()) +
                     " trainable layers");
  }
  for (std::size_t p = 0; p < trainable_.size(); ++p) {
    const LayerSpec& layer = spec_.layers[trainable_[p]];
    check_params(layer, initial_[p], trainable_[p]);
    check_params(layer, params_[p], trainable_[p]);
  }
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += weightcorr::parameter_count(p);
  return n;
}

Network init_network(const NetworkSpec& spec, std::uint64_t seed, double sigma_init) {
  if (!(sigma_init >= 0.0) || !std::isfinite(sigma_init)) {
    throw UsageError("sigma_init must be finite and >= 0");
  }
  infer_shapes(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<LayerParams> params;
  for (const auto& layer : spec.layers) {
    if (!layer.trainable()) continue;
    LayerParams p = zero_params(layer);
    for (double& v : flat(p.weights)) v = sigma_init * normal(rng);
    params.push_back(std::move(p));
  }
  return Network(spec, std::move(params));
}

ForwardResult forward(const Network& net, BatchView batch) {
  check_batch(net, batch);
  const std::size_t in = net.input_shape().size();
  const std::size_t classes = net.num_classes();
  ForwardResult result;
  result.activations.resize(batch.size());
  result.logits.resize(batch.size() * classes);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    forward_sample(net, batch.inputs.subspan(s * in, in), result.activations[s]);
    const auto& logits = result.activations[s].back();
    std::copy(logits.begin(), logits.end(), result.logits.begin() + s * classes);
  }
  return result;
}

double cross_entropy(std::span<const double> logits, int label) {
  if (logits.empty() || label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw UsageError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(logits.size()) + ")");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  return mx + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

LossAndGrad loss_and_grad(const Network& net, BatchView batch) {
  if (batch.size() == 0) throw UsageError("empty batch");
  check_batch(net, batch);
  const auto& layers = net.spec().layers;
  const auto& shapes = net.shapes();
  const std::size_t in = net.input_shape().size();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  LossAndGrad out;
  for (std::size_t p = 0; p < net.params().size(); ++p) {
    out.grads.push_back(zero_params(layers[net.trainable_layers()[p]]));
  }

  std::vector<std::vector<double>> acts;
  std::vector<double> probs;
  std::vector<double> dy;
  std::vector<double> dx;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    forward_sample(net, batch.inputs.subspan(s * in, in), acts);
    const int label = batch.labels[s];
    out.loss += cross_entropy(acts.back(), label);

    softmax(acts.back(), probs);
    dy = probs;
    dy[static_cast<std::size_t>(label)] -= 1.0;
    for (double& v : dy) v *= inv_batch;

    std::size_t p = net.params().size();
    for (std::size_t l = layers.size(); l-- > 0;) {
      const LayerParams* params = nullptr;
      LayerParams* grad = nullptr;
      if (layers[l].trainable()) {
        --p;
        params = &net.params()[p];
        grad = &out.grads[p];
      }
      layer_backward(layers[l], params, grad, shapes[l], shapes[l + 1], acts[l], acts[l + 1],
                     dy, dx);
      std::swap(dy, dx);
    }
  }
  out.loss *= inv_batch;
  return out;
}

Evaluation evaluate(const Network& net, const Dataset& data, std::size_t threads) {
  if (data.size() == 0) throw UsageError("evaluate: empty dataset");
  if (data.sample_shape.size() != net.input_shape().size()) {
    throw UsageError("evaluate: dataset sample size " +
                     std::to_string(data.sample_shape.size()) +
                     " does not match network input " + shape_str(net.input_shape()));
  }
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (data.size() + kChunk - 1) / kChunk;
  std::vector<ChunkSums> sums(chunks);
  auto run = [&](std::size_t first, std::size_t stride) {
    for (std::size_t c = first; c < chunks; c += stride) {
      sums[c] = evaluate_range(net, data, c * kChunk, std::min(data.size(), (c + 1) * kChunk));
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, chunks);
  if (threads == 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> workers;
    for (std::size_t t = 0; t < threads; ++t) workers.emplace_back(run, t, threads);
  }
  double loss = 0.0;
  std::size_t errors = 0;
  for (const auto& s : sums) {
    loss += s.loss;
    errors += s.errors;
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(errors) / n};
}

}  // namespace weightcorr
