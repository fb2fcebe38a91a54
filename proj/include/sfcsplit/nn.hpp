#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sfcsplit/errors.hpp"
#include "sfcsplit/tensor.hpp"

namespace sfcsplit::nn {

enum class Activation : std::uint8_t { Identity = 0, Relu = 1 };

template <typename T>
struct Layer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Tensor<T> weights;  // [in_dim, out_dim]
  Tensor<T> bias;     // [out_dim]
  Activation activation = Activation::Relu;

  bool operator==(const Layer&) const = default;
};

template <typename T>
struct LayerGrads {
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
struct BackwardResult {
  Tensor<T> input_grad;
  std::vector<LayerGrads<T>> grads;  // one per layer of the slice, in layer order
};

struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// (epoch, divisor): for every epoch strictly after `epoch`, the rate is divided.
  std::vector<std::pair<int, double>> schedule{{60, 5.0}, {120, 5.0}, {160, 5.0}};
  std::size_t batch_size = 128;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0, 1)");
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  }
};

inline double lr_schedule(const TrainConfig& cfg, int epoch) {
  double lr = cfg.learning_rate;
  for (const auto& [boundary, divisor] : cfg.schedule) {
    if (epoch > boundary) lr /= divisor;
  }
  return lr;
}

template <typename T>
struct OptimizerState {
  std::vector<LayerGrads<T>> velocity;  // zero-initialised on first step
};

// ---- kernels (fixed operation order; split and monolithic paths share them) ----

template <typename T>
Tensor<T> dense_forward(const Layer<T>& layer, const Tensor<T>& x) {
  if (x.shape.size() != 2 || x.cols() != layer.in_dim) {
    throw ShapeError("layer expects [b," + std::to_string(layer.in_dim) + "], got " +
                     shape_string(x.shape));
  }
  const std::size_t b = x.rows(), in = layer.in_dim, out = layer.out_dim;
  Tensor<T> y({b, out});
  const T* w = layer.weights.data.data();
  for (std::size_t r = 0; r < b; ++r) {
    T* yr = y.data.data() + r * out;
    for (std::size_t j = 0; j < out; ++j) yr[j] = layer.bias.data[j];
    const T* xr = x.data.data() + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const T xi = xr[i];
      const T* wi = w + i * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xi * wi[j];
    }
    if (layer.activation == Activation::Relu) {
      for (std::size_t j = 0; j < out; ++j) yr[j] = yr[j] > T{0} ? yr[j] : T{0};
    }
  }
  return y;
}

/// `output` is the post-activation value cached by forward.
template <typename T>
Tensor<T> dense_backward(const Layer<T>& layer, const Tensor<T>& input, const Tensor<T>& output,
                         const Tensor<T>& upstream, LayerGrads<T>& grads, bool need_input_grad) {
  const std::size_t b = input.rows(), in = layer.in_dim, out = layer.out_dim;
  if (upstream.shape != output.shape) {
    throw ShapeError("upstream gradient " + shape_string(upstream.shape) + " does not match output " +
                     shape_string(output.shape));
  }
  Tensor<T> dz = upstream;
  if (layer.activation == Activation::Relu) {
    for (std::size_t k = 0; k < dz.data.size(); ++k) {
      if (!(output.data[k] > T{0})) dz.data[k] = T{0};
    }
  }
  grads.weights = Tensor<T>({in, out});
  grads.bias = Tensor<T>({out});
  T* dw = grads.weights.data.data();
  for (std::size_t r = 0; r < b; ++r) {
    const T* xr = input.data.data() + r * in;
    const T* dzr = dz.data.data() + r * out;
    for (std::size_t i = 0; i < in; ++i) {
      const T xi = xr[i];
      T* dwi = dw + i * out;
      for (std::size_t j = 0; j < out; ++j) dwi[j] += xi * dzr[j];
    }
    for (std::size_t j = 0; j < out; ++j) grads.bias.data[j] += dzr[j];
  }
  if (!need_input_grad) return {};
  Tensor<T> dx({b, in});
  const T* w = layer.weights.data.data();
  for (std::size_t r = 0; r < b; ++r) {
    const T* dzr = dz.data.data() + r * out;
    T* dxr = dx.data.data() + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const T* wi = w + i * out;
      T s{0};
      for (std::size_t j = 0; j < out; ++j) s += dzr[j] * wi[j];
      dxr[i] = s;
    }
  }
  return dx;
}

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // dLoss/dlogits
  std::size_t correct = 0;
};

/// Mean softmax cross-entropy over the batch.
template <typename T>
LossResult<T> loss_and_grad(const Tensor<T>& logits, const std::vector<std::uint32_t>& labels) {
  if (logits.shape.size() != 2 || labels.size() != logits.rows()) {
    throw ShapeError("logits " + shape_string(logits.shape) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t b = logits.rows(), c = logits.cols();
  LossResult<T> res;
  res.grad = Tensor<T>(logits.shape);
  T total{0};
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] >= c) {
      throw std::out_of_range("label " + std::to_string(labels[r]) + " >= classes " + std::to_string(c));
    }
    const T* z = logits.data.data() + r * c;
    T* g = res.grad.data.data() + r * c;
    T zmax = z[0];
    std::size_t argmax = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (z[j] > zmax) {
        zmax = z[j];
        argmax = j;
      }
    }
    T sum{0};
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - zmax);
    const T log_sum = std::log(sum);
    total += log_sum - (z[labels[r]] - zmax);
    for (std::size_t j = 0; j < c; ++j) {
      const T p = std::exp(z[j] - zmax - log_sum);
      g[j] = (p - (j == labels[r] ? T{1} : T{0})) / static_cast<T>(b);
    }
    if (argmax == labels[r]) ++res.correct;
  }
  res.loss = static_cast<double>(total / static_cast<T>(b));
  return res;
}

/// Forward FLOPs for one dense layer over a batch (multiply + add).
inline double dense_flops(std::size_t batch, std::size_t in, std::size_t out) {
  return 2.0 * static_cast<double>(batch) * static_cast<double>(in) * static_cast<double>(out);
}

template <typename T>
struct GlobalModel {
  std::vector<Layer<T>> layers;

  std::size_t depth() const { return layers.size(); }

  void validate() const {
    if (layers.size() < 2) throw std::invalid_argument("global model needs at least 2 layers");
    for (std::size_t l = 1; l < layers.size(); ++l) {
      if (layers[l].in_dim != layers[l - 1].out_dim) {
        throw ShapeError("layer " + std::to_string(l + 1) + " input dim does not match layer " +
                         std::to_string(l) + " output dim");
      }
    }
  }

  /// `dims` holds L+1 widths. Hidden layers use ReLU, the final layer is
  /// linear (logits). Weights ~ U(+-sqrt(6/(fan_in+fan_out))), bias 0.
  static GlobalModel init(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    if (dims.size() < 3) throw std::invalid_argument("need at least 2 layers (3 dims)");
    GlobalModel g;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      Layer<T> layer;
      layer.in_dim = dims[l];
      layer.out_dim = dims[l + 1];
      layer.activation = (l + 2 == dims.size()) ? Activation::Identity : Activation::Relu;
      layer.weights = Tensor<T>({layer.in_dim, layer.out_dim});
      layer.bias = Tensor<T>({layer.out_dim});
      const double limit = std::sqrt(6.0 / static_cast<double>(layer.in_dim + layer.out_dim));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& w : layer.weights.data) w = static_cast<T>(dist(rng));
      g.layers.push_back(std::move(layer));
    }
    return g;
  }
};

/// Contiguous slice of the global model executed by one chain position.
template <typename T>
class SubModel {
 public:
  SubModel() = default;
  SubModel(std::size_t index, std::size_t first_layer, std::vector<Layer<T>> layers)
      : index_(index), first_layer_(first_layer), layers_(std::move(layers)) {}

  std::size_t index() const { return index_; }
  std::size_t first_layer() const { return first_layer_; }
  std::size_t depth() const { return layers_.size(); }
  std::size_t input_dim() const { return layers_.front().in_dim; }
  std::size_t output_dim() const { return layers_.back().out_dim; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::vector<Layer<T>>& layers() { return layers_; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.shape.size() != 2 || x.cols() != input_dim()) {
      throw ShapeError("sub-model " + std::to_string(index_) + " expects input [b," +
                       std::to_string(input_dim()) + "], got " + shape_string(x.shape));
    }
    inputs_.clear();
    outputs_.clear();
    Tensor<T> cur = x;
    for (const auto& layer : layers_) {
      Tensor<T> next = dense_forward(layer, cur);
      inputs_.push_back(std::move(cur));
      outputs_.push_back(next);
      cur = std::move(next);
    }
    return cur;
  }

  BackwardResult<T> backward(const Tensor<T>& upstream, bool need_input_grad = true) {
    if (inputs_.empty()) {
      throw ProtocolError("backward called before forward on sub-model " + std::to_string(index_));
    }
    BackwardResult<T> res;
    res.grads.resize(layers_.size());
    Tensor<T> grad = upstream;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const bool want_dx = l > 0 || need_input_grad;
      grad = dense_backward(layers_[l], inputs_[l], outputs_[l], grad, res.grads[l], want_dx);
    }
    res.input_grad = std::move(grad);
    inputs_.clear();
    outputs_.clear();
    return res;
  }

  double forward_flops(std::size_t batch) const {
    double f = 0.0;
    for (const auto& l : layers_) f += dense_flops(batch, l.in_dim, l.out_dim);
    return f;
  }

 private:
  std::size_t index_ = 1;
  std::size_t first_layer_ = 1;
  std::vector<Layer<T>> layers_;
  std::vector<Tensor<T>> inputs_;
  std::vector<Tensor<T>> outputs_;
};

/// Momentum SGD with weight decay folded into the gradient:
/// g <- g + wd*W; v <- mu*v + g; W <- W - lr(epoch)*v.
template <typename T>
void sgd_step(std::vector<Layer<T>>& layers, const std::vector<LayerGrads<T>>& grads,
              OptimizerState<T>& state, const TrainConfig& cfg, int epoch) {
  if (grads.size() != layers.size()) throw ShapeError("gradient count does not match layer count");
  if (state.velocity.empty()) {
    for (const auto& layer : layers) {
      state.velocity.push_back({Tensor<T>(layer.weights.shape), Tensor<T>(layer.bias.shape)});
    }
  }
  const T lr = static_cast<T>(lr_schedule(cfg, epoch));
  const T mu = static_cast<T>(cfg.momentum);
  const T wd = static_cast<T>(cfg.weight_decay);
  auto update = [&](Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& vel) {
    if (grad.shape != param.shape) throw ShapeError("gradient shape mismatch");
    for (std::size_t k = 0; k < param.data.size(); ++k) {
      const T g = grad.data[k] + wd * param.data[k];
      vel.data[k] = mu * vel.data[k] + g;
      param.data[k] -= lr * vel.data[k];
    }
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weights, grads[l].weights, state.velocity[l].weights);
    update(layers[l].bias, grads[l].bias, state.velocity[l].bias);
  }
}

template <typename T>
void sgd_step(SubModel<T>& sub, const std::vector<LayerGrads<T>>& grads, OptimizerState<T>& state,
              const TrainConfig& cfg, int epoch) {
  sgd_step(sub.layers(), grads, state, cfg, epoch);
}

/// Cuts are the 1-based layer counts after which a new sub-model starts.
inline std::vector<std::size_t> split_sizes(std::size_t depth, const std::vector<std::size_t>& cuts) {
  if (cuts.empty() || cuts.size() + 1 > depth) {
    throw std::invalid_argument("need 1..L-1 cut points for L=" + std::to_string(depth));
  }
  std::vector<std::size_t> sizes;
  std::size_t prev = 0;
  for (std::size_t c : cuts) {
    if (c <= prev || c >= depth) {
      throw std::invalid_argument("cut points must be strictly increasing within [1, L-1]");
    }
    sizes.push_back(c - prev);
    prev = c;
  }
  sizes.push_back(depth - prev);
  return sizes;
}

template <typename T>
std::vector<SubModel<T>> split_model(const GlobalModel<T>& g, const std::vector<std::size_t>& cuts) {
  const auto sizes = split_sizes(g.depth(), cuts);
  std::vector<SubModel<T>> subs;
  std::size_t first = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    std::vector<Layer<T>> slice(g.layers.begin() + static_cast<std::ptrdiff_t>(first),
                                g.layers.begin() + static_cast<std::ptrdiff_t>(first + sizes[k]));
    subs.emplace_back(k + 1, first + 1, std::move(slice));
    first += sizes[k];
  }
  return subs;
}

/// Whole model as a single slice: the monolithic reference path.
template <typename T>
SubModel<T> as_single(const GlobalModel<T>& g) {
  return SubModel<T>(1, 1, g.layers);
}

template <typename T>
GlobalModel<T> merge(const std::vector<SubModel<T>>& subs) {
  GlobalModel<T> g;
  for (const auto& s : subs) g.layers.insert(g.layers.end(), s.layers().begin(), s.layers().end());
  return g;
}

}  // namespace sfcsplit::nn
