#pragma once

// Differentiable building blocks for the pore FCN. Every op works on NHWC
// batches, uses valid padding and unit stride, and is instantiated for float
// (training and inference) and double (gradient checking).

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "poredet/tensor.hpp"

namespace poredet::nn {

using Rng = std::mt19937_64;

enum class Mode { Train, Infer };

template <typename T>
struct ConvParams {
  int kernel_h = 0;
  int kernel_w = 0;
  int in_channels = 0;
  int out_channels = 0;
  /// Layout [kernel_h][kernel_w][in_channels][out_channels].
  std::vector<T> weights;
  std::vector<T> bias;

  ConvParams() = default;
  ConvParams(int kh, int kw, int cin, int cout)
      : kernel_h(kh), kernel_w(kw), in_channels(cin), out_channels(cout),
        weights(static_cast<std::size_t>(kh) * kw * cin * cout), bias(cout) {}

  std::size_t weight_index(int ky, int kx, int ci, int co) const {
    return ((static_cast<std::size_t>(ky) * kernel_w + kx) * in_channels + ci) * out_channels +
           co;
  }
  /// Throws SizeMismatch when array sizes disagree with the declared dims.
  void validate() const;
  bool operator==(const ConvParams&) const = default;
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;  ///< empty when the input gradient was not requested
  std::vector<T> weights;
  std::vector<T> bias;
};

template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& input, const ConvParams<T>& params);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                             const Tensor<T>& grad_out, bool need_input_grad = true);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// Gradient passes where input > 0; zero at exactly 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

template <typename T>
struct PoolResult {
  Tensor<T> output;
  /// Flat input index of the maximum for every output element.
  std::vector<std::uint32_t> argmax;
};

/// 3x3 max pooling, stride 1. Ties resolve to the first maximum in raster order.
template <typename T>
PoolResult<T> maxpool3x3_s1(const Tensor<T>& input);

template <typename T>
Tensor<T> maxpool3x3_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                              const Tensor<T>& grad_out);

template <typename T>
struct BatchNormState {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-3);
  T momentum = T(0.99);

  BatchNormState() = default;
  explicit BatchNormState(int channels, T eps = T(1e-3), T mom = T(0.99))
      : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)),
        running_var(channels, T(1)), epsilon(eps), momentum(mom) {}

  int channels() const { return static_cast<int>(gamma.size()); }
  void validate() const;
  bool operator==(const BatchNormState&) const = default;
};

/// Values kept from a train-mode forward pass for the backward pass.
template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;       ///< x-hat, before gamma/beta
  std::vector<T> inv_std;     ///< 1 / sqrt(var + eps) per channel
};

template <typename T>
struct BatchNormResult {
  Tensor<T> output;
  BatchNormCache<T> cache;
};

/// Train mode normalizes by batch statistics over (batch, height, width) and
/// folds them into the running statistics:
///   running = momentum * running + (1 - momentum) * batch.
/// Infer mode normalizes by the running statistics and leaves state untouched.
template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, BatchNormState<T>& state, Mode mode);

/// Infer-mode convenience that cannot touch the state.
template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& input, const BatchNormState<T>& state);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const std::vector<T>& gamma,
                                     const Tensor<T>& grad_out);

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  /// Per-element multiplier: 0 for dropped, 1/(1-rate) for kept.
  std::vector<T> mask;
};

/// Inverted dropout. Infer mode (or rate 0) is the identity and draws nothing
/// from the generator.
template <typename T>
DropoutResult<T> dropout(const Tensor<T>& input, double rate, Mode mode, Rng& rng);

template <typename T>
Tensor<T> dropout_backward(std::span<const T> mask, const Tensor<T>& grad_out);

template <typename T>
T sigmoid(T logit);

/// Elementwise sigmoid, clamped to the open interval (0, 1).
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& logits);

template <typename T>
struct BceResult {
  T loss;
  T grad_logit;  ///< d loss / d logit = p - y
};

/// Binary cross-entropy computed from the logit:
///   max(z, 0) - z*y + log(1 + exp(-|z|)).
template <typename T>
BceResult<T> bce_with_logit(T logit, int label);

struct OptimizerState {
  double base_lr = 0.1;
  double decay_rate = 0.96;
  std::int64_t decay_steps = 2000;
  std::int64_t step_count = 0;
  double weight_decay = 0.0;

  /// Staircase schedule: base_lr * decay_rate ^ floor(step_count / decay_steps).
  double effective_lr() const;
};

template <typename T>
struct ParamRef {
  std::span<T> value;
  std::span<const T> grad;
};

/// p <- p - lr * (g + weight_decay * p) for every pair, then step_count += 1.
template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, OptimizerState& opt);

}  // namespace poredet::nn
