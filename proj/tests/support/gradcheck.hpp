#pragma once

// Finite-difference checks for every backward op, in double precision. Each
// function builds one random instance and returns the worst relative error
// across the gradients it checks. Loss is sum(output * R) for a random R, so
// the upstream gradient handed to backward is R itself.

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "poredet/nn.hpp"
#include "support/oracles.hpp"

namespace gradcheck {

using poredet::Shape;
using poredet::Tensor;
namespace nn = poredet::nn;

inline double weighted_sum(const Tensor<double>& t, const Tensor<double>& r) {
  return oracle::dot(t.values(), r.values());
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double conv(std::mt19937_64& rng) {
  const int k = uniform_int(rng, 0, 1) ? 3 : 5;
  const int cin = uniform_int(rng, 1, 3), cout = uniform_int(rng, 1, 3);
  Tensor<double> x = oracle::random_tensor({uniform_int(rng, 1, 2), k + uniform_int(rng, 0, 3),
                                            k + uniform_int(rng, 0, 3), cin},
                                           rng);
  nn::ConvParams<double> p(k, k, cin, cout);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& w : p.weights) w = u(rng);
  for (double& b : p.bias) b = u(rng);
  const Tensor<double> r = oracle::random_tensor(nn::conv2d_valid(x, p).shape(), rng);
  const auto grads = nn::conv2d_backward(x, p, r);
  auto loss = [&] { return weighted_sum(nn::conv2d_valid(x, p), r); };

  double worst = oracle::relative_error(grads.input.values(), oracle::numeric_gradient(x.storage(), loss));
  worst = std::max(worst, oracle::relative_error(grads.weights, oracle::numeric_gradient(p.weights, loss)));
  worst = std::max(worst, oracle::relative_error(grads.bias, oracle::numeric_gradient(p.bias, loss)));
  return worst;
}

inline double relu(std::mt19937_64& rng) {
  Tensor<double> x = oracle::random_tensor({2, uniform_int(rng, 2, 5), uniform_int(rng, 2, 5), 2}, rng);
  // Keep away from the kink so central differences stay one-sided-free.
  for (double& v : x.values()) {
    if (std::abs(v) < 1e-2) v = v < 0 ? -0.5 : 0.5;
  }
  const Tensor<double> r = oracle::random_tensor(x.shape(), rng);
  const auto g = nn::relu_backward(x, r);
  auto loss = [&] { return weighted_sum(nn::relu(x), r); };
  return oracle::relative_error(g.values(), oracle::numeric_gradient(x.storage(), loss));
}

inline double maxpool(std::mt19937_64& rng) {
  const Shape shape{uniform_int(rng, 1, 2), uniform_int(rng, 3, 7), uniform_int(rng, 3, 7), uniform_int(rng, 1, 3)};
  Tensor<double> x(shape);
  // Distinct values spaced well beyond the perturbation, so no argmax flips.
  std::vector<int> order(shape.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); ++i) x.storage()[i] = 0.01 * order[i];
  const auto fwd = nn::maxpool3x3_s1(x);
  const Tensor<double> r = oracle::random_tensor(fwd.output.shape(), rng);
  const auto g = nn::maxpool3x3_backward(shape, fwd.argmax, r);
  auto loss = [&] { return weighted_sum(nn::maxpool3x3_s1(x).output, r); };
  return oracle::relative_error(g.values(), oracle::numeric_gradient(x.storage(), loss));
}

inline double batchnorm(std::mt19937_64& rng) {
  const int channels = uniform_int(rng, 1, 3);
  Tensor<double> x = oracle::random_tensor(
      {uniform_int(rng, 2, 4), uniform_int(rng, 1, 3), uniform_int(rng, 1, 3), channels}, rng, -2.0, 2.0);
  nn::BatchNormState<double> state(channels, 1e-3, 0.99);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (double& v : state.gamma) v = u(rng);
  for (double& v : state.beta) v = u(rng) - 1.0;
  const auto fwd = nn::batchnorm_forward(x, state, nn::Mode::Train);
  const Tensor<double> r = oracle::random_tensor(fwd.output.shape(), rng);
  const auto g = nn::batchnorm_backward(fwd.cache, state.gamma, r);
  auto loss = [&] {
    auto scratch = state;  // running statistics do not affect train-mode output
    return weighted_sum(nn::batchnorm_forward(x, scratch, nn::Mode::Train).output, r);
  };
  double worst = oracle::relative_error(g.input.values(), oracle::numeric_gradient(x.storage(), loss));
  worst = std::max(worst, oracle::relative_error(g.gamma, oracle::numeric_gradient(state.gamma, loss)));
  worst = std::max(worst, oracle::relative_error(g.beta, oracle::numeric_gradient(state.beta, loss)));
  return worst;
}

inline double dropout(std::mt19937_64& rng) {
  Tensor<double> x = oracle::random_tensor({2, uniform_int(rng, 2, 5), uniform_int(rng, 2, 5), 3}, rng);
  const double rate = std::uniform_real_distribution<double>(0.0, 0.6)(rng);
  const std::uint64_t seed = rng();
  auto run = [&] {
    nn::Rng local(seed);  // same mask on every evaluation
    return nn::dropout(x, rate, nn::Mode::Train, local);
  };
  const auto fwd = run();
  const Tensor<double> r = oracle::random_tensor(x.shape(), rng);
  const auto g = nn::dropout_backward(std::span<const double>(fwd.mask), r);
  auto loss = [&] { return weighted_sum(run().output, r); };
  return oracle::relative_error(g.values(), oracle::numeric_gradient(x.storage(), loss));
}

inline double bce(std::mt19937_64& rng) {
  std::vector<double> logits(8);
  std::vector<int> labels(8);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (auto& z : logits) z = u(rng);
  for (auto& y : labels) y = uniform_int(rng, 0, 1);
  std::vector<double> analytic(8);
  for (std::size_t i = 0; i < 8; ++i) analytic[i] = nn::bce_with_logit(logits[i], labels[i]).grad_logit;
  auto loss = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < 8; ++i) s += nn::bce_with_logit(logits[i], labels[i]).loss;
    return s;
  };
  return oracle::relative_error(analytic, oracle::numeric_gradient(logits, loss));
}

struct Op {
  const char* name;
  double (*check)(std::mt19937_64&);
};

inline constexpr Op kOps[] = {
    {"conv2d", conv}, {"relu", relu}, {"maxpool3x3", maxpool},
    {"batchnorm", batchnorm}, {"dropout", dropout}, {"bce", bce},
};

}  // namespace gradcheck
