#include "poredet/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "poredet/errors.hpp"

namespace poredet::nn {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

Shape conv_output_shape(const Shape& in, int kh, int kw, int cout) {
  return Shape{in.batch, in.height - kh + 1, in.width - kw + 1, cout};
}

template <typename T>
void check_conv_input(const Tensor<T>& input, const ConvParams<T>& params) {
  params.validate();
  if (input.channels() != params.in_channels) {
    throw SizeMismatch("conv input has " + std::to_string(input.channels()) +
                       " channels, kernel expects " + std::to_string(params.in_channels));
  }
  if (input.height() < params.kernel_h || input.width() < params.kernel_w) {
    throw SizeMismatch("conv input " + input.shape().str() + " smaller than " +
                       std::to_string(params.kernel_h) + "x" + std::to_string(params.kernel_w) +
                       " kernel");
  }
}

// Grow-only scratch buffers, one set per thread. Large im2col matrices would
// otherwise be mapped and faulted in afresh on every call. Every Eigen operand
// lives here because vectorized products pick their summation order from
// pointer alignment; heap addresses would make results vary between runs.
enum Slot { kCols, kGradCols, kWeights, kProduct, kGradOut, kSlots };

template <typename T>
T* scratch(Slot slot, std::size_t count) {
  thread_local std::vector<T, Eigen::aligned_allocator<T>> buffers[kSlots];
  auto& buf = buffers[slot];
  if (buf.size() < count) buf.resize(count);
  return buf.data();
}

template <typename T>
ConstMatrixMap<T> aligned_copy(std::span<const T> values, Slot slot, Eigen::Index rows, Eigen::Index cols) {
  T* dst = scratch<T>(slot, values.size());
  std::copy(values.begin(), values.end(), dst);
  return ConstMatrixMap<T>(dst, rows, cols);
}

// Row r = (n, oy, ox); column = (ky, kx, c). Matches the weight layout so the
// convolution is a single matrix product.
template <typename T>
MatrixMap<T> im2col(const Tensor<T>& input, int kh, int kw) {
  const Shape in = input.shape();
  const int out_h = in.height - kh + 1;
  const int out_w = in.width - kw + 1;
  const int c = in.channels;
  const Eigen::Index rows = static_cast<Eigen::Index>(in.batch) * out_h * out_w;
  const Eigen::Index width = static_cast<Eigen::Index>(kh) * kw * c;
  MatrixMap<T> cols(scratch<T>(kCols, static_cast<std::size_t>(rows * width)), rows, width);
  T* dst = cols.data();
  for (int n = 0; n < in.batch; ++n) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        for (int ky = 0; ky < kh; ++ky) {
          const T* src = input.data() + input.index(n, oy + ky, ox, 0);
          std::copy_n(src, static_cast<std::size_t>(kw) * c, dst);
          dst += static_cast<std::ptrdiff_t>(kw) * c;
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im_add(const MatrixMap<T>& cols, int kh, int kw, Tensor<T>& grad_input) {
  const Shape in = grad_input.shape();
  const int out_h = in.height - kh + 1;
  const int out_w = in.width - kw + 1;
  const int run = kw * in.channels;
  const T* src = cols.data();
  for (int n = 0; n < in.batch; ++n) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        for (int ky = 0; ky < kh; ++ky) {
          T* dst = grad_input.data() + grad_input.index(n, oy + ky, ox, 0);
          for (int i = 0; i < run; ++i) dst[i] += src[i];
          src += run;
        }
      }
    }
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw SizeMismatch(std::string(what) + ": shape " + a.shape().str() + " vs " +
                       b.shape().str());
  }
}

}  // namespace

template <typename T>
void ConvParams<T>::validate() const {
  if (kernel_h < 1 || kernel_w < 1 || in_channels < 1 || out_channels < 1) {
    throw SizeMismatch("conv params have non-positive dimensions");
  }
  if (weights.size() != static_cast<std::size_t>(kernel_h) * kernel_w * in_channels * out_channels ||
      bias.size() != static_cast<std::size_t>(out_channels)) {
    throw SizeMismatch("conv weight/bias arrays do not match declared dimensions");
  }
}

template <typename T>
void BatchNormState<T>::validate() const {
  const std::size_t c = gamma.size();
  if (c == 0 || beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw SizeMismatch("batch-norm arrays have inconsistent channel counts");
  }
}

template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& input, const ConvParams<T>& params) {
  check_conv_input(input, params);
  Tensor<T> out(conv_output_shape(input.shape(), params.kernel_h, params.kernel_w,
                                  params.out_channels));
  if (input.batch() == 0) return out;
  const MatrixMap<T> cols = im2col(input, params.kernel_h, params.kernel_w);
  const auto w = aligned_copy<T>(params.weights, kWeights, cols.cols(), params.out_channels);
  MatrixMap<T> o(scratch<T>(kProduct, out.size()), cols.rows(), params.out_channels);
  o.noalias() = cols * w;
  const T* src = o.data();
  T* dst = out.data();
  for (Eigen::Index r = 0; r < o.rows(); ++r) {
    for (int c = 0; c < params.out_channels; ++c) *dst++ = *src++ + params.bias[c];
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                             const Tensor<T>& grad_out, bool need_input_grad) {
  check_conv_input(input, params);
  const Shape expected =
      conv_output_shape(input.shape(), params.kernel_h, params.kernel_w, params.out_channels);
  if (grad_out.shape() != expected) {
    throw SizeMismatch("conv grad_out shape " + grad_out.shape().str() + ", expected " +
                       expected.str());
  }
  ConvGrads<T> grads;
  grads.weights.assign(params.weights.size(), T(0));
  grads.bias.assign(params.bias.size(), T(0));
  if (need_input_grad) grads.input = Tensor<T>(input.shape());
  if (input.batch() == 0) return grads;

  const MatrixMap<T> cols = im2col(input, params.kernel_h, params.kernel_w);
  const auto g = aligned_copy<T>(grad_out.values(), kGradOut, cols.rows(), params.out_channels);
  MatrixMap<T> gw(scratch<T>(kProduct, grads.weights.size()), cols.cols(), params.out_channels);
  gw.noalias() = cols.transpose() * g;
  std::copy_n(gw.data(), grads.weights.size(), grads.weights.begin());
  const T* row = grad_out.data();
  for (Eigen::Index r = 0; r < cols.rows(); ++r) {
    for (int c = 0; c < params.out_channels; ++c) grads.bias[c] += *row++;
  }

  if (need_input_grad) {
    const auto w = aligned_copy<T>(params.weights, kWeights, cols.cols(), params.out_channels);
    MatrixMap<T> gcols(scratch<T>(kGradCols, static_cast<std::size_t>(cols.size())), cols.rows(), cols.cols());
    gcols.noalias() = g * w.transpose();
    col2im_add(gcols, params.kernel_h, params.kernel_w, grads.input);
  }
  return grads;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (T& v : out.values()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  require_same_shape(input, grad_out, "relu_backward");
  Tensor<T> grad(input.shape());
  const T* x = input.data();
  const T* g = grad_out.data();
  T* d = grad.data();
  for (std::size_t i = 0; i < input.size(); ++i) d[i] = x[i] > T(0) ? g[i] : T(0);
  return grad;
}

template <typename T>
PoolResult<T> maxpool3x3_s1(const Tensor<T>& input) {
  const Shape in = input.shape();
  if (in.height < 3 || in.width < 3) {
    throw SizeMismatch("max pooling input " + in.str() + " smaller than 3x3 window");
  }
  PoolResult<T> result;
  result.output = Tensor<T>(Shape{in.batch, in.height - 2, in.width - 2, in.channels});
  result.argmax.resize(result.output.size());
  const int c = in.channels;
  std::size_t o = 0;
  for (int n = 0; n < in.batch; ++n) {
    for (int oy = 0; oy < in.height - 2; ++oy) {
      for (int ox = 0; ox < in.width - 2; ++ox, o += c) {
        T* best = result.output.data() + o;
        std::uint32_t* arg = result.argmax.data() + o;
        const std::size_t first = input.index(n, oy, ox, 0);
        for (int ch = 0; ch < c; ++ch) {
          best[ch] = input.data()[first + ch];
          arg[ch] = static_cast<std::uint32_t>(first + ch);
        }
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            if (ky == 0 && kx == 0) continue;
            const std::size_t base = input.index(n, oy + ky, ox + kx, 0);
            const T* src = input.data() + base;
            for (int ch = 0; ch < c; ++ch) {
              if (src[ch] > best[ch]) {
                best[ch] = src[ch];
                arg[ch] = static_cast<std::uint32_t>(base + ch);
              }
            }
          }
        }
      }
    }
  }
  return result;
}

template <typename T>
Tensor<T> maxpool3x3_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                              const Tensor<T>& grad_out) {
  const Shape expected{input_shape.batch, input_shape.height - 2, input_shape.width - 2,
                       input_shape.channels};
  if (grad_out.shape() != expected || argmax.size() != grad_out.size()) {
    throw SizeMismatch("max pooling grad_out shape " + grad_out.shape().str() + ", expected " +
                       expected.str());
  }
  Tensor<T> grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad.data()[argmax[i]] += grad_out.data()[i];
  return grad;
}

template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, BatchNormState<T>& state, Mode mode) {
  if (mode == Mode::Infer) {
    BatchNormResult<T> r;
    r.output = batchnorm_infer(input, state);
    return r;
  }
  state.validate();
  const int c = input.channels();
  if (c != state.channels()) {
    throw SizeMismatch("batch norm over " + std::to_string(c) + " channels, state has " +
                       std::to_string(state.channels()));
  }
  if (input.batch() == 0) throw SizeMismatch("batch norm in train mode needs a non-empty batch");

  const std::size_t count = input.size() / c;
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  const T* x = input.data();
  for (std::size_t i = 0; i < count; ++i) {
    for (int ch = 0; ch < c; ++ch) mean[ch] += x[i * c + ch];
  }
  for (double& m : mean) m /= static_cast<double>(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double d = x[i * c + ch] - mean[ch];
      var[ch] += d * d;
    }
  }
  for (double& v : var) v /= static_cast<double>(count);

  BatchNormResult<T> r;
  r.cache.inv_std.resize(c);
  std::vector<T> mean_t(c);
  for (int ch = 0; ch < c; ++ch) {
    r.cache.inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var[ch] + double(state.epsilon)));
    mean_t[ch] = static_cast<T>(mean[ch]);
  }
  r.cache.normalized = Tensor<T>(input.shape());
  r.output = Tensor<T>(input.shape());
  T* xhat = r.cache.normalized.data();
  T* y = r.output.data();
  for (std::size_t i = 0; i < count; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t k = i * c + ch;
      xhat[k] = (x[k] - mean_t[ch]) * r.cache.inv_std[ch];
      y[k] = state.gamma[ch] * xhat[k] + state.beta[ch];
    }
  }
  const T m = state.momentum;
  for (int ch = 0; ch < c; ++ch) {
    state.running_mean[ch] = m * state.running_mean[ch] + (T(1) - m) * static_cast<T>(mean[ch]);
    state.running_var[ch] = m * state.running_var[ch] + (T(1) - m) * static_cast<T>(var[ch]);
  }
  return r;
}

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& input, const BatchNormState<T>& state) {
  state.validate();
  const int c = input.channels();
  if (c != state.channels()) {
    throw SizeMismatch("batch norm over " + std::to_string(c) + " channels, state has " +
                       std::to_string(state.channels()));
  }
  std::vector<T> scale(c), shift(c);
  for (int ch = 0; ch < c; ++ch) {
    scale[ch] = state.gamma[ch] / std::sqrt(state.running_var[ch] + state.epsilon);
    shift[ch] = state.beta[ch] - state.running_mean[ch] * scale[ch];
  }
  Tensor<T> out(input.shape());
  const std::size_t count = input.size() / c;
  const T* x = input.data();
  T* y = out.data();
  for (std::size_t i = 0; i < count; ++i) {
    for (int ch = 0; ch < c; ++ch) y[i * c + ch] = x[i * c + ch] * scale[ch] + shift[ch];
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const std::vector<T>& gamma,
                                     const Tensor<T>& grad_out) {
  require_same_shape(cache.normalized, grad_out, "batchnorm_backward");
  const int c = grad_out.channels();
  if (gamma.size() != static_cast<std::size_t>(c) || cache.inv_std.size() != gamma.size()) {
    throw SizeMismatch("batchnorm_backward channel count mismatch");
  }
  const std::size_t count = grad_out.size() / c;
  const T* g = grad_out.data();
  const T* xhat = cache.normalized.data();
  std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t k = i * c + ch;
      sum_g[ch] += g[k];
      sum_gx[ch] += static_cast<double>(g[k]) * xhat[k];
    }
  }
  BatchNormGrads<T> grads;
  grads.gamma.resize(c);
  grads.beta.resize(c);
  std::vector<T> coef(c), mean_g(c), mean_gx(c);
  for (int ch = 0; ch < c; ++ch) {
    grads.beta[ch] = static_cast<T>(sum_g[ch]);
    grads.gamma[ch] = static_cast<T>(sum_gx[ch]);
    coef[ch] = gamma[ch] * cache.inv_std[ch];
    mean_g[ch] = static_cast<T>(sum_g[ch] / static_cast<double>(count));
    mean_gx[ch] = static_cast<T>(sum_gx[ch] / static_cast<double>(count));
  }
  grads.input = Tensor<T>(grad_out.shape());
  T* dx = grads.input.data();
  for (std::size_t i = 0; i < count; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t k = i * c + ch;
      dx[k] = coef[ch] * (g[k] - mean_g[ch] - xhat[k] * mean_gx[ch]);
    }
  }
  return grads;
}

template <typename T>
DropoutResult<T> dropout(const Tensor<T>& input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must be in [0, 1)");
  DropoutResult<T> r;
  if (mode == Mode::Infer || rate == 0.0) {
    r.output = input;
    r.mask.assign(input.size(), T(1));
    return r;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::bernoulli_distribution keep(1.0 - rate);
  r.output = Tensor<T>(input.shape());
  r.mask.resize(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    r.mask[i] = keep(rng) ? keep_scale : T(0);
    r.output.data()[i] = input.data()[i] * r.mask[i];
  }
  return r;
}

template <typename T>
Tensor<T> dropout_backward(std::span<const T> mask, const Tensor<T>& grad_out) {
  if (mask.size() != grad_out.size()) throw SizeMismatch("dropout mask size mismatch");
  Tensor<T> grad(grad_out.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) grad.data()[i] = grad_out.data()[i] * mask[i];
  return grad;
}

template <typename T>
T sigmoid(T logit) {
  if (logit >= T(0)) return T(1) / (T(1) + std::exp(-logit));
  const T e = std::exp(logit);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& logits) {
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.data()[i] = std::clamp(sigmoid(logits.data()[i]), lo, hi);
  }
  return out;
}

template <typename T>
BceResult<T> bce_with_logit(T logit, int label) {
  if (label != 0 && label != 1) throw ValidationError("binary label must be 0 or 1");
  const T y = static_cast<T>(label);
  const T loss = std::max(logit, T(0)) - logit * y + std::log1p(std::exp(-std::abs(logit)));
  return {loss, sigmoid(logit) - y};
}

double OptimizerState::effective_lr() const {
  const std::int64_t stage = decay_steps > 0 ? step_count / decay_steps : 0;
  return base_lr * std::pow(decay_rate, static_cast<double>(stage));
}

template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, OptimizerState& opt) {
  for (const auto& p : params) {
    if (p.value.size() != p.grad.size()) throw SizeMismatch("sgd parameter/gradient size mismatch");
  }
  const T lr = static_cast<T>(opt.effective_lr());
  const T wd = static_cast<T>(opt.weight_decay);
  for (const auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      p.value[i] -= lr * (p.grad[i] + wd * p.value[i]);
    }
  }
  ++opt.step_count;
}

#define POREDET_INSTANTIATE(T)                                                                 \
  template struct ConvParams<T>;                                                               \
  template struct BatchNormState<T>;                                                           \
  template Tensor<T> conv2d_valid(const Tensor<T>&, const ConvParams<T>&);                     \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const ConvParams<T>&,                \
                                        const Tensor<T>&, bool);                               \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                        \
  template PoolResult<T> maxpool3x3_s1(const Tensor<T>&);                                      \
  template Tensor<T> maxpool3x3_backward(const Shape&, std::span<const std::uint32_t>,         \
                                         const Tensor<T>&);                                    \
  template BatchNormResult<T> batchnorm_forward(const Tensor<T>&, BatchNormState<T>&, Mode);   \
  template Tensor<T> batchnorm_infer(const Tensor<T>&, const BatchNormState<T>&);              \
  template BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>&,                      \
                                                const std::vector<T>&, const Tensor<T>&);      \
  template DropoutResult<T> dropout(const Tensor<T>&, double, Mode, Rng&);                     \
  template Tensor<T> dropout_backward(std::span<const T>, const Tensor<T>&);                   \
  template T sigmoid(T);                                                                       \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template BceResult<T> bce_with_logit(T, int);                                                \
  template void sgd_step(std::span<const ParamRef<T>>, OptimizerState&);

POREDET_INSTANTIATE(float)
POREDET_INSTANTIATE(double)

#undef POREDET_INSTANTIATE

}  // namespace poredet::nn
