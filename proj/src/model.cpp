#include "poredet/model.hpp"

#include <cmath>
#include <string>

#include "poredet/errors.hpp"

namespace poredet {

void PoreModel::validate() const {
  int in_channels = 1;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& conv = layers[l].conv;
    conv.validate();
    layers[l].bn.validate();
    if (conv.kernel_h != kKernels[l] || conv.kernel_w != kKernels[l] ||
        conv.in_channels != in_channels || conv.out_channels != kFilters[l] ||
        layers[l].bn.channels() != kFilters[l]) {
      throw SizeMismatch("layer " + std::to_string(l + 1) + " does not match the pore FCN layout");
    }
    in_channels = conv.out_channels;
  }
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw ValidationError("dropout rate must be in [0, 1)");
  }
}

PoreModel make_pore_model(const ModelConfig& config) {
  nn::Rng rng(config.seed);
  PoreModel model;
  model.dropout_rate = config.dropout_rate;
  int in_channels = 1;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    layer.conv = nn::ConvParams<float>(kKernels[l], kKernels[l], in_channels, kFilters[l]);
    const float fan_in = static_cast<float>(kKernels[l] * kKernels[l] * in_channels);
    std::uniform_real_distribution<float> init(-std::sqrt(6.0f / fan_in), std::sqrt(6.0f / fan_in));
    for (float& w : layer.conv.weights) w = init(rng);
    layer.bn = nn::BatchNormState<float>(kFilters[l], config.bn_epsilon, config.bn_momentum);
    in_channels = kFilters[l];
  }
  model.validate();
  return model;
}

std::int64_t param_count(const nn::ConvParams<float>& conv) {
  return static_cast<std::int64_t>(conv.weights.size() + conv.bias.size());
}

std::int64_t param_count(const nn::BatchNormState<float>& bn) {
  return static_cast<std::int64_t>(bn.gamma.size() + bn.beta.size());
}

std::int64_t param_count(const PoreModel& model) {
  std::int64_t total = 0;
  for (const auto& layer : model.layers) total += param_count(layer.conv) + param_count(layer.bn);
  return total;
}

namespace {

void check_images(const FeatureMap& images) {
  if (images.channels() != 1) throw SizeMismatch("pore model expects single-channel images");
  if (images.height() < kReceptiveField || images.width() < kReceptiveField) {
    throw SizeMismatch("image " + images.shape().str() + " smaller than the 17x17 receptive field");
  }
}

}  // namespace

ForwardTrace forward_train(PoreModel& model, const FeatureMap& images, nn::Rng& rng) {
  check_images(images);
  ForwardTrace t;
  FeatureMap x = images;
  for (int l = 0; l < 3; ++l) {
    auto& layer = model.layers[l];
    t.conv_inputs[l] = std::move(x);
    t.pre_relu[l] = nn::conv2d_valid(t.conv_inputs[l], layer.conv);
    auto bn = nn::batchnorm_forward(nn::relu(t.pre_relu[l]), layer.bn, nn::Mode::Train);
    t.bn_caches[l] = std::move(bn.cache);
    t.pool_input_shapes[l] = bn.output.shape();
    auto pooled = nn::maxpool3x3_s1(bn.output);
    t.pool_argmax[l] = std::move(pooled.argmax);
    x = std::move(pooled.output);
  }
  auto dropped = nn::dropout(x, model.dropout_rate, nn::Mode::Train, rng);
  t.dropout_mask = std::move(dropped.mask);
  t.conv_inputs[3] = std::move(dropped.output);
  auto bn = nn::batchnorm_forward(nn::conv2d_valid(t.conv_inputs[3], model.layers[3].conv),
                                  model.layers[3].bn, nn::Mode::Train);
  t.bn_caches[3] = std::move(bn.cache);
  t.logits = std::move(bn.output);
  return t;
}

FeatureMap infer_logits(const PoreModel& model, const FeatureMap& images) {
  check_images(images);
  FeatureMap x = images;
  for (int l = 0; l < 3; ++l) {
    const auto& layer = model.layers[l];
    x = nn::maxpool3x3_s1(
            nn::batchnorm_infer(nn::relu(nn::conv2d_valid(x, layer.conv)), layer.bn))
            .output;
  }
  return nn::batchnorm_infer(nn::conv2d_valid(x, model.layers[3].conv), model.layers[3].bn);
}

FeatureMap forward(PoreModel& model, const FeatureMap& images, nn::Mode mode, nn::Rng& rng) {
  if (mode == nn::Mode::Infer) return predict(model, images);
  return nn::sigmoid(forward_train(model, images, rng).logits);
}

FeatureMap predict(const PoreModel& model, const FeatureMap& images) {
  return nn::sigmoid(infer_logits(model, images));
}

ModelGrads backward(const PoreModel& model, const ForwardTrace& trace, const FeatureMap& grad_logits) {
  ModelGrads grads;
  auto bn = nn::batchnorm_backward(trace.bn_caches[3], model.layers[3].bn.gamma, grad_logits);
  grads.gamma[3] = std::move(bn.gamma);
  grads.beta[3] = std::move(bn.beta);
  grads.conv[3] = nn::conv2d_backward(trace.conv_inputs[3], model.layers[3].conv, bn.input);
  FeatureMap g = nn::dropout_backward(std::span<const float>(trace.dropout_mask),
                                      grads.conv[3].input);
  grads.conv[3].input = FeatureMap();
  for (int l = 2; l >= 0; --l) {
    g = nn::maxpool3x3_backward(trace.pool_input_shapes[l], trace.pool_argmax[l], g);
    auto bnl = nn::batchnorm_backward(trace.bn_caches[l], model.layers[l].bn.gamma, g);
    grads.gamma[l] = std::move(bnl.gamma);
    grads.beta[l] = std::move(bnl.beta);
    g = nn::relu_backward(trace.pre_relu[l], bnl.input);
    grads.conv[l] = nn::conv2d_backward(trace.conv_inputs[l], model.layers[l].conv, g, l > 0);
    g = std::move(grads.conv[l].input);
    grads.conv[l].input = FeatureMap();
  }
  return grads;
}

void apply_sgd(PoreModel& model, const ModelGrads& grads, nn::OptimizerState& opt) {
  std::vector<nn::ParamRef<float>> refs;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    refs.push_back({layer.conv.weights, grads.conv[l].weights});
    refs.push_back({layer.conv.bias, grads.conv[l].bias});
    refs.push_back({layer.bn.gamma, grads.gamma[l]});
    refs.push_back({layer.bn.beta, grads.beta[l]});
  }
  nn::sgd_step<float>(refs, opt);
  model.step_count = opt.step_count;
}

}  // namespace poredet
