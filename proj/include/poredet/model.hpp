#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "poredet/nn.hpp"
#include "poredet/tensor.hpp"

namespace poredet {

/// Side of the square input window that maps to one output unit.
inline constexpr int kReceptiveField = 17;
/// Offset between an output cell and the image pixel it describes.
inline constexpr int kBorder = kReceptiveField / 2;

struct PoreLayer {
  nn::ConvParams<float> conv;
  nn::BatchNormState<float> bn;
  bool operator==(const PoreLayer&) const = default;
};

/// Four-layer FCN:
///   [conv3x3 -> ReLU -> BN -> maxpool3x3] x3 (32, 64, 128 filters)
///   -> dropout -> conv5x5 (1 filter) -> BN -> sigmoid
/// Valid padding and unit stride everywhere, so an MxN image yields an
/// (M-16)x(N-16) probability map.
struct PoreModel {
  std::array<PoreLayer, 4> layers;
  float dropout_rate = 0.2f;
  /// Optimizer steps taken so far; persisted with the checkpoint.
  std::int64_t step_count = 0;

  /// Throws SizeMismatch unless the layers have the fixed architecture.
  void validate() const;
  bool operator==(const PoreModel&) const = default;
};

struct ModelConfig {
  std::uint64_t seed = 0;
  float dropout_rate = 0.2f;
  float bn_epsilon = 1e-3f;
  float bn_momentum = 0.99f;
};

/// Filter counts of layers 1..4.
inline constexpr std::array<int, 4> kFilters{32, 64, 128, 1};
inline constexpr std::array<int, 4> kKernels{3, 3, 3, 5};

/// He-uniform weights (bound sqrt(6 / fan_in)), zero bias, identity batch norm.
PoreModel make_pore_model(const ModelConfig& config);

std::int64_t param_count(const nn::ConvParams<float>& conv);
std::int64_t param_count(const nn::BatchNormState<float>& bn);
/// Trainable parameters: conv weights and biases plus batch-norm gamma and beta.
/// Running statistics are not counted.
std::int64_t param_count(const PoreModel& model);

/// Intermediate values of a train-mode forward pass.
struct ForwardTrace {
  std::array<FeatureMap, 4> conv_inputs;
  std::array<FeatureMap, 3> pre_relu;
  std::array<nn::BatchNormCache<float>, 4> bn_caches;
  std::array<Shape, 3> pool_input_shapes;
  std::array<std::vector<std::uint32_t>, 3> pool_argmax;
  std::vector<float> dropout_mask;
  FeatureMap logits;  ///< N x (H-16) x (W-16) x 1
};

/// Train-mode forward pass. Updates batch-norm running statistics.
ForwardTrace forward_train(PoreModel& model, const FeatureMap& images, nn::Rng& rng);

/// Infer-mode logits; pure.
FeatureMap infer_logits(const PoreModel& model, const FeatureMap& images);

/// Probability map for a batch of single-channel images with sides >= 17.
/// Train mode updates batch-norm statistics and applies dropout.
FeatureMap forward(PoreModel& model, const FeatureMap& images, nn::Mode mode, nn::Rng& rng);
FeatureMap predict(const PoreModel& model, const FeatureMap& images);

struct ModelGrads {
  std::array<nn::ConvGrads<float>, 4> conv;
  std::array<std::vector<float>, 4> gamma;
  std::array<std::vector<float>, 4> beta;
};

ModelGrads backward(const PoreModel& model, const ForwardTrace& trace, const FeatureMap& grad_logits);

/// Applies one SGD step to every trainable array and advances both the
/// optimizer and model step counters.
void apply_sgd(PoreModel& model, const ModelGrads& grads, nn::OptimizerState& opt);

void save_checkpoint(const PoreModel& model, const std::filesystem::path& path);
PoreModel load_checkpoint(const std::filesystem::path& path);

/// Checkpoint layout, all integers and reals little-endian:
///   magic "PORECKPT" | u32 version | u32 layer_count
///   per layer: u32 kh, kw, cin, cout | f32 weights | f32 bias
///              f32 gamma | f32 beta | f32 running_mean | f32 running_var
///              f32 epsilon | f32 momentum
///   f32 dropout_rate | i64 step_count | u32 crc32 of everything before it
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const PoreModel& model);
PoreModel deserialize_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace poredet
