#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "poredet/data.hpp"
#include "poredet/image.hpp"

namespace poredet {

struct SynthConfig {
  int height = 160;
  int width = 160;
  double ridge_period = 12.0;
  /// Number of low-frequency sinusoids bending the ridge phase.
  int warp_components = 2;
  double warp_amplitude = 2.0;  ///< radians, per component maximum
  int pore_count = 70;
  double pore_radius_min = 1.0;
  double pore_radius_max = 2.5;
  /// Pore peak brightness above the brightest pixel of its 5x5 surround.
  double pore_contrast_min = 0.04;
  double pore_contrast_max = 0.4;
  /// Bright streaks crossing the ridges (non-pore distractors).
  int scar_count = 3;
  double blur_sigma = 0.8;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthImage {
  GrayImage image;
  PoreAnnotations truth;
};

/// Dark sinusoidal ridges following a smoothly warped phase field plus a few
/// bright scars, blurred, with additive Gaussian noise. Pores are bright
/// disks on ridge centerlines drawn last, each peaking above its 5x5
/// surround. Pores keep Chebyshev distance >= 8 from each other and from the
/// image border. Deterministic per config (seed included).
SynthImage generate(const SynthConfig& config);

/// Writes n image/annotation pairs (synth_000.pgm, synth_000.txt, ...) into
/// directory, deriving one seed per image from base_seed. Returns the image
/// paths in sort order.
std::vector<std::filesystem::path> generate_dataset(const std::filesystem::path& directory, int n,
                                                    const SynthConfig& config_template,
                                                    std::uint64_t base_seed);

/// Per-image seed used by generate_dataset.
std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t index);

}  // namespace poredet
