#include "poredet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "poredet/errors.hpp"
#include "poredet/model.hpp"

namespace poredet {

void SynthConfig::validate() const {
  if (height < 64 || width < 64) throw ValidationError("synthetic images must be at least 64x64");
  if (!(ridge_period >= 4.0)) throw ValidationError("ridge period must be >= 4 pixels");
  if (pore_count < 0) throw ValidationError("pore count must be non-negative");
  if (!(pore_radius_min >= 1.0 && pore_radius_max <= 3.0 && pore_radius_min <= pore_radius_max)) {
    throw ValidationError("pore radius range must lie within [1, 3]");
  }
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise sigma must be non-negative");
  if (!(blur_sigma >= 0.0)) throw ValidationError("blur sigma must be non-negative");
  if (!(pore_contrast_min > 0.0 && pore_contrast_min <= pore_contrast_max)) {
    throw ValidationError("pore contrast range must be positive and ordered");
  }
  if (scar_count < 0) throw ValidationError("scar count must be non-negative");
  if (warp_components < 0) throw ValidationError("warp component count must be non-negative");
}

std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t index) {
  // splitmix64 finalizer
  std::uint64_t z = base_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

constexpr int kMinPoreSpacing = 8;
constexpr double kPi = std::numbers::pi;

struct Warp {
  double amplitude, fy, fx, phase;
};

using Plane = std::vector<double>;

void gaussian_blur(Plane& img, int h, int w, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& k : kernel) k /= total;
  Plane tmp(img.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[i + radius] * img[static_cast<std::size_t>(r) * w + std::clamp(c + i, 0, w - 1)];
      }
      tmp[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[i + radius] * tmp[static_cast<std::size_t>(std::clamp(r + i, 0, h - 1)) * w + c];
      }
      img[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
}

}  // namespace

SynthImage generate(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double theta = unit(rng) * kPi;
  const double k = 2.0 * kPi / config.ridge_period;
  std::vector<Warp> warps;
  for (int i = 0; i < config.warp_components; ++i) {
    const double wavelength = 80.0 + 80.0 * unit(rng);
    const double dir = unit(rng) * 2.0 * kPi;
    warps.push_back({config.warp_amplitude * (0.25 + 0.75 * unit(rng)),
                     2.0 * kPi * std::sin(dir) / wavelength, 2.0 * kPi * std::cos(dir) / wavelength,
                     unit(rng) * 2.0 * kPi});
  }
  const double ridge_level = 0.2 + 0.15 * unit(rng);
  const double valley_level = 0.7 + 0.15 * unit(rng);

  const int h = config.height, w = config.width;
  std::vector<double> ridge_cos(static_cast<std::size_t>(h) * w);
  Plane background(ridge_cos.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double phase = k * (c * std::cos(theta) + r * std::sin(theta));
      for (const auto& wp : warps) phase += wp.amplitude * std::sin(wp.fy * r + wp.fx * c + wp.phase);
      const double cv = std::cos(phase);
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      ridge_cos[i] = cv;
      background[i] = ridge_level + (valley_level - ridge_level) * (0.5 + 0.5 * cv);
    }
  }

  // Scars: straight bright streaks of random length and direction.
  for (int s = 0; s < config.scar_count; ++s) {
    const double r0 = unit(rng) * h, c0 = unit(rng) * w;
    const double dir = unit(rng) * kPi;
    const double half_len = 10.0 + 15.0 * unit(rng);
    const double half_width = 0.8 + 0.7 * unit(rng);
    const double level = valley_level * (0.9 + 0.1 * unit(rng));
    const double dr = std::sin(dir), dc = std::cos(dir);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double along = (r - r0) * dr + (c - c0) * dc;
        const double across = -(r - r0) * dc + (c - c0) * dr;
        if (std::abs(along) <= half_len && std::abs(across) <= half_width) {
          double& px = background[static_cast<std::size_t>(r) * w + c];
          px = std::max(px, level);
        }
      }
    }
  }

  gaussian_blur(background, h, w, config.blur_sigma);
  SynthImage out{GrayImage(h, w), {}};
  std::normal_distribution<double> noise(0.0, config.noise_sigma);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double v = background[static_cast<std::size_t>(r) * w + c];
      if (config.noise_sigma > 0.0) v += noise(rng);
      out.image(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  // Candidate pore sites: ridge centerline pixels away from the border.
  std::vector<Point> candidates;
  for (int r = kBorder; r < h - kBorder; ++r) {
    for (int c = kBorder; c < w - kBorder; ++c) {
      if (ridge_cos[static_cast<std::size_t>(r) * w + c] < -0.9) candidates.push_back({r, c});
    }
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::vector<Point>& pores = out.truth.pores;
  for (const Point& p : candidates) {
    if (static_cast<int>(pores.size()) == config.pore_count) break;
    const bool clear = std::none_of(pores.begin(), pores.end(), [&](const Point& q) {
      return std::max(std::abs(p.row - q.row), std::abs(p.col - q.col)) < kMinPoreSpacing;
    });
    if (clear) pores.push_back(p);
  }
  if (static_cast<int>(pores.size()) < config.pore_count) {
    throw ValidationError("cannot place " + std::to_string(config.pore_count) + " pores (" +
                          std::to_string(pores.size()) + " fit)");
  }
  std::sort(pores.begin(), pores.end());

  // Bright disks with profile 1 - (d / (radius + 1))^2, peaking a random
  // margin above the brightest pixel of the 5x5 surround.
  for (const Point& p : pores) {
    const double radius =
        config.pore_radius_min + (config.pore_radius_max - config.pore_radius_min) * unit(rng);
    const double contrast =
        config.pore_contrast_min + (config.pore_contrast_max - config.pore_contrast_min) * unit(rng);
    float surround = 0.0f;
    for (int dr = -2; dr <= 2; ++dr) {
      for (int dc = -2; dc <= 2; ++dc) surround = std::max(surround, out.image(p.row + dr, p.col + dc));
    }
    const double peak = std::min(1.0, surround + contrast);
    const double reach = radius + 1.0;
    const int span = static_cast<int>(std::ceil(reach));
    for (int dr = -span; dr <= span; ++dr) {
      for (int dc = -span; dc <= span; ++dc) {
        const double d = std::hypot(dr, dc);
        if (d >= reach) continue;
        const double f = 1.0 - (d / reach) * (d / reach);
        float& px = out.image(p.row + dr, p.col + dc);
        px = std::max(px, static_cast<float>(peak * f));
      }
    }
  }

  for (const Point& p : pores) {
    for (int dr = -2; dr <= 2; ++dr) {
      for (int dc = -2; dc <= 2; ++dc) {
        if (out.image(p.row + dr, p.col + dc) > out.image(p.row, p.col)) {
          throw std::logic_error("synthetic pore is not a local intensity maximum");
        }
      }
    }
  }
  return out;
}

std::vector<std::filesystem::path> generate_dataset(const std::filesystem::path& directory, int n,
                                                    const SynthConfig& config_template,
                                                    std::uint64_t base_seed) {
  if (n < 3) throw ValidationError("a synthetic dataset needs at least 3 images");
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory.string() + ": " + ec.message());
  const int digits = std::max(3, static_cast<int>(std::to_string(n - 1).size()));
  std::vector<std::filesystem::path> paths;
  for (int i = 0; i < n; ++i) {
    SynthConfig cfg = config_template;
    cfg.seed = derive_seed(base_seed, static_cast<std::uint64_t>(i));
    const SynthImage img = generate(cfg);
    std::string index = std::to_string(i);
    index.insert(0, static_cast<std::size_t>(digits) - std::min<std::size_t>(digits, index.size()), '0');
    const std::string stem = "synth_" + index;
    const auto image_path = directory / (stem + ".pgm");
    save_image(img.image, image_path);
    save_annotations(img.truth, directory / (stem + ".txt"));
    paths.push_back(image_path);
  }
  return paths;
}

}  // namespace poredet
