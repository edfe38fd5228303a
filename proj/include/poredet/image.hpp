#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "poredet/tensor.hpp"

namespace poredet {

/// Grayscale raster with intensities in [0, 1], row-major.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int height, int width, float fill = 0.0f);
  GrayImage(int height, int width, std::vector<float> pixels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  float& operator()(int row, int col) noexcept { return pixels_[index(row, col)]; }
  float operator()(int row, int col) const noexcept { return pixels_[index(row, col)]; }
  const std::vector<float>& pixels() const noexcept { return pixels_; }
  std::vector<float>& pixels() noexcept { return pixels_; }

  /// Copy of the window with top-left corner (row, col).
  GrayImage crop(int row, int col, int height, int width) const;
  /// 1 x H x W x 1 tensor view of the image.
  FeatureMap to_tensor() const;

  bool operator==(const GrayImage&) const = default;

 private:
  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * width_ + col;
  }
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

/// Reads binary (P5) or ASCII (P2) graymaps with maxval <= 255. Pixel values
/// are divided by maxval.
GrayImage read_pgm(std::istream& in);
GrayImage load_image(const std::filesystem::path& path);

/// Writes a binary P5 graymap, rounding to the nearest 8-bit level.
void write_pgm(const GrayImage& image, std::ostream& out);
void save_image(const GrayImage& image, const std::filesystem::path& path);

}  // namespace poredet
