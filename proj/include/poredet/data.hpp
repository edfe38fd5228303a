#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "poredet/image.hpp"
#include "poredet/nn.hpp"

namespace poredet {

/// Pixel coordinate, 0-indexed in memory.
struct Point {
  int row = 0;
  int col = 0;
  auto operator<=>(const Point&) const = default;
};

/// Ground-truth pore centers of one image.
struct PoreAnnotations {
  std::vector<Point> pores;
  bool operator==(const PoreAnnotations&) const = default;
};

/// Parses "row col" lines, 1-indexed on disk. Blank lines are skipped.
/// With swap_axes the two columns are read as "col row".
/// Throws ParseError (malformed line) or ValidationError (out of bounds,
/// duplicate).
PoreAnnotations parse_annotations(std::istream& in, int height, int width, bool swap_axes = false);
PoreAnnotations load_annotations(const std::filesystem::path& path, int height, int width,
                                 bool swap_axes = false);
void write_annotations(const PoreAnnotations& annotations, std::ostream& out);
void save_annotations(const PoreAnnotations& annotations, const std::filesystem::path& path);

struct Sample {
  std::string name;  ///< file stem
  GrayImage image;
  PoreAnnotations truth;
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<Sample> test;
};

enum class SplitMode {
  /// Exactly 30 pairs: first 15 train, next 5 validation, last 10 test.
  Benchmark,
  /// Any n >= 3: floor(n/2) train, round(n/6) validation, the rest test.
  Proportional,
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};
SplitSizes split_sizes(std::size_t n, SplitMode mode);

/// Image files (*.pgm) paired with same-stem *.txt annotations, sorted by
/// file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& directory);
std::vector<Sample> load_samples(const std::filesystem::path& directory, bool swap_axes = false);
DatasetSplit split_samples(std::vector<Sample> samples, SplitMode mode);
DatasetSplit split_dataset(const std::filesystem::path& directory, SplitMode mode,
                           bool swap_axes = false);

/// Returns 1 iff some pore lies within Chebyshev distance 3 of center (the
/// centered 7x7 box), else 0.
int label_patch(Point center, const PoreAnnotations& annotations);

/// True when the 17x17 window centered at p lies inside the image.
bool is_valid_center(Point p, int height, int width);

/// Per-pixel patch labels for one image (row-major, 0/1).
std::vector<std::uint8_t> label_mask(int height, int width, const PoreAnnotations& annotations);

struct PatchExample {
  GrayImage patch;  ///< 17x17
  int label = 0;
  std::size_t image_index = 0;
  Point center;
};

/// Draws training patches across a set of images. Positives jitter a
/// uniformly chosen pore inside its 7x7 label box; negatives are uniform
/// valid centers with label 0. Exactly round(batch * pos_fraction) positives.
class PatchSampler {
 public:
  PatchSampler(std::span<const Sample> samples, double pos_fraction);

  std::vector<PatchExample> sample(int batch_size, nn::Rng& rng) const;

 private:
  Point positive_center(nn::Rng& rng, std::size_t& image) const;
  Point negative_center(nn::Rng& rng, std::size_t& image) const;

  std::span<const Sample> samples_;
  double pos_fraction_;
  std::vector<std::vector<std::uint8_t>> masks_;
  std::vector<std::pair<std::size_t, Point>> pores_;
};

std::vector<PatchExample> sample_batch(std::span<const Sample> samples, int batch_size,
                                       double pos_fraction, nn::Rng& rng);

/// Stacks patches into an N x 17 x 17 x 1 tensor plus labels.
FeatureMap stack_patches(std::span<const PatchExample> patches);

}  // namespace poredet
