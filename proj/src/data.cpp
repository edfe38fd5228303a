#include "poredet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "poredet/errors.hpp"
#include "poredet/model.hpp"

namespace poredet {

PoreAnnotations parse_annotations(std::istream& in, int height, int width, bool swap_axes) {
  PoreAnnotations out;
  std::set<Point> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    long long a = 0, b = 0;
    std::string rest;
    if (!(fields >> a >> b) || (fields >> rest)) {
      throw ParseError("expected two integers \"row col\"", line_no);
    }
    if (swap_axes) std::swap(a, b);
    if (a < 1 || b < 1 || a > height || b > width) {
      throw ValidationError("annotation (" + std::to_string(a) + ", " + std::to_string(b) +
                            ") on line " + std::to_string(line_no) + " outside 1-indexed " +
                            std::to_string(height) + "x" + std::to_string(width) + " image");
    }
    const Point p{static_cast<int>(a - 1), static_cast<int>(b - 1)};
    if (!seen.insert(p).second) {
      throw ValidationError("duplicate annotation on line " + std::to_string(line_no));
    }
    out.pores.push_back(p);
  }
  return out;
}

PoreAnnotations load_annotations(const std::filesystem::path& path, int height, int width,
                                 bool swap_axes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations " + path.string());
  try {
    return parse_annotations(in, height, width, swap_axes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": expected two integers \"row col\"", e.line());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_annotations(const PoreAnnotations& annotations, std::ostream& out) {
  for (const Point& p : annotations.pores) out << p.row + 1 << ' ' << p.col + 1 << '\n';
}

void save_annotations(const PoreAnnotations& annotations, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write annotations " + path.string());
  write_annotations(annotations, out);
}

SplitSizes split_sizes(std::size_t n, SplitMode mode) {
  if (mode == SplitMode::Benchmark) {
    if (n != 30) {
      throw PairingError("benchmark split needs exactly 30 image/annotation pairs, found " +
                         std::to_string(n));
    }
    return {15, 5, 10};
  }
  if (n < 3) throw PairingError("dataset split needs at least 3 pairs");
  SplitSizes s;
  s.train = n / 2;
  s.validation = static_cast<std::size_t>(std::lround(static_cast<double>(n) / 6.0));
  s.test = n - s.train - s.validation;
  return s;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& directory) {
  if (!std::filesystem::is_directory(directory)) {
    throw IoError("not a directory: " + directory.string());
  }
  std::vector<std::filesystem::path> images;
  std::set<std::string> annotation_stems;
  for (const auto& entry : std::filesystem::directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    if (ext == ".pgm") images.push_back(entry.path());
    if (ext == ".txt") annotation_stems.insert(entry.path().stem().string());
  }
  std::sort(images.begin(), images.end(),
            [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  for (const auto& img : images) {
    if (!annotation_stems.erase(img.stem().string())) {
      throw PairingError("image " + img.filename().string() + " has no annotation file");
    }
  }
  if (!annotation_stems.empty()) {
    throw PairingError("annotation " + *annotation_stems.begin() + ".txt has no image");
  }
  return images;
}

std::vector<Sample> load_samples(const std::filesystem::path& directory, bool swap_axes) {
  std::vector<Sample> samples;
  for (const auto& path : list_images(directory)) {
    Sample s;
    s.name = path.stem().string();
    s.image = load_image(path);
    auto txt = path;
    txt.replace_extension(".txt");
    s.truth = load_annotations(txt, s.image.height(), s.image.width(), swap_axes);
    samples.push_back(std::move(s));
  }
  return samples;
}

DatasetSplit split_samples(std::vector<Sample> samples, SplitMode mode) {
  const SplitSizes sizes = split_sizes(samples.size(), mode);
  DatasetSplit split;
  auto it = std::make_move_iterator(samples.begin());
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes.train));
  it += static_cast<std::ptrdiff_t>(sizes.train);
  split.validation.assign(it, it + static_cast<std::ptrdiff_t>(sizes.validation));
  it += static_cast<std::ptrdiff_t>(sizes.validation);
  split.test.assign(it, std::make_move_iterator(samples.end()));
  return split;
}

DatasetSplit split_dataset(const std::filesystem::path& directory, SplitMode mode, bool swap_axes) {
  const auto images = list_images(directory);
  split_sizes(images.size(), mode);  // reject bad counts before decoding anything
  return split_samples(load_samples(directory, swap_axes), mode);
}

int label_patch(Point center, const PoreAnnotations& annotations) {
  for (const Point& p : annotations.pores) {
    if (std::abs(p.row - center.row) <= 3 && std::abs(p.col - center.col) <= 3) return 1;
  }
  return 0;
}

bool is_valid_center(Point p, int height, int width) {
  return p.row >= kBorder && p.col >= kBorder && p.row < height - kBorder &&
         p.col < width - kBorder;
}

std::vector<std::uint8_t> label_mask(int height, int width, const PoreAnnotations& annotations) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width, 0);
  for (const Point& p : annotations.pores) {
    for (int r = std::max(0, p.row - 3); r <= std::min(height - 1, p.row + 3); ++r) {
      for (int c = std::max(0, p.col - 3); c <= std::min(width - 1, p.col + 3); ++c) {
        mask[static_cast<std::size_t>(r) * width + c] = 1;
      }
    }
  }
  return mask;
}

namespace {
constexpr int kMaxAttempts = 100000;
}

PatchSampler::PatchSampler(std::span<const Sample> samples, double pos_fraction)
    : samples_(samples), pos_fraction_(pos_fraction) {
  if (!(pos_fraction >= 0.0 && pos_fraction <= 1.0)) {
    throw ValidationError("positive fraction must be in [0, 1]");
  }
  if (samples.empty()) throw ValidationError("patch sampling needs at least one image");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& img = samples[i].image;
    if (img.height() < kReceptiveField || img.width() < kReceptiveField) {
      throw SizeMismatch("image " + samples[i].name + " has no valid 17x17 patch centers");
    }
    masks_.push_back(label_mask(img.height(), img.width(), samples[i].truth));
    for (const Point& p : samples[i].truth.pores) pores_.emplace_back(i, p);
  }
}

Point PatchSampler::positive_center(nn::Rng& rng, std::size_t& image) const {
  std::uniform_int_distribution<std::size_t> pick(0, pores_.size() - 1);
  std::uniform_int_distribution<int> jitter(-3, 3);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const auto& [idx, pore] = pores_[pick(rng)];
    const Point c{pore.row + jitter(rng), pore.col + jitter(rng)};
    const auto& img = samples_[idx].image;
    if (is_valid_center(c, img.height(), img.width())) {
      image = idx;
      return c;
    }
  }
  throw ValidationError("no valid positive patch centers");
}

Point PatchSampler::negative_center(nn::Rng& rng, std::size_t& image) const {
  std::uniform_int_distribution<std::size_t> pick(0, samples_.size() - 1);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const std::size_t idx = pick(rng);
    const auto& img = samples_[idx].image;
    std::uniform_int_distribution<int> row(kBorder, img.height() - kBorder - 1);
    std::uniform_int_distribution<int> col(kBorder, img.width() - kBorder - 1);
    const Point c{row(rng), col(rng)};
    if (masks_[idx][static_cast<std::size_t>(c.row) * img.width() + c.col] == 0) {
      image = idx;
      return c;
    }
  }
  throw ValidationError("no valid negative patch centers");
}

std::vector<PatchExample> PatchSampler::sample(int batch_size, nn::Rng& rng) const {
  if (batch_size < 1) throw ValidationError("batch size must be positive");
  const int positives = static_cast<int>(std::lround(batch_size * pos_fraction_));
  if (positives > 0 && pores_.empty()) {
    throw ValidationError("positive patches requested but no pores are annotated");
  }
  std::vector<PatchExample> batch;
  batch.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    PatchExample ex;
    ex.center = i < positives ? positive_center(rng, ex.image_index)
                              : negative_center(rng, ex.image_index);
    ex.label = i < positives ? 1 : 0;
    ex.patch = samples_[ex.image_index].image.crop(ex.center.row - kBorder,
                                                   ex.center.col - kBorder, kReceptiveField,
                                                   kReceptiveField);
    batch.push_back(std::move(ex));
  }
  std::shuffle(batch.begin(), batch.end(), rng);
  return batch;
}

std::vector<PatchExample> sample_batch(std::span<const Sample> samples, int batch_size,
                                       double pos_fraction, nn::Rng& rng) {
  return PatchSampler(samples, pos_fraction).sample(batch_size, rng);
}

FeatureMap stack_patches(std::span<const PatchExample> patches) {
  FeatureMap out(static_cast<int>(patches.size()), kReceptiveField, kReceptiveField, 1);
  float* dst = out.data();
  for (const auto& p : patches) {
    if (p.patch.height() != kReceptiveField || p.patch.width() != kReceptiveField) {
      throw SizeMismatch("patch is not 17x17");
    }
    dst = std::copy(p.patch.pixels().begin(), p.patch.pixels().end(), dst);
  }
  return out;
}

}  // namespace poredet
