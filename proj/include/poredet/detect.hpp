#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "poredet/data.hpp"
#include "poredet/image.hpp"
#include "poredet/model.hpp"

namespace poredet {

/// FCN output for an MxN image: (M-16)x(N-16) probabilities where cell
/// (i, j) belongs to image pixel (i+8, j+8).
struct ProbabilityMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  float at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
  static Point to_image(int row, int col) { return {row + kBorder, col + kBorder}; }
  /// The map zero-padded back to the source image size.
  GrayImage padded() const;
};

/// Probability map of one image, infer mode.
ProbabilityMap infer_probability_map(const PoreModel& model, const GrayImage& image);

/// 7x7 box centered on an image pixel.
struct BoundingBox {
  static constexpr int kHalfSize = 3;
  static constexpr int kSize = 2 * kHalfSize + 1;
  Point center;
  float score = 0.0f;
  bool operator==(const BoundingBox&) const = default;
};

/// One box per map cell with value strictly above p_t, in raster order.
std::vector<BoundingBox> threshold_to_boxes(const ProbabilityMap& map, double p_t);

enum class OverlapMeasure {
  IntersectionOverUnion,
  IntersectionOverMinArea,
};

double box_overlap(const BoundingBox& a, const BoundingBox& b,
                   OverlapMeasure measure = OverlapMeasure::IntersectionOverUnion);

/// Order used by NMS: score descending, then (row, col) ascending.
bool nms_before(const BoundingBox& a, const BoundingBox& b);

/// Greedy non-maximum suppression. A box is kept iff its overlap with every
/// already kept box is <= i_t. Output is in selection order.
std::vector<BoundingBox> nms(std::vector<BoundingBox> boxes, double i_t,
                             OverlapMeasure measure = OverlapMeasure::IntersectionOverUnion);

struct Detection {
  Point at;
  float score = 0.0f;
  bool operator==(const Detection&) const = default;
};

struct DetectionSet {
  std::vector<Detection> detections;
  std::size_t size() const { return detections.size(); }
  std::vector<Point> points() const;
  bool operator==(const DetectionSet&) const = default;
};

DetectionSet boxes_to_detections(const std::vector<BoundingBox>& boxes);

/// Threshold at p_t, then NMS at i_t.
DetectionSet postprocess_proposed(const ProbabilityMap& map, double p_t, double i_t,
                                  OverlapMeasure measure = OverlapMeasure::IntersectionOverUnion);

/// Baseline: binarize at threshold, one detection per 8-connected component
/// at its centroid (nearest pixel, halves round down), scored by the
/// component maximum.
DetectionSet traditional_postprocess(const ProbabilityMap& map, double threshold = 0.5);

enum class PostProcessing { Proposed, Traditional };

struct DetectParams {
  double p_t = 0.6;
  double i_t = 0.0;
  PostProcessing post = PostProcessing::Proposed;
  OverlapMeasure measure = OverlapMeasure::IntersectionOverUnion;
};

DetectionSet postprocess(const ProbabilityMap& map, const DetectParams& params);
DetectionSet detect_pores(const PoreModel& model, const GrayImage& image, double p_t = 0.6,
                          double i_t = 0.0);
DetectionSet detect_pores(const PoreModel& model, const GrayImage& image, const DetectParams& params);

/// "row col score" per line, rows and columns 1-indexed, score with six
/// decimals.
void write_detections(const DetectionSet& detections, std::ostream& out);
void save_detections(const DetectionSet& detections, const std::filesystem::path& path);
/// Accepts "row col score" or "row col" lines (missing score reads as 1).
DetectionSet parse_detections(std::istream& in, int height, int width);
DetectionSet load_detections(const std::filesystem::path& path, int height, int width);

}  // namespace poredet
