#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "poredet/data.hpp"
#include "poredet/detect.hpp"
#include "poredet/model.hpp"

namespace poredet {

inline constexpr int kEvaluationMargin = 8;

/// Keeps points with margin <= row < height - margin and likewise for cols.
std::vector<Point> exclude_border(std::span<const Point> points, int height, int width,
                                  int margin = kEvaluationMargin);

struct MatchResult {
  /// (detection index, ground-truth index), ascending by detection index.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t true_detections = 0;
  std::size_t false_detections = 0;
  std::size_t undetected = 0;
};

/// Mutual nearest-neighbour matching. A detection d is true iff its nearest
/// ground-truth point g (Euclidean) has d as its own nearest detection.
/// Equidistant candidates resolve to the lexicographically smaller
/// (row, col), then to the lower index. There is no distance cap.
MatchResult match_detections(std::span<const Point> detections, std::span<const Point> truth);

struct Counts {
  std::size_t true_detections = 0;
  std::size_t false_detections = 0;
  std::size_t ground_truth = 0;
  std::size_t detections = 0;

  Counts& operator+=(const Counts& o);
  bool operator==(const Counts&) const = default;
};

struct Metrics {
  double tdr = 0.0;
  double fdr = 0.0;
  double f_score = 0.0;
};

/// F = 2 (1 - fdr) tdr / ((1 - fdr) + tdr), 0 when both terms are 0.
Metrics metrics_from_rates(double tdr, double fdr);

/// tdr = true / |G|, fdr = false / |D| (0 when D is empty). Throws
/// ValidationError when |G| = 0.
Metrics compute_metrics(const MatchResult& match, std::size_t ground_truth);
Metrics compute_metrics(const Counts& counts);

/// Border-filters both sets, then matches.
Counts evaluate_image(std::span<const Point> detections, std::span<const Point> truth, int height,
                      int width, int margin = kEvaluationMargin);

enum class Averaging {
  /// Pool counts over images, then divide.
  Micro,
  /// Mean of per-image TDR and FDR; F from the means.
  Macro,
};

struct ImageEvaluation {
  std::string name;
  Counts counts;
  std::optional<Metrics> metrics;  ///< empty when the image has no ground truth
};

struct EvaluationReport {
  Averaging averaging = Averaging::Micro;
  std::vector<ImageEvaluation> images;
  Counts pooled;
  Metrics metrics;
};

struct EvaluationInput {
  std::string name;
  int height = 0;
  int width = 0;
  std::vector<Point> detections;
  std::vector<Point> truth;
};

EvaluationReport evaluate(std::span<const EvaluationInput> inputs, Averaging averaging = Averaging::Micro);

void write_report(const EvaluationReport& report, std::ostream& out);

struct GridCell {
  double p_t = 0.0;
  double i_t = 0.0;
  Counts counts;
  Metrics metrics;
};

struct GridSearchResult {
  std::vector<GridCell> cells;  ///< p_t ascending, then i_t ascending
  GridCell best;
};

/// {0.1, ..., 0.9}
std::vector<double> grid_probability_thresholds();
/// {0, 0.1, ..., 0.7}
std::vector<double> grid_overlap_thresholds();

/// Evaluates every (p_t, i_t) cell with proposed post-processing. The best
/// cell maximizes F-score; ties prefer larger p_t, then smaller i_t.
GridSearchResult grid_search(std::span<const ProbabilityMap> maps, std::span<const Sample> samples,
                             Averaging averaging = Averaging::Micro);
GridSearchResult grid_search(const PoreModel& model, std::span<const Sample> validation,
                             Averaging averaging = Averaging::Micro);

void write_grid(const GridSearchResult& grid, std::ostream& out);

}  // namespace poredet
