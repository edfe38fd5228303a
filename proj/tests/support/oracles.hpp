#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. They favour obviousness over speed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "poredet/data.hpp"
#include "poredet/detect.hpp"
#include "poredet/tensor.hpp"

namespace oracle {

using poredet::BoundingBox;
using poredet::Point;

/// ||a - b|| / max(||a||, ||b||), or 0 when both are (numerically) zero.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

/// Central differences of loss() with respect to every entry of x.
inline std::vector<double> numeric_gradient(std::vector<double>& x, const std::function<double()>& loss,
                                            double h = 1e-4) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double plus = loss();
    x[i] = saved - h;
    const double minus = loss();
    x[i] = saved;
    g[i] = (plus - minus) / (2.0 * h);
  }
  return g;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline poredet::Tensor<double> random_tensor(poredet::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                             double hi = 1.0) {
  poredet::Tensor<double> t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline double box_overlap(const BoundingBox& a, const BoundingBox& b, bool min_area) {
  int inter = 0;
  for (int r = a.center.row - 3; r <= a.center.row + 3; ++r) {
    for (int c = a.center.col - 3; c <= a.center.col + 3; ++c) {
      if (std::abs(r - b.center.row) <= 3 && std::abs(c - b.center.col) <= 3) ++inter;
    }
  }
  return min_area ? inter / 49.0 : inter / (98.0 - inter);
}

/// Greedy NMS by repeated scans: pick the best remaining box, drop it if it
/// overlaps a kept one by more than i_t.
inline std::vector<BoundingBox> nms(std::vector<BoundingBox> boxes, double i_t, bool min_area = false) {
  std::vector<BoundingBox> kept;
  std::vector<bool> used(boxes.size(), false);
  for (std::size_t round = 0; round < boxes.size(); ++round) {
    std::size_t best = boxes.size();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (used[i]) continue;
      if (best == boxes.size()) {
        best = i;
        continue;
      }
      const auto& a = boxes[i];
      const auto& b = boxes[best];
      if (a.score > b.score || (a.score == b.score && a.center < b.center)) best = i;
    }
    used[best] = true;
    bool keep = true;
    for (const auto& k : kept) keep = keep && box_overlap(boxes[best], k, min_area) <= i_t;
    if (keep) kept.push_back(boxes[best]);
  }
  return kept;
}

inline long long sq_dist(Point a, Point b) {
  const long long dr = a.row - b.row, dc = a.col - b.col;
  return dr * dr + dc * dc;
}

/// Index of the nearest candidate to p: smallest distance, then smallest
/// (row, col), then smallest index.
inline std::size_t nearest(Point p, std::span<const Point> candidates) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const long long di = sq_dist(p, candidates[i]), db = sq_dist(p, candidates[best]);
    if (di < db || (di == db && candidates[i] < candidates[best])) best = i;
  }
  return best;
}

/// All (d, g) pairs that are mutual nearest neighbours, ascending by d.
inline std::vector<std::pair<std::size_t, std::size_t>> match(std::span<const Point> d,
                                                              std::span<const Point> g) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (d.empty() || g.empty()) return pairs;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t j = nearest(d[i], g);
    if (nearest(g[j], d) == i) pairs.emplace_back(i, j);
  }
  return pairs;
}

/// 8-connected components by flood fill over cells with value > threshold.
inline std::vector<std::vector<Point>> components(const poredet::ProbabilityMap& map, double threshold) {
  std::vector<int> label(map.values.size(), -1);
  std::vector<std::vector<Point>> out;
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      if (map.at(r, c) <= threshold || label[r * map.width + c] >= 0) continue;
      std::vector<Point> comp;
      std::vector<Point> stack{{r, c}};
      label[r * map.width + c] = static_cast<int>(out.size());
      while (!stack.empty()) {
        const Point p = stack.back();
        stack.pop_back();
        comp.push_back(p);
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = p.row + dr, cc = p.col + dc;
            if (rr < 0 || cc < 0 || rr >= map.height || cc >= map.width) continue;
            if (map.at(rr, cc) <= threshold || label[rr * map.width + cc] >= 0) continue;
            label[rr * map.width + cc] = static_cast<int>(out.size());
            stack.push_back({rr, cc});
          }
        }
      }
      out.push_back(std::move(comp));
    }
  }
  return out;
}

}  // namespace oracle
