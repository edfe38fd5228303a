#include "poredet/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "poredet/errors.hpp"

namespace poredet {

GrayImage ProbabilityMap::padded() const {
  GrayImage out(height + 2 * kBorder, width + 2 * kBorder, 0.0f);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) out(r + kBorder, c + kBorder) = at(r, c);
  }
  return out;
}

ProbabilityMap infer_probability_map(const PoreModel& model, const GrayImage& image) {
  FeatureMap probs = predict(model, image.to_tensor());
  ProbabilityMap map;
  map.height = probs.height();
  map.width = probs.width();
  map.values = std::move(probs.storage());
  return map;
}

std::vector<BoundingBox> threshold_to_boxes(const ProbabilityMap& map, double p_t) {
  std::vector<BoundingBox> boxes;
  // Compare in the map's own precision: a stored 0.6f is not above 0.6.
  const float t = static_cast<float>(p_t);
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      const float v = map.at(r, c);
      if (v > t) boxes.push_back({ProbabilityMap::to_image(r, c), v});
    }
  }
  return boxes;
}

double box_overlap(const BoundingBox& a, const BoundingBox& b, OverlapMeasure measure) {
  constexpr int size = BoundingBox::kSize;
  const int ih = std::max(0, size - std::abs(a.center.row - b.center.row));
  const int iw = std::max(0, size - std::abs(a.center.col - b.center.col));
  const double inter = static_cast<double>(ih) * iw;
  const double area = static_cast<double>(size) * size;
  if (measure == OverlapMeasure::IntersectionOverMinArea) return inter / area;
  return inter / (2.0 * area - inter);
}

bool nms_before(const BoundingBox& a, const BoundingBox& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.center < b.center;
}

namespace {

// Kept boxes bucketed by 7x7 cell; only neighbouring cells can overlap.
class KeptIndex {
 public:
  void add(const BoundingBox& b) { cells_[key(cell(b.center.row), cell(b.center.col))].push_back(b); }

  template <typename F>
  bool any_of_nearby(const BoundingBox& b, F&& pred) const {
    const long long cr = cell(b.center.row), cc = cell(b.center.col);
    for (long long dr = -1; dr <= 1; ++dr) {
      for (long long dc = -1; dc <= 1; ++dc) {
        const auto it = cells_.find(key(cr + dr, cc + dc));
        if (it == cells_.end()) continue;
        for (const auto& k : it->second) {
          if (pred(k)) return true;
        }
      }
    }
    return false;
  }

 private:
  static long long cell(int v) {
    return static_cast<long long>(std::floor(static_cast<double>(v) / BoundingBox::kSize));
  }
  static long long key(long long r, long long c) { return (r << 32) ^ (c & 0xffffffffLL); }
  std::unordered_map<long long, std::vector<BoundingBox>> cells_;
};

}  // namespace

std::vector<BoundingBox> nms(std::vector<BoundingBox> boxes, double i_t, OverlapMeasure measure) {
  if (!(i_t >= 0.0 && i_t < 1.0)) throw ValidationError("NMS threshold must be in [0, 1)");
  std::sort(boxes.begin(), boxes.end(), nms_before);
  std::vector<BoundingBox> kept;
  KeptIndex index;
  for (const auto& b : boxes) {
    const bool suppressed =
        index.any_of_nearby(b, [&](const BoundingBox& k) { return box_overlap(b, k, measure) > i_t; });
    if (!suppressed) {
      kept.push_back(b);
      index.add(b);
    }
  }
  return kept;
}

std::vector<Point> DetectionSet::points() const {
  std::vector<Point> out;
  out.reserve(detections.size());
  for (const auto& d : detections) out.push_back(d.at);
  return out;
}

DetectionSet boxes_to_detections(const std::vector<BoundingBox>& boxes) {
  DetectionSet out;
  out.detections.reserve(boxes.size());
  for (const auto& b : boxes) out.detections.push_back({b.center, b.score});
  return out;
}

DetectionSet postprocess_proposed(const ProbabilityMap& map, double p_t, double i_t,
                                  OverlapMeasure measure) {
  if (!(p_t > 0.0 && p_t < 1.0)) throw ValidationError("probability threshold must be in (0, 1)");
  return boxes_to_detections(nms(threshold_to_boxes(map, p_t), i_t, measure));
}

DetectionSet traditional_postprocess(const ProbabilityMap& map, double threshold) {
  DetectionSet out;
  std::vector<std::uint8_t> visited(map.values.size(), 0);
  std::vector<Point> stack;
  const float t = static_cast<float>(threshold);
  const auto above = [&](int r, int c) { return map.at(r, c) > t; };
  for (int r0 = 0; r0 < map.height; ++r0) {
    for (int c0 = 0; c0 < map.width; ++c0) {
      const std::size_t i0 = static_cast<std::size_t>(r0) * map.width + c0;
      if (visited[i0] || !above(r0, c0)) continue;
      visited[i0] = 1;
      stack.assign(1, Point{r0, c0});
      long long sum_r = 0, sum_c = 0, count = 0;
      float best = 0.0f;
      while (!stack.empty()) {
        const Point p = stack.back();
        stack.pop_back();
        sum_r += p.row;
        sum_c += p.col;
        ++count;
        best = std::max(best, map.at(p.row, p.col));
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int r = p.row + dr, c = p.col + dc;
            if (r < 0 || c < 0 || r >= map.height || c >= map.width) continue;
            const std::size_t i = static_cast<std::size_t>(r) * map.width + c;
            if (visited[i] || !above(r, c)) continue;
            visited[i] = 1;
            stack.push_back({r, c});
          }
        }
      }
      const auto round_half_down = [count](long long sum) {
        return static_cast<int>(std::ceil(static_cast<double>(sum) / static_cast<double>(count) - 0.5));
      };
      out.detections.push_back(
          {ProbabilityMap::to_image(round_half_down(sum_r), round_half_down(sum_c)), best});
    }
  }
  return out;
}

DetectionSet postprocess(const ProbabilityMap& map, const DetectParams& params) {
  if (params.post == PostProcessing::Traditional) return traditional_postprocess(map);
  return postprocess_proposed(map, params.p_t, params.i_t, params.measure);
}

DetectionSet detect_pores(const PoreModel& model, const GrayImage& image, double p_t, double i_t) {
  return postprocess_proposed(infer_probability_map(model, image), p_t, i_t);
}

DetectionSet detect_pores(const PoreModel& model, const GrayImage& image, const DetectParams& params) {
  return postprocess(infer_probability_map(model, image), params);
}

void write_detections(const DetectionSet& detections, std::ostream& out) {
  char buf[32];
  for (const auto& d : detections.detections) {
    std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(d.score));
    out << d.at.row + 1 << ' ' << d.at.col + 1 << ' ' << buf << '\n';
  }
}

void save_detections(const DetectionSet& detections, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write detections " + tmp.string());
    write_detections(detections, out);
    if (!out) throw IoError("failed writing detections " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

DetectionSet parse_detections(std::istream& in, int height, int width) {
  DetectionSet out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    long long r = 0, c = 0;
    if (!(fields >> r >> c)) throw ParseError("expected \"row col [score]\"", line_no);
    double score = 1.0;
    std::string rest;
    if (fields >> rest) {
      try {
        std::size_t used = 0;
        score = std::stod(rest, &used);
        if (used != rest.size()) throw std::invalid_argument(rest);
      } catch (const std::exception&) {
        throw ParseError("bad detection score '" + rest + "'", line_no);
      }
      if (fields >> rest) throw ParseError("too many fields", line_no);
    }
    if (r < 1 || c < 1 || r > height || c > width) {
      throw ValidationError("detection on line " + std::to_string(line_no) + " outside image");
    }
    out.detections.push_back({{static_cast<int>(r - 1), static_cast<int>(c - 1)},
                               static_cast<float>(score)});
  }
  return out;
}

DetectionSet load_detections(const std::filesystem::path& path, int height, int width) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detections " + path.string());
  try {
    return parse_detections(in, height, width);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": malformed detection", e.line());
  }
}

}  // namespace poredet
