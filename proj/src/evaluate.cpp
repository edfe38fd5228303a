#include "poredet/evaluate.hpp"

#include <cstdio>
#include <limits>
#include <ostream>
#include <tuple>

#include "poredet/errors.hpp"

namespace poredet {

std::vector<Point> exclude_border(std::span<const Point> points, int height, int width, int margin) {
  std::vector<Point> out;
  for (const Point& p : points) {
    if (p.row >= margin && p.col >= margin && p.row < height - margin && p.col < width - margin) {
      out.push_back(p);
    }
  }
  return out;
}

namespace {

long long dist2(Point a, Point b) {
  const long long dr = a.row - b.row, dc = a.col - b.col;
  return dr * dr + dc * dc;
}

// Index of the candidate nearest to p, or npos for no candidates.
std::size_t nearest(Point p, std::span<const Point> candidates) {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  std::tuple<long long, int, int> best_key{};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Point q = candidates[i];
    const std::tuple<long long, int, int> key{dist2(p, q), q.row, q.col};
    if (best == std::numeric_limits<std::size_t>::max() || key < best_key) {
      best = i;
      best_key = key;
    }
  }
  return best;
}

}  // namespace

MatchResult match_detections(std::span<const Point> detections, std::span<const Point> truth) {
  MatchResult m;
  std::vector<std::size_t> nearest_detection(truth.size());
  for (std::size_t g = 0; g < truth.size(); ++g) nearest_detection[g] = nearest(truth[g], detections);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    const std::size_t g = nearest(detections[d], truth);
    if (g < truth.size() && nearest_detection[g] == d) m.pairs.emplace_back(d, g);
  }
  m.true_detections = m.pairs.size();
  m.false_detections = detections.size() - m.pairs.size();
  m.undetected = truth.size() - m.pairs.size();
  return m;
}

Counts& Counts::operator+=(const Counts& o) {
  true_detections += o.true_detections;
  false_detections += o.false_detections;
  ground_truth += o.ground_truth;
  detections += o.detections;
  return *this;
}

Metrics metrics_from_rates(double tdr, double fdr) {
  const double precision = 1.0 - fdr;
  const double denom = precision + tdr;
  return {tdr, fdr, denom > 0.0 ? 2.0 * precision * tdr / denom : 0.0};
}

Metrics compute_metrics(const Counts& counts) {
  if (counts.ground_truth == 0) {
    throw ValidationError("TDR is undefined without ground-truth pores");
  }
  const double tdr = static_cast<double>(counts.true_detections) / counts.ground_truth;
  const double fdr = counts.detections == 0
                         ? 0.0
                         : static_cast<double>(counts.false_detections) / counts.detections;
  return metrics_from_rates(tdr, fdr);
}

Metrics compute_metrics(const MatchResult& match, std::size_t ground_truth) {
  return compute_metrics(Counts{match.true_detections, match.false_detections, ground_truth,
                                match.true_detections + match.false_detections});
}

Counts evaluate_image(std::span<const Point> detections, std::span<const Point> truth, int height,
                      int width, int margin) {
  const auto d = exclude_border(detections, height, width, margin);
  const auto g = exclude_border(truth, height, width, margin);
  const MatchResult m = match_detections(d, g);
  return {m.true_detections, m.false_detections, g.size(), d.size()};
}

EvaluationReport evaluate(std::span<const EvaluationInput> inputs, Averaging averaging) {
  if (inputs.empty()) throw ValidationError("nothing to evaluate");
  EvaluationReport report;
  report.averaging = averaging;
  double sum_tdr = 0.0, sum_fdr = 0.0;
  for (const auto& in : inputs) {
    ImageEvaluation ev;
    ev.name = in.name;
    ev.counts = evaluate_image(in.detections, in.truth, in.height, in.width);
    if (ev.counts.ground_truth > 0) {
      ev.metrics = compute_metrics(ev.counts);
      sum_tdr += ev.metrics->tdr;
      sum_fdr += ev.metrics->fdr;
    } else if (averaging == Averaging::Macro) {
      throw ValidationError("macro averaging needs ground truth in every image (" + in.name + ")");
    }
    report.pooled += ev.counts;
    report.images.push_back(std::move(ev));
  }
  if (averaging == Averaging::Micro) {
    report.metrics = compute_metrics(report.pooled);
  } else {
    const double n = static_cast<double>(inputs.size());
    report.metrics = metrics_from_rates(sum_tdr / n, sum_fdr / n);
  }
  return report;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_row(std::ostream& out, const std::string& name, const Counts& c,
               const std::optional<Metrics>& m) {
  out << name << '\t' << c.ground_truth << '\t' << c.detections << '\t' << c.true_detections
      << '\t' << c.false_detections << '\t';
  if (m) {
    out << fixed(m->tdr) << '\t' << fixed(m->fdr) << '\t' << fixed(m->f_score) << '\n';
  } else {
    out << "nan\tnan\tnan\n";
  }
}

}  // namespace

void write_report(const EvaluationReport& report, std::ostream& out) {
  out << "# averaging=" << (report.averaging == Averaging::Micro ? "micro" : "macro") << '\n';
  out << "image\tground_truth\tdetections\ttrue\tfalse\ttdr\tfdr\tf_score\n";
  for (const auto& im : report.images) write_row(out, im.name, im.counts, im.metrics);
  write_row(out, "pooled", report.pooled, report.metrics);
}

std::vector<double> grid_probability_thresholds() {
  std::vector<double> v;
  for (int k = 1; k <= 9; ++k) v.push_back(k / 10.0);
  return v;
}

std::vector<double> grid_overlap_thresholds() {
  std::vector<double> v;
  for (int k = 0; k <= 7; ++k) v.push_back(k / 10.0);
  return v;
}

GridSearchResult grid_search(std::span<const ProbabilityMap> maps, std::span<const Sample> samples,
                             Averaging averaging) {
  if (samples.empty()) throw ValidationError("grid search needs at least one validation image");
  if (maps.size() != samples.size()) throw SizeMismatch("one probability map per image required");
  GridSearchResult result;
  bool have_best = false;
  for (double p_t : grid_probability_thresholds()) {
    for (double i_t : grid_overlap_thresholds()) {
      std::vector<EvaluationInput> inputs;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        inputs.push_back({samples[i].name, samples[i].image.height(), samples[i].image.width(),
                          postprocess_proposed(maps[i], p_t, i_t).points(), samples[i].truth.pores});
      }
      const EvaluationReport report = evaluate(inputs, averaging);
      GridCell cell{p_t, i_t, report.pooled, report.metrics};
      // Cells arrive with p_t ascending, so >= prefers larger p_t; within a
      // p_t the first (smallest i_t) maximum wins.
      const bool better =
          !have_best || cell.metrics.f_score > result.best.metrics.f_score ||
          (cell.metrics.f_score == result.best.metrics.f_score && cell.p_t > result.best.p_t);
      if (better) {
        result.best = cell;
        have_best = true;
      }
      result.cells.push_back(cell);
    }
  }
  return result;
}

GridSearchResult grid_search(const PoreModel& model, std::span<const Sample> validation,
                             Averaging averaging) {
  std::vector<ProbabilityMap> maps;
  for (const auto& s : validation) maps.push_back(infer_probability_map(model, s.image));
  return grid_search(maps, validation, averaging);
}

void write_grid(const GridSearchResult& grid, std::ostream& out) {
  out << "p_t\ti_t\ttdr\tfdr\tf_score\n";
  char buf[128];
  for (const auto& c : grid.cells) {
    std::snprintf(buf, sizeof buf, "%.1f\t%.1f\t%.6f\t%.6f\t%.6f\n", c.p_t, c.i_t, c.metrics.tdr,
                  c.metrics.fdr, c.metrics.f_score);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "# best p_t=%.1f i_t=%.1f f_score=%.6f\n", grid.best.p_t,
                grid.best.i_t, grid.best.metrics.f_score);
  out << buf;
}

}  // namespace poredet
