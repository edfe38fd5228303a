#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cstring>

#include "poredet/data.hpp"
#include "poredet/detect.hpp"
#include "poredet/errors.hpp"
#include "poredet/evaluate.hpp"
#include "poredet/image.hpp"
#include "poredet/model.hpp"
#include "poredet/synth.hpp"
#include "poredet/train.hpp"

namespace py = pybind11;
using namespace poredet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

GrayImage to_image(const FloatArray& a) {
  if (a.ndim() != 2) throw py::value_error("image must be a 2-D array");
  const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  return GrayImage(h, w, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray from_values(int h, int w, const std::vector<float>& values) {
  FloatArray out({h, w});
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

std::vector<Point> to_points(const IntArray& a) {
  if (a.size() == 0) return {};
  if (a.ndim() != 2 || a.shape(1) != 2) throw py::value_error("points must have shape (n, 2)");
  std::vector<Point> out(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {a.data()[2 * i], a.data()[2 * i + 1]};
  return out;
}

IntArray from_points(const std::vector<Point>& points) {
  IntArray out({static_cast<py::ssize_t>(points.size()), py::ssize_t{2}});
  int* d = out.mutable_data();
  for (const Point& p : points) {
    *d++ = p.row;
    *d++ = p.col;
  }
  return out;
}

ProbabilityMap to_map(const FloatArray& a) {
  if (a.ndim() != 2) throw py::value_error("probability map must be a 2-D array");
  ProbabilityMap m;
  m.height = static_cast<int>(a.shape(0));
  m.width = static_cast<int>(a.shape(1));
  m.values.assign(a.data(), a.data() + a.size());
  return m;
}

py::tuple from_detections(const DetectionSet& set) {
  FloatArray scores(static_cast<py::ssize_t>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) scores.mutable_data()[i] = set.detections[i].score;
  return py::make_tuple(from_points(set.points()), scores);
}

OverlapMeasure measure_from(const std::string& name) {
  if (name == "iou") return OverlapMeasure::IntersectionOverUnion;
  if (name == "min-area") return OverlapMeasure::IntersectionOverMinArea;
  throw py::value_error("overlap must be 'iou' or 'min-area'");
}

PostProcessing post_from(const std::string& name) {
  if (name == "proposed") return PostProcessing::Proposed;
  if (name == "traditional") return PostProcessing::Traditional;
  throw py::value_error("post must be 'proposed' or 'traditional'");
}

py::dict as_dict(const Metrics& m) { return py::dict(py::arg("tdr") = m.tdr, py::arg("fdr") = m.fdr, py::arg("f_score") = m.f_score); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Fingerprint pore detection: FCN inference, post-processing and evaluation";

  static py::exception<CheckpointError> checkpoint_error(m, "CheckpointError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const CheckpointError& e) {
      py::set_error(checkpoint_error, e.what());
    } catch (const IoError& e) {
      py::set_error(PyExc_OSError, e.what());
    } catch (const Error& e) {
      py::set_error(PyExc_ValueError, e.what());
    }
  });

  m.attr("RECEPTIVE_FIELD") = kReceptiveField;
  m.attr("EVALUATION_MARGIN") = kEvaluationMargin;

  m.def("load_image", [](const std::filesystem::path& path) {
    const GrayImage img = load_image(path);
    return from_values(img.height(), img.width(), img.pixels());
  }, py::arg("path"), "Read a PGM as a float32 array in [0, 1].");
  m.def("save_image", [](const std::filesystem::path& path, const FloatArray& image) {
    save_image(to_image(image), path);
  }, py::arg("path"), py::arg("image"));

  m.def("synthesize", [](int height, int width, int pore_count, std::uint64_t seed) {
    SynthConfig c;
    c.height = height;
    c.width = width;
    c.pore_count = pore_count;
    c.seed = seed;
    const SynthImage s = generate(c);
    return py::make_tuple(from_values(s.image.height(), s.image.width(), s.image.pixels()),
                          from_points(s.truth.pores));
  }, py::arg("height") = 160, py::arg("width") = 160, py::arg("pore_count") = 70, py::arg("seed") = 0,
     "Synthetic fingerprint patch and its 0-indexed (row, col) pore centers.");
  m.def("generate_dataset", [](const std::filesystem::path& dir, int count, std::uint64_t seed) {
    return generate_dataset(dir, count, SynthConfig{}, seed);
  }, py::arg("directory"), py::arg("count") = 30, py::arg("seed") = 0);

  py::class_<PoreModel>(m, "Model")
      .def(py::init([](std::uint64_t seed) { return make_pore_model({.seed = seed}); }), py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
      .def("save", [](const PoreModel& self, const std::filesystem::path& p) { save_checkpoint(self, p); },
           py::arg("path"))
      .def_property_readonly("param_count", [](const PoreModel& self) { return param_count(self); })
      .def_readonly("step_count", &PoreModel::step_count)
      .def("probability_map", [](const PoreModel& self, const FloatArray& image) {
        const ProbabilityMap map = infer_probability_map(self, to_image(image));
        return from_values(map.height, map.width, map.values);
      }, py::arg("image"), "Map of shape (H - 16, W - 16); cell (i, j) is pixel (i + 8, j + 8).")
      .def("detect", [](const PoreModel& self, const FloatArray& image, double p_t, double i_t,
                        const std::string& post, const std::string& overlap) {
        return from_detections(detect_pores(self, to_image(image), {p_t, i_t, post_from(post), measure_from(overlap)}));
      }, py::arg("image"), py::arg("p_t") = 0.6, py::arg("i_t") = 0.0, py::arg("post") = "proposed",
         py::arg("overlap") = "iou", "Pore centers (n, 2) in image coordinates and their scores.");

  m.def("nms", [](const IntArray& centers, const FloatArray& scores, double i_t, const std::string& overlap) {
    const auto pts = to_points(centers);
    if (static_cast<std::size_t>(scores.size()) != pts.size()) throw py::value_error("one score per center");
    std::vector<BoundingBox> boxes;
    for (std::size_t i = 0; i < pts.size(); ++i) boxes.push_back({pts[i], scores.data()[i]});
    DetectionSet kept;
    for (const auto& b : nms(std::move(boxes), i_t, measure_from(overlap))) kept.detections.push_back({b.center, b.score});
    return from_detections(kept);
  }, py::arg("centers"), py::arg("scores"), py::arg("i_t"), py::arg("overlap") = "iou",
     "Greedy NMS over 7x7 boxes; returns the kept (centers, scores).");
  m.def("postprocess_proposed", [](const FloatArray& map, double p_t, double i_t, const std::string& overlap) {
    return from_detections(postprocess_proposed(to_map(map), p_t, i_t, measure_from(overlap)));
  }, py::arg("map"), py::arg("p_t") = 0.6, py::arg("i_t") = 0.0, py::arg("overlap") = "iou");
  m.def("traditional_postprocess", [](const FloatArray& map, double threshold) {
    return from_detections(traditional_postprocess(to_map(map), threshold));
  }, py::arg("map"), py::arg("threshold") = 0.5);

  m.def("match", [](const IntArray& detections, const IntArray& truth) {
    const MatchResult r = match_detections(to_points(detections), to_points(truth));
    IntArray pairs({static_cast<py::ssize_t>(r.pairs.size()), py::ssize_t{2}});
    for (std::size_t i = 0; i < r.pairs.size(); ++i) {
      pairs.mutable_data()[2 * i] = static_cast<int>(r.pairs[i].first);
      pairs.mutable_data()[2 * i + 1] = static_cast<int>(r.pairs[i].second);
    }
    return pairs;
  }, py::arg("detections"), py::arg("truth"), "Mutual nearest-neighbour (detection, truth) index pairs.");
  m.def("exclude_border", [](const IntArray& points, int height, int width, int margin) {
    return from_points(exclude_border(to_points(points), height, width, margin));
  }, py::arg("points"), py::arg("height"), py::arg("width"), py::arg("margin") = kEvaluationMargin);
  m.def("metrics_from_rates", [](double tdr, double fdr) { return as_dict(metrics_from_rates(tdr, fdr)); },
        py::arg("tdr"), py::arg("fdr"));
  m.def("evaluate_image", [](const IntArray& detections, const IntArray& truth, int height, int width) {
    const Counts c = evaluate_image(to_points(detections), to_points(truth), height, width);
    py::dict d = as_dict(compute_metrics(c));
    d["true_detections"] = c.true_detections;
    d["false_detections"] = c.false_detections;
    d["ground_truth"] = c.ground_truth;
    d["detections"] = c.detections;
    return d;
  }, py::arg("detections"), py::arg("truth"), py::arg("height"), py::arg("width"));

  m.def("train", [](const std::filesystem::path& data, std::uint64_t seed, std::int64_t max_steps,
                    std::int64_t eval_every, int patience, int batch_size) {
    TrainConfig c;
    c.seed = seed;
    c.max_steps = max_steps;
    c.eval_every = eval_every;
    c.patience = patience;
    c.batch_size = batch_size;
    c.validate();
    auto samples = load_samples(data);
    const SplitMode mode = samples.size() == 30 ? SplitMode::Benchmark : SplitMode::Proportional;
    const DatasetSplit split = split_samples(std::move(samples), mode);
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = train(make_pore_model(c.model_config()), split.train, split.validation, c);
    }
    return py::make_tuple(std::move(r.best), py::dict(py::arg("best_step") = r.best_step,
                                                      py::arg("best_fscore") = r.best_fscore,
                                                      py::arg("steps") = r.steps,
                                                      py::arg("evaluations") = r.evaluations));
  }, py::arg("data"), py::arg("seed") = 0, py::arg("max_steps") = 50000, py::arg("eval_every") = 250,
     py::arg("patience") = 5, py::arg("batch_size") = 256,
     "Train on the train split of a directory; returns (best model, summary).");
}
