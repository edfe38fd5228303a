// poredet: synthetic data, training, detection and protocol evaluation for
// fingerprint pore detection.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "poredet/data.hpp"
#include "poredet/detect.hpp"
#include "poredet/errors.hpp"
#include "poredet/evaluate.hpp"
#include "poredet/model.hpp"
#include "poredet/synth.hpp"
#include "poredet/train.hpp"

namespace fs = std::filesystem;
using namespace poredet;

namespace {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kIo = 3,
  kBadData = 4,
  kBadCheckpoint = 5,
  kDiverged = 6,
};

struct DataOptions {
  fs::path dir;
  std::string split = "auto";
  std::string subset = "test";
  bool swap_axes = false;
};

void add_data_options(CLI::App* cmd, DataOptions& o, const std::string& default_subset, bool required) {
  o.subset = default_subset;
  auto* opt = cmd->add_option("--data", o.dir, "Directory of *.pgm images with same-stem *.txt annotations");
  if (required) opt->required();
  cmd->add_option("--split", o.split,
                  "benchmark (exactly 30 pairs: 15/5/10), proportional (50/17/33%), or auto")
      ->check(CLI::IsMember({"auto", "benchmark", "proportional"}))
      ->capture_default_str();
  cmd->add_option("--subset", o.subset, "Split part to use: train, validation, test or all")
      ->check(CLI::IsMember({"train", "validation", "test", "all"}))
      ->capture_default_str();
  cmd->add_flag("--swap-axes", o.swap_axes, "Annotation files store \"col row\" instead of \"row col\"");
}

DatasetSplit load_split(const DataOptions& o) {
  auto samples = load_samples(o.dir, o.swap_axes);
  SplitMode mode = SplitMode::Proportional;
  if (o.split == "benchmark" || (o.split == "auto" && samples.size() == 30)) mode = SplitMode::Benchmark;
  return split_samples(std::move(samples), mode);
}

std::vector<Sample> select_subset(DatasetSplit split, const std::string& subset) {
  if (subset == "train") return std::move(split.train);
  if (subset == "validation") return std::move(split.validation);
  if (subset == "test") return std::move(split.test);
  std::vector<Sample> all = std::move(split.train);
  for (auto* part : {&split.validation, &split.test}) {
    all.insert(all.end(), std::make_move_iterator(part->begin()), std::make_move_iterator(part->end()));
  }
  return all;
}

struct DetectOptions {
  double p_t = 0.6;
  double i_t = 0.0;
  std::string post = "proposed";
  std::string overlap = "iou";

  DetectParams params() const {
    DetectParams p;
    p.p_t = p_t;
    p.i_t = i_t;
    p.post = post == "traditional" ? PostProcessing::Traditional : PostProcessing::Proposed;
    p.measure = overlap == "min-area" ? OverlapMeasure::IntersectionOverMinArea
                                      : OverlapMeasure::IntersectionOverUnion;
    return p;
  }
};

void add_detect_options(CLI::App* cmd, DetectOptions& o) {
  cmd->add_option("--p-t", o.p_t, "Probability threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_option("--i-t", o.i_t, "NMS overlap threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_option("--post", o.post,
                  "proposed (threshold + NMS) or traditional (threshold 0.5 + connected components)")
      ->check(CLI::IsMember({"proposed", "traditional"}))
      ->capture_default_str();
  cmd->add_option("--overlap", o.overlap, "NMS overlap measure: iou or min-area")
      ->check(CLI::IsMember({"iou", "min-area"}))
      ->capture_default_str();
}

Averaging parse_averaging(const std::string& s) {
  return s == "macro" ? Averaging::Macro : Averaging::Micro;
}

// Printed in the same key=value form that --config accepts.
void echo_config(const CLI::App& cmd) {
  std::cout << "# effective configuration\n[" << cmd.get_name() << "]\n" << cmd.config_to_str(true, false);
}

// Bad hyperparameter values are usage errors, not data errors.
template <typename Config>
void validate_flags(const Config& config, const std::string& command) {
  try {
    config.validate();
  } catch (const ValidationError& e) {
    throw CLI::ValidationError(command, e.what());
  }
}

template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    fn(out);
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training churns through tens of megabytes of activations per step; keep
  // freed memory in the heap instead of returning it to the kernel.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif

  CLI::App app{"Fingerprint pore detection with a small fully convolutional network"};
  app.set_config("--config", "", "key=value configuration file; command line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.footer(
      "Exit codes: 0 ok, 1 unexpected error, 2 usage, 3 missing/unreadable file, "
      "4 malformed data, 5 incompatible checkpoint, 6 training diverged");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic annotated fingerprint dataset");
  fs::path synth_out;
  int synth_count = 30;
  std::uint64_t synth_seed = 0;
  SynthConfig sc;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_count, "Number of image/annotation pairs")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Base random seed")->capture_default_str();
  synth->add_option("--height", sc.height, "Image height in pixels")->capture_default_str();
  synth->add_option("--width", sc.width, "Image width in pixels")->capture_default_str();
  synth->add_option("--ridge-period", sc.ridge_period, "Ridge period in pixels")->capture_default_str();
  synth->add_option("--warp-components", sc.warp_components, "Low-frequency ridge warp terms")->capture_default_str();
  synth->add_option("--warp-amplitude", sc.warp_amplitude, "Maximum warp amplitude (radians)")->capture_default_str();
  synth->add_option("--pores", sc.pore_count, "Pores per image")->capture_default_str();
  synth->add_option("--pore-radius-min", sc.pore_radius_min, "Smallest pore radius")->capture_default_str();
  synth->add_option("--pore-radius-max", sc.pore_radius_max, "Largest pore radius")->capture_default_str();
  synth->add_option("--pore-contrast-min", sc.pore_contrast_min, "Smallest pore contrast")->capture_default_str();
  synth->add_option("--pore-contrast-max", sc.pore_contrast_max, "Largest pore contrast")->capture_default_str();
  synth->add_option("--scars", sc.scar_count, "Bright scar streaks per image")->capture_default_str();
  synth->add_option("--blur-sigma", sc.blur_sigma, "Gaussian blur sigma")->capture_default_str();
  synth->add_option("--noise-sigma", sc.noise_sigma, "Additive Gaussian noise sigma")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the pore FCN with patch-sampled SGD");
  DataOptions train_data;
  fs::path train_checkpoint, train_log;
  TrainConfig tc;
  add_data_options(train_cmd, train_data, "train", true);
  train_cmd->add_option("--checkpoint", train_checkpoint, "Where to write the best checkpoint")->required();
  train_cmd->add_option("--log", train_log, "Training log CSV (default: <checkpoint>.log.csv)");
  train_cmd->add_option("--lr", tc.base_lr, "Base learning rate")->capture_default_str();
  train_cmd->add_option("--decay-rate", tc.decay_rate, "Staircase decay factor")->capture_default_str();
  train_cmd->add_option("--decay-steps", tc.decay_steps, "Steps per decay stage")->capture_default_str();
  train_cmd->add_option("--batch-size", tc.batch_size, "Patches per batch")->capture_default_str();
  train_cmd->add_option("--dropout", tc.dropout_rate, "Dropout rate before the last layer")->capture_default_str();
  train_cmd->add_option("--weight-decay", tc.weight_decay, "L2 weight decay")->capture_default_str();
  train_cmd->add_option("--pos-fraction", tc.pos_fraction, "Positive patches per batch")->capture_default_str();
  train_cmd->add_option("--eval-every", tc.eval_every, "Steps between validation evaluations")->capture_default_str();
  train_cmd->add_option("--patience", tc.patience, "Evaluations without improvement before stopping")->capture_default_str();
  train_cmd->add_option("--max-steps", tc.max_steps, "Upper bound on SGD steps")->capture_default_str();
  train_cmd->add_option("--log-every", tc.log_every, "Steps between log lines")->capture_default_str();
  train_cmd->add_option("--seed", tc.seed, "Seed for initialization, sampling and dropout")->capture_default_str();
  train_cmd->add_option("--bn-epsilon", tc.bn_epsilon, "Batch-norm epsilon")->capture_default_str();
  train_cmd->add_option("--bn-momentum", tc.bn_momentum, "Batch-norm running-statistics momentum")->capture_default_str();

  // detect
  auto* detect_cmd = app.add_subcommand("detect", "Write pore detections for images");
  fs::path detect_checkpoint, detect_out;
  std::vector<fs::path> detect_images;
  DataOptions detect_data;
  DetectOptions detect_opts;
  detect_cmd->add_option("--checkpoint", detect_checkpoint, "Trained checkpoint")->required();
  detect_cmd->add_option("--image", detect_images, "Image file(s); alternative to --data");
  add_data_options(detect_cmd, detect_data, "test", false);
  detect_cmd->add_option("--out", detect_out, "Directory for <stem>.txt detection files")->required();
  add_detect_options(detect_cmd, detect_opts);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Score detections with the pore evaluation protocol");
  DataOptions eval_data;
  fs::path eval_detections, eval_checkpoint, eval_out;
  DetectOptions eval_detect;
  std::string eval_averaging = "micro";
  add_data_options(eval_cmd, eval_data, "test", true);
  auto* det_opt = eval_cmd->add_option("--detections", eval_detections,
                                       "Directory of <stem>.txt detection files to score");
  auto* ckpt_opt = eval_cmd->add_option("--checkpoint", eval_checkpoint, "Detect with this checkpoint instead");
  det_opt->excludes(ckpt_opt);
  add_detect_options(eval_cmd, eval_detect);
  eval_cmd->add_option("--averaging", eval_averaging, "micro (pool counts) or macro (mean of per-image rates)")
      ->check(CLI::IsMember({"micro", "macro"}))
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Report file (default: stdout)");

  // gridsearch
  auto* grid_cmd = app.add_subcommand("gridsearch", "Search p_t x i_t on the validation images");
  DataOptions grid_data;
  fs::path grid_checkpoint, grid_out;
  std::string grid_averaging = "micro";
  grid_cmd->add_option("--checkpoint", grid_checkpoint, "Trained checkpoint")->required();
  add_data_options(grid_cmd, grid_data, "validation", true);
  grid_cmd->add_option("--averaging", grid_averaging, "micro or macro")
      ->check(CLI::IsMember({"micro", "macro"}))
      ->capture_default_str();
  grid_cmd->add_option("--out", grid_out, "Grid table file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) {
      echo_config(*synth);
      sc.seed = synth_seed;
      validate_flags(sc, "synth");
      const auto paths = generate_dataset(synth_out, synth_count, sc, synth_seed);
      std::cout << "wrote " << paths.size() << " image/annotation pairs to " << synth_out.string() << "\n";
    } else if (*train_cmd) {
      echo_config(*train_cmd);
      validate_flags(tc, "train");
      DatasetSplit split = load_split(train_data);
      if (train_log.empty()) train_log = train_checkpoint.string() + ".log.csv";
      std::ofstream log(train_log, std::ios::trunc);
      if (!log) throw IoError("cannot write " + train_log.string());
      write_log_header(log);
      std::cout << "training on " << split.train.size() << " images, validating on "
                << split.validation.size() << "\n";
      const TrainResult result = train(make_pore_model(tc.model_config()), split.train, split.validation, tc,
                                       [&](const LogEntry& e) {
                                         write_log_entry(e, log);
                                         if (e.val_fscore) {
                                           std::cout << "step " << e.step << " loss " << e.loss
                                                     << " val_fscore " << *e.val_fscore << "\n";
                                         }
                                       });
      if (train_checkpoint.has_parent_path()) fs::create_directories(train_checkpoint.parent_path());
      save_checkpoint(result.best, train_checkpoint);
      std::cout << "best val_fscore " << result.best_fscore << " at step " << result.best_step << " ("
                << result.steps << " steps, " << result.evaluations << " evaluations)\n"
                << "parameters " << param_count(result.best) << "\n";
    } else if (*detect_cmd) {
      echo_config(*detect_cmd);
      const PoreModel model = load_checkpoint(detect_checkpoint);
      std::vector<std::pair<std::string, GrayImage>> images;
      for (const auto& p : detect_images) images.emplace_back(p.stem().string(), load_image(p));
      if (!detect_data.dir.empty()) {
        for (auto& s : select_subset(load_split(detect_data), detect_data.subset)) {
          images.emplace_back(s.name, std::move(s.image));
        }
      }
      if (images.empty()) throw CLI::ValidationError("detect", "provide --image or --data");
      fs::create_directories(detect_out);
      const DetectParams params = detect_opts.params();
      for (const auto& [name, image] : images) {
        const DetectionSet d = detect_pores(model, image, params);
        save_detections(d, detect_out / (name + ".txt"));
        std::cout << name << ": " << d.size() << " detections\n";
      }
    } else if (*eval_cmd) {
      echo_config(*eval_cmd);
      if (eval_detections.empty() && eval_checkpoint.empty()) {
        throw CLI::ValidationError("evaluate", "provide --detections or --checkpoint");
      }
      const auto samples = select_subset(load_split(eval_data), eval_data.subset);
      std::optional<PoreModel> model;
      if (!eval_checkpoint.empty()) model = load_checkpoint(eval_checkpoint);
      std::vector<EvaluationInput> inputs;
      for (const auto& s : samples) {
        const int h = s.image.height(), w = s.image.width();
        const DetectionSet d = model ? detect_pores(*model, s.image, eval_detect.params())
                                     : load_detections(eval_detections / (s.name + ".txt"), h, w);
        inputs.push_back({s.name, h, w, d.points(), s.truth.pores});
      }
      const EvaluationReport report = evaluate(inputs, parse_averaging(eval_averaging));
      if (eval_out.empty()) {
        write_report(report, std::cout);
      } else {
        write_file(eval_out, [&](std::ostream& out) { write_report(report, out); });
      }
      std::cout << "pooled tdr " << report.metrics.tdr << " fdr " << report.metrics.fdr << " f_score "
                << report.metrics.f_score << "\n";
    } else if (*grid_cmd) {
      echo_config(*grid_cmd);
      const PoreModel model = load_checkpoint(grid_checkpoint);
      const auto samples = select_subset(load_split(grid_data), grid_data.subset);
      const GridSearchResult grid = grid_search(model, samples, parse_averaging(grid_averaging));
      if (grid_out.empty()) {
        write_grid(grid, std::cout);
      } else {
        write_file(grid_out, [&](std::ostream& out) { write_grid(grid, out); });
      }
      std::cout << "best p_t " << grid.best.p_t << " i_t " << grid.best.i_t << " f_score "
                << grid.best.metrics.f_score << "\n";
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "error: incompatible checkpoint: " << e.what() << "\n";
    return kBadCheckpoint;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kOk;
}
