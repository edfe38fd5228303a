#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "poredet/data.hpp"
#include "poredet/model.hpp"

namespace poredet {

struct TrainConfig {
  double base_lr = 0.1;
  double decay_rate = 0.96;
  std::int64_t decay_steps = 2000;
  int batch_size = 256;
  double dropout_rate = 0.2;
  double weight_decay = 0.0;
  double pos_fraction = 0.5;
  std::int64_t eval_every = 250;
  /// Evaluations without improvement tolerated before stopping.
  int patience = 5;
  std::int64_t max_steps = 50000;
  std::int64_t log_every = 10;
  std::uint64_t seed = 0;
  double bn_epsilon = 1e-3;
  double bn_momentum = 0.99;

  void validate() const;
  ModelConfig model_config() const;
};

struct PatchScores {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
};

/// Precision/recall/F of "probability > threshold" against binary labels.
/// F is 0 when precision + recall is 0.
PatchScores classification_scores(std::span<const float> probabilities, std::span<const int> labels,
                                  double threshold = 0.5);
PatchScores patch_fscore(const PoreModel& model, std::span<const PatchExample> patches,
                         double threshold = 0.5);

/// Fixed validation monitor: every positive center of every image plus an
/// equal number of seeded negative centers.
struct ValidationPatches {
  struct Entry {
    std::size_t image_index;
    Point center;
    int label;
  };
  std::vector<Entry> entries;
};

ValidationPatches make_validation_patches(std::span<const Sample> samples, std::uint64_t seed);

/// Scores the monitor set by reading one full-image probability map per
/// image (equal to patchwise inference by the sliding-window property).
PatchScores score_validation(const PoreModel& model, std::span<const Sample> samples,
                             const ValidationPatches& patches, double threshold = 0.5);

struct LogEntry {
  std::int64_t step = 0;
  double effective_lr = 0.0;
  double loss = 0.0;
  std::optional<double> val_fscore;
};

struct TrainResult {
  PoreModel best;
  std::int64_t best_step = 0;
  double best_fscore = -1.0;
  std::int64_t steps = 0;
  int evaluations = 0;
  std::vector<LogEntry> log;
};

/// Mean binary cross-entropy over a batch of logits and its gradient.
double mean_bce(const FeatureMap& logits, std::span<const int> labels, FeatureMap& grad);

/// Patch-sampled SGD with early stopping on the validation patch F-score.
/// Keeps the checkpoint with the best (strictly improving) F-score.
/// Throws TrainingDiverged if the loss stops being finite.
TrainResult train(PoreModel model, std::span<const Sample> train_set,
                  std::span<const Sample> validation_set, const TrainConfig& config,
                  const std::function<void(const LogEntry&)>& on_log = {});

/// CSV: step,effective_lr,loss,val_fscore (blank when not evaluated).
void write_log_header(std::ostream& out);
void write_log_entry(const LogEntry& entry, std::ostream& out);

}  // namespace poredet
