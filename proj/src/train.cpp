#include "poredet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "poredet/detect.hpp"
#include "poredet/errors.hpp"
#include "poredet/synth.hpp"

namespace poredet {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ValidationError("base_lr must be positive");
  if (!(decay_rate > 0.0)) throw ValidationError("decay_rate must be positive");
  if (decay_steps < 1) throw ValidationError("decay_steps must be positive");
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValidationError("dropout_rate must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
  if (!(pos_fraction >= 0.0 && pos_fraction <= 1.0)) throw ValidationError("pos_fraction must be in [0, 1]");
  if (eval_every < 1) throw ValidationError("eval_every must be positive");
  if (patience < 0) throw ValidationError("patience must be non-negative");
  if (max_steps < 1) throw ValidationError("max_steps must be positive");
  if (log_every < 1) throw ValidationError("log_every must be positive");
  if (!(bn_epsilon > 0.0)) throw ValidationError("bn_epsilon must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ValidationError("bn_momentum must be in (0, 1)");
}

ModelConfig TrainConfig::model_config() const {
  return {derive_seed(seed, 1), static_cast<float>(dropout_rate), static_cast<float>(bn_epsilon),
          static_cast<float>(bn_momentum)};
}

PatchScores classification_scores(std::span<const float> probabilities, std::span<const int> labels,
                                  double threshold) {
  if (probabilities.size() != labels.size()) throw SizeMismatch("one label per prediction required");
  if (probabilities.empty()) throw ValidationError("patch F-score needs a non-empty patch set");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = probabilities[i] > static_cast<float>(threshold);
    if (predicted && labels[i] == 1) ++tp;
    if (predicted && labels[i] == 0) ++fp;
    if (!predicted && labels[i] == 1) ++fn;
  }
  PatchScores s;
  s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  const double denom = s.precision + s.recall;
  s.f_score = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  return s;
}

PatchScores patch_fscore(const PoreModel& model, std::span<const PatchExample> patches,
                         double threshold) {
  if (patches.empty()) throw ValidationError("patch F-score needs a non-empty patch set");
  std::vector<float> probs;
  std::vector<int> labels;
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < patches.size(); start += kChunk) {
    const auto chunk = patches.subspan(start, std::min(kChunk, patches.size() - start));
    const FeatureMap p = predict(model, stack_patches(chunk));
    probs.insert(probs.end(), p.values().begin(), p.values().end());
    for (const auto& ex : chunk) labels.push_back(ex.label);
  }
  return classification_scores(probs, labels, threshold);
}

ValidationPatches make_validation_patches(std::span<const Sample> samples, std::uint64_t seed) {
  ValidationPatches out;
  std::size_t positives = 0;
  std::vector<ValidationPatches::Entry> negatives;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int h = samples[i].image.height(), w = samples[i].image.width();
    if (h < kReceptiveField || w < kReceptiveField) continue;
    const auto mask = label_mask(h, w, samples[i].truth);
    for (int r = kBorder; r < h - kBorder; ++r) {
      for (int c = kBorder; c < w - kBorder; ++c) {
        const int label = mask[static_cast<std::size_t>(r) * w + c];
        if (label) {
          out.entries.push_back({i, {r, c}, 1});
          ++positives;
        } else {
          negatives.push_back({i, {r, c}, 0});
        }
      }
    }
  }
  nn::Rng rng(seed);
  const std::size_t take = std::min(positives, negatives.size());
  // Partial Fisher-Yates: the first `take` entries become a uniform sample.
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, negatives.size() - 1);
    std::swap(negatives[i], negatives[pick(rng)]);
  }
  out.entries.insert(out.entries.end(), negatives.begin(),
                     negatives.begin() + static_cast<std::ptrdiff_t>(take));
  return out;
}

PatchScores score_validation(const PoreModel& model, std::span<const Sample> samples,
                             const ValidationPatches& patches, double threshold) {
  std::vector<ProbabilityMap> maps;
  maps.reserve(samples.size());
  for (const auto& s : samples) maps.push_back(infer_probability_map(model, s.image));
  std::vector<float> probs;
  std::vector<int> labels;
  probs.reserve(patches.entries.size());
  labels.reserve(patches.entries.size());
  for (const auto& e : patches.entries) {
    probs.push_back(maps[e.image_index].at(e.center.row - kBorder, e.center.col - kBorder));
    labels.push_back(e.label);
  }
  return classification_scores(probs, labels, threshold);
}

double mean_bce(const FeatureMap& logits, std::span<const int> labels, FeatureMap& grad) {
  if (logits.size() != labels.size()) throw SizeMismatch("one label per logit required");
  grad = FeatureMap(logits.shape());
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = nn::bce_with_logit(logits.data()[i], labels[i]);
    total += r.loss;
    grad.data()[i] = static_cast<float>(r.grad_logit / n);
  }
  return total / n;
}

TrainResult train(PoreModel model, std::span<const Sample> train_set,
                  std::span<const Sample> validation_set, const TrainConfig& config,
                  const std::function<void(const LogEntry&)>& on_log) {
  config.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  if (validation_set.empty()) throw ValidationError("validation set is empty");
  model.dropout_rate = static_cast<float>(config.dropout_rate);
  model.validate();

  nn::OptimizerState opt{config.base_lr, config.decay_rate, config.decay_steps, model.step_count,
                         config.weight_decay};
  nn::Rng sample_rng(derive_seed(config.seed, 2));
  nn::Rng dropout_rng(derive_seed(config.seed, 3));
  const PatchSampler sampler(train_set, config.pos_fraction);
  const ValidationPatches monitor = make_validation_patches(validation_set, derive_seed(config.seed, 4));
  if (monitor.entries.empty()) throw ValidationError("validation images yield no monitor patches");

  TrainResult result;
  result.best = model;
  int stale = 0;
  std::vector<int> labels(config.batch_size);
  FeatureMap grad;
  for (std::int64_t step = 1; step <= config.max_steps; ++step) {
    const double lr = opt.effective_lr();
    const auto batch = sampler.sample(config.batch_size, sample_rng);
    std::transform(batch.begin(), batch.end(), labels.begin(), [](const auto& p) { return p.label; });
    const ForwardTrace trace = forward_train(model, stack_patches(batch), dropout_rng);
    const double loss = mean_bce(trace.logits, labels, grad);
    if (!std::isfinite(loss)) {
      throw TrainingDiverged("loss became " + std::to_string(loss) + " at step " +
                             std::to_string(step) + " (lr " + std::to_string(lr) + ")");
    }
    apply_sgd(model, backward(model, trace, grad), opt);
    result.steps = step;

    LogEntry entry{step, lr, loss, std::nullopt};
    const bool evaluate_now = step % config.eval_every == 0 || step == config.max_steps;
    bool stop = false;
    if (evaluate_now) {
      const double f = score_validation(model, validation_set, monitor).f_score;
      entry.val_fscore = f;
      ++result.evaluations;
      if (f > result.best_fscore) {
        result.best = model;
        result.best_fscore = f;
        result.best_step = step;
        stale = 0;
      } else {
        ++stale;
      }
      stop = stale >= config.patience;
    }
    if (evaluate_now || step % config.log_every == 0) {
      result.log.push_back(entry);
      if (on_log) on_log(entry);
    }
    if (stop) break;
  }
  return result;
}

void write_log_header(std::ostream& out) { out << "step,effective_lr,loss,val_fscore\n"; }

void write_log_entry(const LogEntry& entry, std::ostream& out) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%lld,%.8g,%.8f,", static_cast<long long>(entry.step),
                entry.effective_lr, entry.loss);
  out << buf;
  if (entry.val_fscore) {
    std::snprintf(buf, sizeof buf, "%.6f", *entry.val_fscore);
    out << buf;
  }
  out << '\n';
}

}  // namespace poredet
