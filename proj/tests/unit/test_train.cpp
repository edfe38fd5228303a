#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "poredet/errors.hpp"
#include "poredet/synth.hpp"
#include "poredet/train.hpp"

using namespace poredet;

namespace {

std::vector<Sample> synth_samples(int n, std::uint64_t seed, int size = 64, int pores = 12) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    SynthConfig c;
    c.height = c.width = size;
    c.pore_count = pores;
    c.seed = derive_seed(seed, i);
    SynthImage s = generate(c);
    out.push_back({"s" + std::to_string(i), std::move(s.image), std::move(s.truth)});
  }
  return out;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("classification scores") {
  const std::vector<float> p{0.9f, 0.2f, 0.7f, 0.1f};
  const std::vector<int> y{1, 0, 1, 0};
  CHECK(classification_scores(p, y).f_score == 1.0);
  const std::vector<float> none{0.1f, 0.2f, 0.3f, 0.1f};
  const auto s = classification_scores(none, y);
  CHECK(s.recall == 0.0);
  CHECK(s.f_score == 0.0);
  const std::vector<float> half{0.9f, 0.9f, 0.1f, 0.1f};
  const auto h = classification_scores(half, y);
  CHECK(h.precision == 0.5);
  CHECK(h.recall == 0.5);
  CHECK(h.f_score == 0.5);
  // Strictly greater than the threshold counts as positive.
  const std::vector<float> edge{0.5f, 0.5f, 0.5f, 0.5f};
  CHECK(classification_scores(edge, y).recall == 0.0);
}

TEST_CASE("patch F-score arithmetic") {
  const double p = 0.9112, r = 0.9195;
  CHECK(std::abs(2 * p * r / (p + r) - 0.9153) < 1e-4);
}

TEST_CASE("mean_bce") {
  FeatureMap logits(4, 1, 1, 1);
  const std::vector<int> labels{0, 1, 1, 0};
  FeatureMap grad;
  CHECK(mean_bce(logits, labels, grad) == doctest::Approx(std::log(2.0)));
  CHECK(grad.storage() == std::vector<float>{0.125f, -0.125f, -0.125f, 0.125f});
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.patience = -1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("loss at initialization on a balanced random-label batch") {
  // The final batch norm standardizes train-mode logits, so the expected loss
  // is E[softplus(Z)] for Z ~ N(0, 1) rather than ln 2.
  double expected = 0.0;
  const double step = 1e-3;
  for (double z = -10.0; z <= 10.0; z += step) {
    expected += std::log1p(std::exp(z)) * std::exp(-z * z / 2) / std::sqrt(2 * M_PI) * step;
  }
  CHECK(expected == doctest::Approx(0.8063).epsilon(1e-3));

  const auto samples = synth_samples(2, 1);
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    TrainConfig c;
    c.seed = seed;
    PoreModel m = make_pore_model(c.model_config());
    nn::Rng rng(seed);
    const auto batch = sample_batch(samples, 256, 0.5, rng);
    std::vector<int> labels;
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < batch.size(); ++i) labels.push_back(coin(rng));
    FeatureMap grad;
    const double loss = mean_bce(forward_train(m, stack_patches(batch), rng).logits, labels, grad);
    CHECK(std::abs(loss - expected) < 0.1);
    mean += loss / 8;
  }
  CHECK(std::abs(mean - expected) < 0.05);
}

TEST_CASE("a single image with one pore is overfit") {
  std::vector<Sample> one(1);
  one[0].name = "one";
  one[0].image = GrayImage(40, 40, 0.2f);
  one[0].image(20, 20) = 1.0f;
  one[0].truth.pores = {{20, 20}};
  TrainConfig c;
  c.batch_size = 32;
  c.max_steps = 200;
  c.eval_every = 100;
  c.patience = 10;
  c.log_every = 1;
  c.seed = 3;
  const TrainResult r = train(make_pore_model(c.model_config()), one, one, c);
  CHECK(r.steps == 200);
  REQUIRE(r.log.size() >= 20);
  double tail = 0.0;
  for (std::size_t i = r.log.size() - 20; i < r.log.size(); ++i) tail += r.log[i].loss;
  CHECK(tail / 20 < std::log(2.0));
  CHECK(r.log.back().loss < r.log.front().loss);
}

TEST_CASE("patience 0 stops after one evaluation") {
  const auto samples = synth_samples(2, 2);
  TrainConfig c;
  c.batch_size = 16;
  c.eval_every = 5;
  c.patience = 0;
  c.max_steps = 100;
  const PoreModel init = make_pore_model(c.model_config());
  const TrainResult r = train(init, samples, samples, c);
  CHECK(r.evaluations == 1);
  CHECK(r.steps == 5);
  CHECK(r.best_step == 5);
  CHECK(r.best.step_count == 5);
}

TEST_CASE("training is deterministic and keeps the best checkpoint") {
  const auto samples = synth_samples(3, 3);
  std::span<const Sample> train_set(samples.data(), 2), val_set(samples.data() + 2, 1);
  TrainConfig c;
  c.batch_size = 32;
  c.eval_every = 10;
  c.patience = 3;
  c.max_steps = 60;
  c.log_every = 5;
  c.seed = 9;
  const TrainResult a = train(make_pore_model(c.model_config()), train_set, val_set, c);
  const TrainResult b = train(make_pore_model(c.model_config()), train_set, val_set, c);
  CHECK(a.best == b.best);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);

  double best_seen = -1.0;
  for (const auto& e : a.log) {
    if (e.val_fscore) best_seen = std::max(best_seen, *e.val_fscore);
  }
  CHECK(a.best_fscore == best_seen);
  const auto patches = make_validation_patches(val_set, derive_seed(c.seed, 4));
  CHECK(score_validation(a.best, val_set, patches).f_score == doctest::Approx(a.best_fscore));
}

TEST_CASE("validation patches") {
  const auto samples = synth_samples(2, 4);
  const ValidationPatches v = make_validation_patches(samples, 11);
  std::size_t pos = 0, neg = 0;
  for (const auto& e : v.entries) {
    const Sample& s = samples[e.image_index];
    CHECK(is_valid_center(e.center, s.image.height(), s.image.width()));
    CHECK(e.label == label_patch(e.center, s.truth));
    (e.label ? pos : neg) += 1;
  }
  CHECK(pos > 0);
  CHECK(pos == neg);
  const ValidationPatches again = make_validation_patches(samples, 11);
  CHECK(again.entries.size() == v.entries.size());
}

TEST_CASE("divergence is reported") {
  const auto samples = synth_samples(2, 5);
  TrainConfig c;
  c.batch_size = 16;
  c.base_lr = 1e30;
  c.max_steps = 50;
  c.eval_every = 25;
  CHECK_THROWS_AS(train(make_pore_model(c.model_config()), samples, samples, c), TrainingDiverged);
}

TEST_CASE("log format") {
  std::ostringstream out;
  write_log_header(out);
  write_log_entry({10, 0.1, 0.5, std::nullopt}, out);
  write_log_entry({20, 0.096, 0.25, 0.75}, out);
  CHECK(out.str() == "step,effective_lr,loss,val_fscore\n10,0.1,0.50000000,\n20,0.096,0.25000000,0.750000\n");
}

}
