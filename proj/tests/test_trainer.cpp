#include <cmath>
#include <cstring>
#include <limits>

#include <doctest.h>

#include "vetcode/corpus.hpp"
#include "vetcode/error.hpp"
#include "vetcode/pipeline.hpp"
#include "vetcode/rng.hpp"
#include "vetcode/splitter.hpp"
#include "vetcode/trainer.hpp"

using namespace vetcode;

namespace {

PipelineConfig small_pipeline() {
  PipelineConfig c;
  c.input.max_len = 48;
  c.model.dim = 16;
  c.model.blocks = 1;
  c.model.heads = 2;
  c.train.batch_size = 16;
  c.train.peak_learning_rate = 3e-3;
  c.train.warmup_steps = 10;
  c.train.max_epochs = 3;
  c.train.patience = 2;
  return c;
}

bool same_params(const Parameters& a, const Parameters& b) {
  std::vector<const Matrix*> mb;
  b.visit([&](const std::string&, const Matrix& m, Partition) { mb.push_back(&m); });
  bool same = true;
  std::size_t i = 0;
  a.visit([&](const std::string&, const Matrix& m, Partition) {
    const Matrix& o = *mb[i++];
    same = same && o.rows() == m.rows() && o.cols() == m.cols() && o == m;
  });
  return same;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  CHECK(lr_at(c, 0) == 0.0);
  CHECK(lr_at(c, 2500) == 1.5e-5);
  CHECK(lr_at(c, 5000) == 3e-5);
  CHECK(lr_at(c, 1000000) == 3e-5);
  c.warmup_steps = 0;
  CHECK(lr_at(c, 0) == 3e-5);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.patience = 60;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("early stopping counting rule") {
  EarlyStopping stopping(5);
  const double sequence[] = {0.40, 0.42, 0.41, 0.41, 0.41, 0.41, 0.41, 0.50};
  std::size_t stopped_after = 0;
  for (std::size_t e = 0; e < 8; ++e) {
    stopping.update(sequence[e]);
    if (stopping.should_stop()) {
      stopped_after = e + 1;
      break;
    }
  }
  CHECK(stopped_after == 7);
  CHECK(stopping.best_epoch() == 2);
  CHECK(stopping.best_value() == 0.42);

  EarlyStopping ties(2);
  ties.update(0.5);
  ties.update(0.5);  // equal is not an improvement
  CHECK(ties.best_epoch() == 1);
  ties.update(0.5);
  CHECK(ties.should_stop());
}

TEST_CASE("AdamW with zero gradients decays exactly") {
  ModelConfig mc;
  mc.vocab_size = 10;
  mc.dim = 4;
  mc.blocks = 1;
  mc.heads = 2;
  mc.max_len = 6;
  mc.classes = 2;
  auto state = init_model(mc, 1);
  const auto zero = Parameters::zeros_like(state.params);
  AdamW opt(state.params, 0.9, 0.999, 1e-8, 0.01);
  for (int step = 0; step < 5; ++step) {
    auto expected = state.params;
    const double lr = 1e-3 * (step + 1);
    expected.visit([&](const std::string&, Matrix& m, Partition) { m *= (1.0 - lr * 0.01); });
    opt.step(state.params, zero, lr);
    CHECK(same_params(state.params, expected));
  }
  CHECK(opt.steps() == 5);
}

TEST_CASE("AdamW first step moves each entry by about lr") {
  Parameters p;
  p.token_embedding = Matrix::Constant(2, 2, 1.0);
  Parameters g;
  g.token_embedding = Matrix::Constant(2, 2, 0.3);
  g.token_embedding(0, 0) = -2.0;
  AdamW opt(p, 0.9, 0.999, 1e-8, 0.0);
  opt.step(p, g, 0.1);
  // bias-corrected first step is lr * g / (|g| + eps)
  CHECK(p.token_embedding(0, 0) == doctest::Approx(1.1).epsilon(1e-7));
  CHECK(p.token_embedding(1, 1) == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("training loss falls on a fixed batch") {
  ModelConfig mc;
  mc.vocab_size = 30;
  mc.dim = 16;
  mc.blocks = 1;
  mc.heads = 2;
  mc.max_len = 10;
  mc.classes = 4;
  mc.dropout = 0.0;
  auto state = init_model(mc, 3);
  std::vector<std::vector<TokenId>> seqs;
  Rng rng(5);
  for (int i = 0; i < 8; ++i) {
    std::vector<TokenId> s{kStartId};
    for (int k = 0; k < 6; ++k) s.push_back(static_cast<TokenId>(3 + rng.below(27)));
    seqs.push_back(s);
  }
  const auto batch = make_batch(seqs);
  Matrix targets = Matrix::Zero(8, 4);
  for (int i = 0; i < 8; ++i) targets(i, i % 4) = 1.0;
  AdamW opt(state.params, 0.9, 0.999, 1e-8, 0.01);
  double previous = std::numeric_limits<double>::infinity();
  int non_decreasing = 0;
  for (int step = 0; step < 10; ++step) {
    auto lg = backward(state, batch, targets, true, static_cast<std::uint64_t>(step));
    if (!(lg.loss < previous)) ++non_decreasing;
    previous = lg.loss;
    opt.step(state.params, lg.gradients, 1e-3);
  }
  CHECK(non_decreasing <= 2);
}

TEST_CASE("training run contracts") {
  GeneratorConfig gen;
  gen.records = 160;
  gen.codes = 8;
  const auto corpus = generate_synthetic(gen, 12).corpus;
  const auto plan = stratified_split(corpus, {}, 1);
  const auto config = small_pipeline();

  const auto a = run_pipeline(corpus, plan, config, 99);
  const auto b = run_pipeline(corpus, plan, config, 99);
  REQUIRE(a.trained.log.epochs.size() == b.trained.log.epochs.size());
  for (std::size_t e = 0; e < a.trained.log.epochs.size(); ++e) {
    CHECK(a.trained.log.epochs[e].train_loss == b.trained.log.epochs[e].train_loss);
    CHECK(a.trained.log.epochs[e].validation_f1 == b.trained.log.epochs[e].validation_f1);
  }
  CHECK(same_params(a.trained.model.params, b.trained.model.params));
  CHECK(a.test.report.f1 == b.test.report.f1);

  // logged LR matches the schedule at the global step
  const auto& log = a.trained.log;
  const auto steps_per_epoch = (plan.count(SplitTag::train) + 15) / 16;
  CHECK(log.global_steps == steps_per_epoch * log.epochs.size());
  for (const auto& e : log.epochs) {
    TrainConfig tc = config.train;
    CHECK(e.learning_rate == lr_at(tc, e.epoch * steps_per_epoch));
  }

  // the returned state is the best-validation one
  double best = -1;
  for (const auto& e : log.epochs) best = std::max(best, e.validation_f1);
  CHECK(log.epochs[log.best_epoch - 1].validation_f1 == best);
  const auto validation = split_indices(corpus, plan, SplitTag::validation);
  const auto rescored = evaluate_records(a.trained.model, a.vocab, corpus, validation,
                                         config.input.fields, config.train.threshold);
  CHECK(rescored.report.f1 == best);

  const auto c = run_pipeline(corpus, plan, config, 100);
  CHECK_FALSE(same_params(a.trained.model.params, c.trained.model.params));
}

TEST_CASE("frozen training leaves the backbone bitwise unchanged") {
  GeneratorConfig gen;
  gen.records = 120;
  gen.codes = 6;
  const auto corpus = generate_synthetic(gen, 3).corpus;
  const auto plan = stratified_split(corpus, {}, 1);
  auto config = small_pipeline();
  config.model.backbone_frozen = true;
  const auto train_records = split_indices(corpus, plan, SplitTag::train);
  std::vector<std::string> texts;
  for (const auto r : train_records) texts.push_back(build_input(corpus.at(r), config.input.fields));
  const auto vocab = build_vocab(texts, 1, 1000, 48);
  auto mc = config.model;
  mc.vocab_size = vocab.size();
  mc.classes = corpus.num_classes();
  mc.max_len = 48;
  const auto initial = init_model(mc, 4);
  const auto train_set = encode_records(corpus, train_records, vocab, config.input.fields);

  auto state = initial;
  AdamW opt(state.params, 0.9, 0.999, 1e-8, 0.01);
  std::size_t cursor = 0;
  for (int step = 1; step <= 100; ++step) {
    std::vector<std::vector<TokenId>> inputs;
    std::vector<std::vector<std::size_t>> targets;
    for (int k = 0; k < 8; ++k, cursor = (cursor + 1) % train_set.size()) {
      inputs.push_back(train_set.inputs[cursor]);
      targets.push_back(train_set.targets[cursor]);
    }
    auto lg = backward(state, make_batch(inputs), targets_matrix(targets, mc.classes), true,
                       static_cast<std::uint64_t>(step));
    opt.step(state.params, lg.gradients, 1e-3);
  }
  std::vector<const Matrix*> before;
  initial.params.visit([&](const std::string&, const Matrix& m, Partition) { before.push_back(&m); });
  std::size_t i = 0;
  state.params.visit([&](const std::string& name, const Matrix& m, Partition part) {
    const Matrix& o = *before[i++];
    if (part == Partition::backbone) {
      CHECK_MESSAGE(std::memcmp(o.data(), m.data(), sizeof(double) * m.size()) == 0, name);
    } else if (name.ends_with("weight")) {
      CHECK_MESSAGE(o != m, name);
    }
  });
}

TEST_CASE("replicates") {
  GeneratorConfig gen;
  gen.records = 100;
  gen.codes = 5;
  const auto corpus = generate_synthetic(gen, 8).corpus;
  const auto plan = stratified_split(corpus, {}, 2);
  auto config = small_pipeline();
  config.train.max_epochs = 2;
  config.train.patience = 1;
  const std::uint64_t seeds[] = {1, 2, 1};
  const auto reports = run_replicates(corpus, plan, config, seeds);
  CHECK(reports.size() == 3);
  CHECK(reports[0].f1 == reports[2].f1);
  CHECK(reports[0].exact_match == reports[2].exact_match);
  const auto summary = summarize_replicates(reports);
  CHECK(summary.f1.runs == 3);
  CHECK(summary.f1.half_width >= 0.0);
}

TEST_CASE("train rejects empty splits") {
  ModelConfig mc;
  mc.vocab_size = 10;
  mc.dim = 4;
  mc.blocks = 1;
  mc.heads = 2;
  mc.max_len = 6;
  mc.classes = 2;
  EncodedSet empty;
  EncodedSet one;
  one.inputs = {{kStartId}};
  one.targets = {{0}};
  const std::vector<std::string> inventory = {"1", "2"};
  CHECK_THROWS_AS(train(init_model(mc, 1), empty, one, inventory, TrainConfig{}), Error);
  CHECK_THROWS_AS(train(init_model(mc, 1), one, empty, inventory, TrainConfig{}), Error);
}
