#include "vetcode/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "vetcode/error.hpp"
#include "vetcode/evaluation.hpp"
#include "vetcode/rng.hpp"

namespace vetcode {

void TrainConfig::validate() const {
  if (batch_size == 0 || max_epochs == 0 || patience == 0) {
    throw Error(ErrorKind::config, "batch size, max epochs and patience must be positive");
  }
  if (patience > max_epochs) throw Error(ErrorKind::config, "patience exceeds max epochs");
  if (!(peak_learning_rate > 0.0) || !(epsilon > 0.0) || weight_decay < 0.0) {
    throw Error(ErrorKind::config, "learning rate and epsilon must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error(ErrorKind::config, "Adam betas must lie in [0, 1)");
  }
}

double lr_at(const TrainConfig& config, std::size_t step) {
  if (config.warmup_steps == 0 || step >= config.warmup_steps) return config.peak_learning_rate;
  return config.peak_learning_rate *
         (static_cast<double>(step) / static_cast<double>(config.warmup_steps));
}

AdamW::AdamW(const Parameters& shape, double beta1, double beta2, double epsilon,
             double weight_decay)
    : first_moment_(Parameters::zeros_like(shape)),
      second_moment_(Parameters::zeros_like(shape)),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon),
      weight_decay_(weight_decay) {}

void AdamW::step(Parameters& params, const Parameters& gradients, double lr) {
  ++steps_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  const double decay = 1.0 - lr * weight_decay_;

  std::vector<const Matrix*> grads;
  gradients.visit([&](const std::string&, const Matrix& g, Partition) { grads.push_back(&g); });
  std::vector<Matrix*> m1;
  first_moment_.visit([&](const std::string&, Matrix& m, Partition) { m1.push_back(&m); });
  std::vector<Matrix*> m2;
  second_moment_.visit([&](const std::string&, Matrix& m, Partition) { m2.push_back(&m); });

  std::size_t i = 0;
  params.visit([&](const std::string& name, Matrix& p, Partition) {
    const Matrix& g = *grads[i];
    Matrix& m = *m1[i];
    Matrix& v = *m2[i];
    ++i;
    if (g.size() == 0) return;
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw Error(ErrorKind::shape, "gradient shape mismatch for " + name);
    }
    p *= decay;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / correction1) /
                 ((v.array() / correction2).sqrt() + epsilon_);
  });
}

bool EarlyStopping::update(double value) {
  ++epoch_;
  if (value > best_) {
    best_ = value;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

std::string_view to_string(StopReason reason) {
  return reason == StopReason::early_stop ? "early_stop" : "max_epochs";
}

Matrix targets_matrix(std::span<const std::vector<std::size_t>> targets, std::size_t classes) {
  Matrix t = Matrix::Zero(static_cast<Eigen::Index>(targets.size()),
                          static_cast<Eigen::Index>(classes));
  for (std::size_t r = 0; r < targets.size(); ++r) {
    for (const auto c : targets[r]) {
      if (c >= classes) throw Error(ErrorKind::shape, "target class index out of range");
      t(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = 1.0;
    }
  }
  return t;
}

Matrix infer_logits(const ModelState& state, std::span<const std::vector<TokenId>> inputs,
                    std::size_t batch_size) {
  Matrix logits(static_cast<Eigen::Index>(inputs.size()),
                static_cast<Eigen::Index>(state.config.classes));
  for (std::size_t start = 0; start < inputs.size(); start += batch_size) {
    const auto n = std::min(batch_size, inputs.size() - start);
    const auto batch = make_batch(inputs.subspan(start, n));
    logits.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) =
        forward(state, batch, false, 0);
  }
  return logits;
}

std::vector<CodeSet> predict_code_sets(const ModelState& state,
                                       std::span<const std::vector<TokenId>> inputs,
                                       std::span<const std::string> inventory, double threshold) {
  if (inventory.size() != state.config.classes) {
    throw Error(ErrorKind::shape, "inventory size differs from the model's class count");
  }
  const Matrix logits = infer_logits(state, inputs);
  std::vector<CodeSet> out(inputs.size());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto pred = predict(std::span<const double>(logits.row(r).data(),
                                                      static_cast<std::size_t>(logits.cols())),
                              threshold);
    for (const auto c : pred.predicted) out[static_cast<std::size_t>(r)].insert(inventory[c]);
  }
  return out;
}

TrainResult train(ModelState initial, const EncodedSet& train_set, const EncodedSet& validation_set,
                  std::span<const std::string> inventory, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.size() == 0) throw Error(ErrorKind::invalid_argument, "empty train split");
  if (validation_set.size() == 0) {
    throw Error(ErrorKind::invalid_argument, "empty validation split");
  }
  const auto classes = initial.config.classes;

  std::vector<CodeSet> validation_targets(validation_set.size());
  for (std::size_t r = 0; r < validation_set.size(); ++r) {
    for (const auto c : validation_set.targets[r]) validation_targets[r].insert(inventory[c]);
  }

  TrainResult result;
  ModelState state = std::move(initial);
  result.model = state;
  AdamW optimizer(state.params, config.beta1, config.beta2, config.epsilon, config.weight_decay);
  EarlyStopping stopping(config.patience);
  const auto shuffle_seed = derive_seed(config.seed, "trainer.shuffle");
  const auto dropout_seed = derive_seed(config.seed, "trainer.dropout");

  std::vector<std::size_t> order(train_set.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::vector<std::vector<TokenId>> inputs;
    std::vector<std::vector<std::size_t>> targets;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto n = std::min(config.batch_size, order.size() - start);
      inputs.clear();
      targets.clear();
      for (std::size_t i = start; i < start + n; ++i) {
        inputs.push_back(train_set.inputs[order[i]]);
        targets.push_back(train_set.targets[order[i]]);
      }
      ++step;
      const auto batch = make_batch(inputs);
      auto lg = backward(state, batch, targets_matrix(targets, classes), true,
                         derive_seed(dropout_seed, static_cast<std::uint64_t>(step)));
      optimizer.step(state.params, lg.gradients, lr_at(config, step));
      loss_sum += lg.loss * static_cast<double>(n);
    }

    const auto predictions = predict_code_sets(state, validation_set.inputs, inventory,
                                               config.threshold);
    const auto report = evaluate(validation_targets, predictions, inventory);
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train_set.size());
    record.validation_f1 = report.f1;
    record.learning_rate = lr_at(config, step);
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.epochs.push_back(record);
    if (on_epoch) on_epoch(record);

    if (stopping.update(report.f1)) result.model = state;
    if (stopping.should_stop()) {
      result.log.stop_reason = StopReason::early_stop;
      break;
    }
  }
  result.log.best_epoch = stopping.best_epoch();
  result.log.global_steps = step;
  if (result.log.stop_reason != StopReason::early_stop) result.log.stop_reason = StopReason::max_epochs;
  return result;
}

void write_train_log_csv(std::ostream& out, const TrainLog& log) {
  out << "epoch,train_loss,val_f1,lr,seconds\n";
  for (const auto& e : log.epochs) {
    out << fmt::format("{},{:.8f},{:.4f},{:.6e},{:.3f}\n", e.epoch, e.train_loss, e.validation_f1,
                       e.learning_rate, e.seconds);
  }
}

}  // namespace vetcode
