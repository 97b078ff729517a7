#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vetcode/corpus.hpp"
#include "vetcode/model.hpp"

namespace vetcode {

struct TrainConfig {
  std::size_t batch_size = 32;
  double peak_learning_rate = 3e-5;
  std::size_t warmup_steps = 5000;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  double threshold = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Linear warmup from 0 to the peak over warmup_steps, constant afterwards.
double lr_at(const TrainConfig& config, std::size_t step);

// AdamW with decoupled weight decay: each step first scales parameters by
// (1 - lr * weight_decay), then applies the bias-corrected Adam update.
// Tensors whose gradient is empty (frozen) are left untouched.
class AdamW {
 public:
  AdamW(const Parameters& shape, double beta1, double beta2, double epsilon, double weight_decay);

  void step(Parameters& params, const Parameters& gradients, double lr);
  std::size_t steps() const { return steps_; }

 private:
  Parameters first_moment_;
  Parameters second_moment_;
  double beta1_, beta2_, epsilon_, weight_decay_;
  std::size_t steps_ = 0;
};

// Tracks the best monitored value; improvement means strictly greater.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Records the value of a finished epoch (1-based order); returns true when
  // it is a new best.
  bool update(double value);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_value() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct EncodedSet {
  std::vector<std::vector<TokenId>> inputs;
  std::vector<std::vector<std::size_t>> targets;  // class indices

  std::size_t size() const { return inputs.size(); }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_f1 = 0.0;  // percent
  double learning_rate = 0.0;
  double seconds = 0.0;
};

enum class StopReason { early_stop, max_epochs };
std::string_view to_string(StopReason reason);

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t global_steps = 0;
  StopReason stop_reason = StopReason::max_epochs;
};

struct TrainResult {
  ModelState model;  // parameters from the best validation epoch
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(ModelState initial, const EncodedSet& train_set, const EncodedSet& validation_set,
                  std::span<const std::string> inventory, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

Matrix targets_matrix(std::span<const std::vector<std::size_t>> targets, std::size_t classes);

// Inference in fixed-size batches; rows follow the input order.
Matrix infer_logits(const ModelState& state, std::span<const std::vector<TokenId>> inputs,
                    std::size_t batch_size = 64);
std::vector<CodeSet> predict_code_sets(const ModelState& state,
                                       std::span<const std::vector<TokenId>> inputs,
                                       std::span<const std::string> inventory, double threshold);

// epoch,train_loss,val_f1,lr,seconds
void write_train_log_csv(std::ostream& out, const TrainLog& log);

}  // namespace vetcode
