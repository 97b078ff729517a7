#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "vetcode/tokenizer.hpp"

namespace vetcode {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Partition { backbone, head };

std::string_view to_string(Partition partition);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 128;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t max_len = kDefaultMaxLen;
  std::size_t classes = 0;
  double dropout = 0.25;
  bool backbone_frozen = false;

  std::size_t ff_dim() const { return 4 * dim; }
  // Throws Error(config) on non-positive sizes, heads not dividing dim, or
  // dropout outside [0, 1).
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Pre-norm encoder block. Linear weights are stored (out x in) and biases,
// layer-norm gains and shifts as 1 x n rows.
struct BlockParams {
  Matrix norm1_gain, norm1_bias;
  Matrix query_weight, query_bias;
  Matrix key_weight, key_bias;
  Matrix value_weight, value_bias;
  Matrix output_weight, output_bias;
  Matrix norm2_gain, norm2_bias;
  Matrix ff1_weight, ff1_bias;
  Matrix ff2_weight, ff2_bias;
};

struct Parameters {
  Matrix token_embedding;     // V x d
  Matrix position_embedding;  // max_len x d
  std::vector<BlockParams> blocks;
  Matrix final_norm_gain, final_norm_bias;
  Matrix pooler_weight, pooler_bias;          // d x d, 1 x d
  Matrix classifier_weight, classifier_bias;  // C x d, 1 x C

  // Calls f(name, tensor, partition) for every tensor in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  // Same layout with every tensor zero; tensors of a frozen backbone are left
  // empty (0 x 0) when `skip_backbone` is set.
  static Parameters zeros_like(const Parameters& shape, bool skip_backbone = false);
  std::size_t count() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f(std::string("token_embedding"), self.token_embedding, Partition::backbone);
    f(std::string("position_embedding"), self.position_embedding, Partition::backbone);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      auto& b = self.blocks[i];
      const std::string p = "block" + std::to_string(i) + ".";
      f(p + "norm1_gain", b.norm1_gain, Partition::backbone);
      f(p + "norm1_bias", b.norm1_bias, Partition::backbone);
      f(p + "query_weight", b.query_weight, Partition::backbone);
      f(p + "query_bias", b.query_bias, Partition::backbone);
      f(p + "key_weight", b.key_weight, Partition::backbone);
      f(p + "key_bias", b.key_bias, Partition::backbone);
      f(p + "value_weight", b.value_weight, Partition::backbone);
      f(p + "value_bias", b.value_bias, Partition::backbone);
      f(p + "output_weight", b.output_weight, Partition::backbone);
      f(p + "output_bias", b.output_bias, Partition::backbone);
      f(p + "norm2_gain", b.norm2_gain, Partition::backbone);
      f(p + "norm2_bias", b.norm2_bias, Partition::backbone);
      f(p + "ff1_weight", b.ff1_weight, Partition::backbone);
      f(p + "ff1_bias", b.ff1_bias, Partition::backbone);
      f(p + "ff2_weight", b.ff2_weight, Partition::backbone);
      f(p + "ff2_bias", b.ff2_bias, Partition::backbone);
    }
    f(std::string("final_norm_gain"), self.final_norm_gain, Partition::backbone);
    f(std::string("final_norm_bias"), self.final_norm_bias, Partition::backbone);
    f(std::string("pooler_weight"), self.pooler_weight, Partition::head);
    f(std::string("pooler_bias"), self.pooler_bias, Partition::head);
    f(std::string("classifier_weight"), self.classifier_weight, Partition::head);
    f(std::string("classifier_bias"), self.classifier_bias, Partition::head);
  }
};

struct ModelState {
  ModelConfig config;
  Parameters params;
};

// Weights ~ U(-a, a) with a = sqrt(6 / (rows + cols)); biases and layer-norm
// shifts 0, layer-norm gains 1.
ModelState init_model(const ModelConfig& config, std::uint64_t seed);

// Row-major padded id matrix; mask is 1 for real tokens. Every row starts
// with the sequence-start token.
struct Batch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;
};

Batch make_batch(std::span<const std::vector<TokenId>> sequences);

// Raw logits, batch x C. Dropout (after the pooler's tanh) is active only in
// train mode and is a pure function of (dropout_seed, row).
Matrix forward(const ModelState& state, const Batch& batch, bool train_mode,
               std::uint64_t dropout_seed);

struct Prediction {
  std::vector<double> probabilities;
  std::vector<std::size_t> predicted;  // indices with p > threshold, ascending
};

double sigmoid(double z);
Prediction predict(std::span<const double> logits, double threshold = 0.5);

// Mean over all entries of max(z,0) - z*t + log(1 + exp(-|z|)).
double bce_with_logits(const Matrix& logits, const Matrix& targets);

struct LossAndGradients {
  double loss = 0.0;
  Parameters gradients;  // backbone tensors empty when the backbone is frozen
};

LossAndGradients backward(const ModelState& state, const Batch& batch, const Matrix& targets,
                          bool train_mode, std::uint64_t dropout_seed);

// Binary checkpoint: "VCKPT001", u64 header length, JSON header (config and
// tensor table), then every tensor's float64 values in little-endian order.
void save_checkpoint(const std::filesystem::path& path, const ModelState& state);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace vetcode
