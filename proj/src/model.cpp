#include "vetcode/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vetcode/error.hpp"
#include "vetcode/rng.hpp"

namespace vetcode {

namespace {

constexpr double kNormEpsilon = 1e-5;
constexpr char kCheckpointMagic[8] = {'V', 'C', 'K', 'P', 'T', '0', '0', '1'};

using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// ---- layer norm ----------------------------------------------------------

struct NormCache {
  Matrix normalized;  // x-hat
  Eigen::VectorXd inv_std;
};

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, NormCache* cache) {
  const auto cols = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / cols;
    const double var = (x.row(r).array() - mean).square().sum() / cols;
    inv_std(r) = 1.0 / std::sqrt(var + kNormEpsilon);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  Matrix y = (xhat.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

// Returns dL/dx; accumulates gain/bias gradients when the targets are set.
Matrix layer_norm_backward(const Matrix& dy, const NormCache& cache, const Matrix& gain,
                           Matrix* gain_grad, Matrix* bias_grad) {
  if (gain_grad) gain_grad->row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  if (bias_grad) bias_grad->row(0) += dy.colwise().sum();
  const Matrix dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const auto cols = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / cols;
    const double mean_dx = dxhat.row(r).dot(cache.normalized.row(r)) / cols;
    dx.row(r) = cache.inv_std(r) *
                (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

// ---- smooth feed-forward nonlinearity ------------------------------------
// Tanh approximation of GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x)));
}

double gelu_derivative(double x) {
  const double t = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
}

// ---- encoder block -------------------------------------------------------

struct BlockCache {
  NormCache norm1;
  Matrix normed;  // T x d
  Matrix query;   // Tq x d
  Matrix key;     // T x d
  Matrix value;   // T x d
  std::vector<Matrix> probs;  // per head, Tq x T
  Matrix attended;            // Tq x d (heads concatenated)
  NormCache norm2;
  Matrix normed2;  // Tq x d
  Matrix hidden;   // Tq x 4d, pre-activation
  Matrix activated;
};

Matrix affine(const Matrix& x, const Matrix& weight, const Matrix& bias) {
  Matrix y = x * weight.transpose();
  y.rowwise() += bias.row(0);
  return y;
}

// x is T x d; only the first `query_rows` rows are carried forward (the last
// block only needs the sequence-start row).
Matrix block_forward(const BlockParams& p, std::size_t heads, const Matrix& x,
                     Eigen::Index query_rows, BlockCache* cache) {
  const Eigen::Index d = x.cols();
  const Eigen::Index head_dim = d / static_cast<Eigen::Index>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  NormCache norm1;
  Matrix normed = layer_norm(x, p.norm1_gain, p.norm1_bias, cache ? &norm1 : nullptr);
  Matrix query = affine(normed.topRows(query_rows), p.query_weight, p.query_bias);
  Matrix key = affine(normed, p.key_weight, p.key_bias);
  Matrix value = affine(normed, p.value_weight, p.value_bias);

  Matrix attended(query_rows, d);
  std::vector<Matrix> probs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * head_dim;
    Matrix scores = query.middleCols(off, head_dim) * key.middleCols(off, head_dim).transpose();
    scores *= scale;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      const double mx = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - mx).exp().matrix();
      scores.row(r) /= scores.row(r).sum();
    }
    attended.middleCols(off, head_dim) = scores * value.middleCols(off, head_dim);
    if (cache) probs.push_back(std::move(scores));
  }

  Matrix y = x.topRows(query_rows) + affine(attended, p.output_weight, p.output_bias);
  NormCache norm2;
  Matrix normed2 = layer_norm(y, p.norm2_gain, p.norm2_bias, cache ? &norm2 : nullptr);
  Matrix hidden = affine(normed2, p.ff1_weight, p.ff1_bias);
  Matrix activated = hidden.unaryExpr([](double v) { return gelu(v); });
  Matrix z = y + affine(activated, p.ff2_weight, p.ff2_bias);

  if (cache) {
    cache->norm1 = std::move(norm1);
    cache->normed = std::move(normed);
    cache->query = std::move(query);
    cache->key = std::move(key);
    cache->value = std::move(value);
    cache->probs = std::move(probs);
    cache->attended = std::move(attended);
    cache->norm2 = std::move(norm2);
    cache->normed2 = std::move(normed2);
    cache->hidden = std::move(hidden);
    cache->activated = std::move(activated);
  }
  return z;
}

void accumulate_affine(const Matrix& dy, const Matrix& x, Matrix& weight_grad, Matrix& bias_grad) {
  weight_grad.noalias() += dy.transpose() * x;
  bias_grad.row(0) += dy.colwise().sum();
}

// dz is Tq x d; returns dL/dx (T x d).
Matrix block_backward(const BlockParams& p, BlockParams& g, std::size_t heads,
                      const BlockCache& c, const Matrix& dz, Eigen::Index seq_len) {
  const Eigen::Index query_rows = dz.rows();
  const Eigen::Index d = dz.cols();
  const Eigen::Index head_dim = d / static_cast<Eigen::Index>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  // Feed-forward branch.
  accumulate_affine(dz, c.activated, g.ff2_weight, g.ff2_bias);
  Matrix dhidden = dz * p.ff2_weight;
  for (Eigen::Index i = 0; i < dhidden.size(); ++i) {
    dhidden.data()[i] *= gelu_derivative(c.hidden.data()[i]);
  }
  accumulate_affine(dhidden, c.normed2, g.ff1_weight, g.ff1_bias);
  const Matrix dnormed2 = dhidden * p.ff1_weight;
  const Matrix dy = dz + layer_norm_backward(dnormed2, c.norm2, p.norm2_gain, &g.norm2_gain,
                                             &g.norm2_bias);

  // Attention branch.
  Matrix dx = Matrix::Zero(seq_len, d);
  dx.topRows(query_rows) += dy;
  accumulate_affine(dy, c.attended, g.output_weight, g.output_bias);
  const Matrix dattended = dy * p.output_weight;

  Matrix dquery(query_rows, d);
  Matrix dkey(seq_len, d);
  Matrix dvalue(seq_len, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * head_dim;
    const Matrix& probs = c.probs[h];
    const auto dout = dattended.middleCols(off, head_dim);
    Matrix dprobs = dout * c.value.middleCols(off, head_dim).transpose();
    dvalue.middleCols(off, head_dim) = probs.transpose() * dout;
    for (Eigen::Index r = 0; r < dprobs.rows(); ++r) {
      const double dot = dprobs.row(r).dot(probs.row(r));
      dprobs.row(r) = (probs.row(r).array() * (dprobs.row(r).array() - dot)).matrix();
    }
    dquery.middleCols(off, head_dim) = scale * (dprobs * c.key.middleCols(off, head_dim));
    dkey.middleCols(off, head_dim) = scale * (dprobs.transpose() * c.query.middleCols(off, head_dim));
  }
  accumulate_affine(dquery, c.normed.topRows(query_rows), g.query_weight, g.query_bias);
  accumulate_affine(dkey, c.normed, g.key_weight, g.key_bias);
  accumulate_affine(dvalue, c.normed, g.value_weight, g.value_bias);
  Matrix dnormed = dkey * p.key_weight + dvalue * p.value_weight;
  dnormed.topRows(query_rows) += dquery * p.query_weight;
  dx += layer_norm_backward(dnormed, c.norm1, p.norm1_gain, &g.norm1_gain, &g.norm1_bias);
  return dx;
}

// ---- whole-sequence pass -------------------------------------------------

struct RowView {
  std::vector<TokenId> tokens;
  std::vector<Eigen::Index> positions;
};

RowView gather_row(const ModelState& state, const Batch& batch, std::size_t row) {
  RowView view;
  for (std::size_t col = 0; col < batch.cols; ++col) {
    const auto at = row * batch.cols + col;
    if (!batch.mask[at]) continue;
    const auto id = batch.ids[at];
    if (id < 0 || static_cast<std::size_t>(id) >= state.config.vocab_size) {
      throw Error(ErrorKind::shape, "token id " + std::to_string(id) + " outside vocabulary");
    }
    view.tokens.push_back(id);
    view.positions.push_back(static_cast<Eigen::Index>(col));
  }
  if (view.tokens.empty() || view.tokens.front() != kStartId || view.positions.front() != 0) {
    throw Error(ErrorKind::shape,
                "batch row " + std::to_string(row) + " does not begin with the start token");
  }
  return view;
}

struct SequenceCache {
  std::vector<BlockCache> blocks;
  std::vector<Eigen::Index> block_rows;  // input row count per block
  NormCache final_norm;
  Matrix pooled;     // 1 x d, after final norm
  Matrix activated;  // 1 x d, tanh(pooler)
  Matrix mask;       // 1 x d dropout multiplier
  Matrix dropped;    // 1 x d
};

Matrix dropout_mask(std::size_t dim, double rate, std::uint64_t seed, std::size_t row) {
  Matrix mask = Matrix::Ones(1, static_cast<Eigen::Index>(dim));
  if (rate <= 0.0) return mask;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(row)));
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.cols(); ++i) {
    mask(0, i) = rng.uniform() < rate ? 0.0 : keep_scale;
  }
  return mask;
}

// Runs one sequence through backbone and head; returns 1 x C logits.
Matrix sequence_forward(const ModelState& state, const RowView& row, bool train_mode,
                        std::uint64_t dropout_seed, std::size_t row_index, SequenceCache* cache) {
  const auto& cfg = state.config;
  const auto& p = state.params;
  const auto seq_len = static_cast<Eigen::Index>(row.tokens.size());
  Matrix x(seq_len, static_cast<Eigen::Index>(cfg.dim));
  for (Eigen::Index t = 0; t < seq_len; ++t) {
    x.row(t) = p.token_embedding.row(row.tokens[static_cast<std::size_t>(t)]) +
               p.position_embedding.row(row.positions[static_cast<std::size_t>(t)]);
  }
  if (cache) {
    cache->blocks.resize(cfg.blocks);
    cache->block_rows.resize(cfg.blocks);
  }
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const Eigen::Index query_rows = (b + 1 == cfg.blocks) ? 1 : x.rows();
    if (cache) cache->block_rows[b] = x.rows();
    BlockCache* block_cache = (cache && !cfg.backbone_frozen) ? &cache->blocks[b] : nullptr;
    x = block_forward(p.blocks[b], cfg.heads, x, query_rows, block_cache);
  }
  NormCache final_norm;
  Matrix pooled = layer_norm(x.topRows(1), p.final_norm_gain, p.final_norm_bias,
                             cache ? &final_norm : nullptr);
  Matrix activated = affine(pooled, p.pooler_weight, p.pooler_bias).array().tanh().matrix();
  Matrix mask = train_mode ? dropout_mask(cfg.dim, cfg.dropout, dropout_seed, row_index)
                           : Matrix::Ones(1, static_cast<Eigen::Index>(cfg.dim));
  Matrix dropped = (activated.array() * mask.array()).matrix();
  Matrix logits = affine(dropped, p.classifier_weight, p.classifier_bias);
  if (cache) {
    cache->final_norm = std::move(final_norm);
    cache->pooled = std::move(pooled);
    cache->activated = std::move(activated);
    cache->mask = std::move(mask);
    cache->dropped = std::move(dropped);
  }
  return logits;
}

void sequence_backward(const ModelState& state, const RowView& row, const SequenceCache& c,
                       const Matrix& dlogits, Parameters& g) {
  const auto& cfg = state.config;
  const auto& p = state.params;
  accumulate_affine(dlogits, c.dropped, g.classifier_weight, g.classifier_bias);
  const Matrix ddropped = dlogits * p.classifier_weight;
  const Matrix dactivated = (ddropped.array() * c.mask.array()).matrix();
  const Matrix dpre = (dactivated.array() * (1.0 - c.activated.array().square())).matrix();
  accumulate_affine(dpre, c.pooled, g.pooler_weight, g.pooler_bias);
  if (cfg.backbone_frozen) return;

  const Matrix dpooled = dpre * p.pooler_weight;
  Matrix dx = layer_norm_backward(dpooled, c.final_norm, p.final_norm_gain, &g.final_norm_gain,
                                  &g.final_norm_bias);
  for (std::size_t b = cfg.blocks; b-- > 0;) {
    dx = block_backward(p.blocks[b], g.blocks[b], cfg.heads, c.blocks[b], dx, c.block_rows[b]);
  }
  for (Eigen::Index t = 0; t < dx.rows(); ++t) {
    g.token_embedding.row(row.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    g.position_embedding.row(row.positions[static_cast<std::size_t>(t)]) += dx.row(t);
  }
}

void check_batch(const ModelState& state, const Batch& batch) {
  if (batch.ids.size() != batch.rows * batch.cols || batch.mask.size() != batch.ids.size()) {
    throw Error(ErrorKind::shape, "batch ids/mask do not match rows x cols");
  }
  if (batch.cols > state.config.max_len) {
    throw Error(ErrorKind::shape, "batch width " + std::to_string(batch.cols) +
                                      " exceeds max_len " + std::to_string(state.config.max_len));
  }
}

double bce_term(double z, double t) {
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

std::string_view to_string(Partition partition) {
  return partition == Partition::backbone ? "backbone" : "head";
}

void ModelConfig::validate() const {
  if (vocab_size < static_cast<std::size_t>(kReservedCount) || dim == 0 || blocks == 0 ||
      heads == 0 || max_len == 0 || classes == 0) {
    throw Error(ErrorKind::config, "model dimensions must be positive (vocab >= 3)");
  }
  if (dim % heads != 0) throw Error(ErrorKind::config, "attention heads must divide dim");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw Error(ErrorKind::config, "dropout must lie in [0, 1)");
  }
}

Parameters Parameters::zeros_like(const Parameters& shape, bool skip_backbone) {
  Parameters out = shape;
  out.visit([&](const std::string&, Matrix& m, Partition part) {
    if (skip_backbone && part == Partition::backbone) {
      m.resize(0, 0);
    } else {
      m.setZero();
    }
  });
  return out;
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix& m, Partition) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const auto d = static_cast<Eigen::Index>(config.dim);
  const auto ff = static_cast<Eigen::Index>(config.ff_dim());
  ModelState s;
  s.config = config;
  auto& p = s.params;
  p.token_embedding.resize(static_cast<Eigen::Index>(config.vocab_size), d);
  p.position_embedding.resize(static_cast<Eigen::Index>(config.max_len), d);
  p.blocks.resize(config.blocks);
  for (auto& b : p.blocks) {
    b.norm1_gain.resize(1, d);
    b.norm1_bias.resize(1, d);
    for (Matrix* w : {&b.query_weight, &b.key_weight, &b.value_weight, &b.output_weight}) {
      w->resize(d, d);
    }
    for (Matrix* bias : {&b.query_bias, &b.key_bias, &b.value_bias, &b.output_bias}) {
      bias->resize(1, d);
    }
    b.norm2_gain.resize(1, d);
    b.norm2_bias.resize(1, d);
    b.ff1_weight.resize(ff, d);
    b.ff1_bias.resize(1, ff);
    b.ff2_weight.resize(d, ff);
    b.ff2_bias.resize(1, d);
  }
  p.final_norm_gain.resize(1, d);
  p.final_norm_bias.resize(1, d);
  p.pooler_weight.resize(d, d);
  p.pooler_bias.resize(1, d);
  p.classifier_weight.resize(static_cast<Eigen::Index>(config.classes), d);
  p.classifier_bias.resize(1, static_cast<Eigen::Index>(config.classes));

  Rng rng(derive_seed(seed, "model.init"));
  p.visit([&](const std::string& name, Matrix& m, Partition) {
    const bool is_gain = name.ends_with("_gain");
    const bool is_vector = name.ends_with("_bias") || is_gain;
    if (is_vector) {
      m.setConstant(is_gain ? 1.0 : 0.0);
      return;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  });
  return s;
}

Batch make_batch(std::span<const std::vector<TokenId>> sequences) {
  Batch batch;
  batch.rows = sequences.size();
  for (const auto& s : sequences) batch.cols = std::max(batch.cols, s.size());
  batch.ids.assign(batch.rows * batch.cols, kPadId);
  batch.mask.assign(batch.rows * batch.cols, 0);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t c = 0; c < sequences[r].size(); ++c) {
      batch.ids[r * batch.cols + c] = sequences[r][c];
      batch.mask[r * batch.cols + c] = 1;
    }
  }
  return batch;
}

Matrix forward(const ModelState& state, const Batch& batch, bool train_mode,
               std::uint64_t dropout_seed) {
  check_batch(state, batch);
  Matrix logits(static_cast<Eigen::Index>(batch.rows),
                static_cast<Eigen::Index>(state.config.classes));
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto row = gather_row(state, batch, r);
    logits.row(static_cast<Eigen::Index>(r)) =
        sequence_forward(state, row, train_mode, dropout_seed, r, nullptr);
  }
  return logits;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Prediction predict(std::span<const double> logits, double threshold) {
  Prediction out;
  out.probabilities.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = sigmoid(logits[i]);
    out.probabilities.push_back(p);
    if (p > threshold) out.predicted.push_back(i);
  }
  return out;
}

double bce_with_logits(const Matrix& logits, const Matrix& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw Error(ErrorKind::shape, "logits and targets differ in shape");
  }
  if (logits.size() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    total += bce_term(logits.data()[i], targets.data()[i]);
  }
  return total / static_cast<double>(logits.size());
}

LossAndGradients backward(const ModelState& state, const Batch& batch, const Matrix& targets,
                          bool train_mode, std::uint64_t dropout_seed) {
  check_batch(state, batch);
  const auto classes = static_cast<Eigen::Index>(state.config.classes);
  if (targets.rows() != static_cast<Eigen::Index>(batch.rows) || targets.cols() != classes) {
    throw Error(ErrorKind::shape, "targets must be batch x classes");
  }
  LossAndGradients out;
  out.gradients = Parameters::zeros_like(state.params, state.config.backbone_frozen);
  const double scale = 1.0 / static_cast<double>(targets.size());
  double total = 0.0;
  SequenceCache cache;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto row = gather_row(state, batch, r);
    const Matrix logits = sequence_forward(state, row, train_mode, dropout_seed, r, &cache);
    Matrix dlogits(1, classes);
    for (Eigen::Index c = 0; c < classes; ++c) {
      const double z = logits(0, c);
      const double t = targets(static_cast<Eigen::Index>(r), c);
      total += bce_term(z, t);
      dlogits(0, c) = (sigmoid(z) - t) * scale;
    }
    sequence_backward(state, row, cache, dlogits, out.gradients);
  }
  out.loss = total * scale;
  return out;
}

// ---- checkpoints ---------------------------------------------------------

namespace {

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["dim"] = c.dim;
  j["blocks"] = c.blocks;
  j["heads"] = c.heads;
  j["max_len"] = c.max_len;
  j["classes"] = c.classes;
  j["dropout"] = c.dropout;
  j["backbone_frozen"] = c.backbone_frozen;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.backbone_frozen = j.at("backbone_frozen").get<bool>();
  return c;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) throw Error(ErrorKind::parse, "truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelState& state) {
  nlohmann::ordered_json header;
  header["format"] = "vetcode-checkpoint";
  header["version"] = 1;
  header["config"] = config_to_json(state.config);
  header["tensors"] = nlohmann::ordered_json::array();
  state.params.visit([&](const std::string& name, const Matrix& m, Partition part) {
    header["tensors"].push_back({{"name", name},
                                 {"rows", m.rows()},
                                 {"cols", m.cols()},
                                 {"partition", std::string(to_string(part))}});
  });
  const auto text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  state.params.visit([&](const std::string&, const Matrix& m, Partition) {
    for (Eigen::Index i = 0; i < m.size(); ++i) write_u64(out, std::bit_cast<std::uint64_t>(m.data()[i]));
  });
  if (!out) throw Error(ErrorKind::io, "failed writing checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw Error(ErrorKind::parse, path.string() + " is not a checkpoint");
  }
  const auto header_len = read_u64(in);
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw Error(ErrorKind::parse, "truncated checkpoint header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("bad checkpoint header: ") + e.what());
  }
  ModelState state = init_model(config_from_json(header.at("config")), 0);
  const auto& tensors = header.at("tensors");
  std::size_t index = 0;
  state.params.visit([&](const std::string& name, Matrix& m, Partition part) {
    if (index >= tensors.size()) throw Error(ErrorKind::parse, "checkpoint lacks tensor " + name);
    const auto& t = tensors[index++];
    if (t.at("name").get<std::string>() != name || t.at("rows").get<Eigen::Index>() != m.rows() ||
        t.at("cols").get<Eigen::Index>() != m.cols() ||
        t.at("partition").get<std::string>() != to_string(part)) {
      throw Error(ErrorKind::parse, "checkpoint tensor table mismatch at " + name);
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(read_u64(in));
  });
  if (index != tensors.size()) throw Error(ErrorKind::parse, "checkpoint has extra tensors");
  return state;
}

}  // namespace vetcode
