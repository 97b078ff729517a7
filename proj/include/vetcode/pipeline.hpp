#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vetcode/corpus.hpp"
#include "vetcode/evaluation.hpp"
#include "vetcode/model.hpp"
#include "vetcode/splitter.hpp"
#include "vetcode/tokenizer.hpp"
#include "vetcode/trainer.hpp"

namespace vetcode {

struct InputConfig {
  std::vector<Section> fields = {Section::diagnosis, Section::assessment};
  std::size_t min_count = 1;
  std::size_t max_vocab = 30000;
  std::size_t max_len = kDefaultMaxLen;
};

// vocab_size, classes and max_len of `model` are filled in from the data.
struct PipelineConfig {
  InputConfig input;
  ModelConfig model;
  TrainConfig train;
};

std::vector<std::size_t> split_indices(const Corpus& corpus, const SplitPlan& plan, SplitTag tag);

EncodedSet encode_records(const Corpus& corpus, std::span<const std::size_t> records,
                          const Vocabulary& vocab, std::span<const Section> fields);

struct TestEvaluation {
  std::vector<std::string> record_ids;
  std::vector<CodeSet> targets;
  std::vector<CodeSet> predictions;
  EvalReport report;
};

// Predicts and scores the given records with a trained model.
TestEvaluation evaluate_records(const ModelState& state, const Vocabulary& vocab,
                                const Corpus& corpus, std::span<const std::size_t> records,
                                std::span<const Section> fields, double threshold);

struct PipelineResult {
  Vocabulary vocab;
  TrainResult trained;
  CorpusStats input_stats;  // over every record of the plan
  TestEvaluation test;
};

// Builds the vocabulary on the training records, trains a fresh model and
// scores it on the plan's test split. The run seed fans out to the model
// initialization and the trainer. `train_subset`, when given, restricts the
// training records (validation and test are untouched).
PipelineResult run_pipeline(const Corpus& corpus, const SplitPlan& plan,
                            const PipelineConfig& config, std::uint64_t seed,
                            const std::set<std::string>* train_subset = nullptr,
                            const EpochCallback& on_epoch = {});

// Independent train + evaluate runs that differ only by seed.
std::vector<EvalReport> run_replicates(const Corpus& corpus, const SplitPlan& plan,
                                       const PipelineConfig& config,
                                       std::span<const std::uint64_t> seeds);

struct ReplicateSummary {
  ConfidenceInterval precision;
  ConfidenceInterval recall;
  ConfidenceInterval f1;
  ConfidenceInterval exact_match;
};

ReplicateSummary summarize_replicates(std::span<const EvalReport> reports, double level = 0.95);

// Everything inference needs. Stored in one directory as model.ckpt,
// vocab.tsv, inventory.txt (one code per line, class index order) and
// bundle.json (input fields and decision threshold).
struct ModelBundle {
  ModelState model;
  Vocabulary vocab;
  std::vector<std::string> inventory;
  std::vector<Section> fields;
  double threshold = 0.5;
};

void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& dir);

}  // namespace vetcode
