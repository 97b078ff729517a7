#include "vetcode/pipeline.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "vetcode/error.hpp"
#include "vetcode/rng.hpp"

namespace vetcode {

std::vector<std::size_t> split_indices(const Corpus& corpus, const SplitPlan& plan, SplitTag tag) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < corpus.size(); ++r) {
    const auto it = plan.assignment.find(corpus.at(r).record_id);
    if (it != plan.assignment.end() && it->second == tag) out.push_back(r);
  }
  return out;
}

EncodedSet encode_records(const Corpus& corpus, std::span<const std::size_t> records,
                          const Vocabulary& vocab, std::span<const Section> fields) {
  EncodedSet set;
  set.inputs.reserve(records.size());
  set.targets.reserve(records.size());
  for (const auto r : records) {
    const auto& record = corpus.at(r);
    set.inputs.push_back(encode(vocab, build_input(record, fields)).ids);
    set.targets.push_back(corpus.code_indices(record));
  }
  return set;
}

TestEvaluation evaluate_records(const ModelState& state, const Vocabulary& vocab,
                                const Corpus& corpus, std::span<const std::size_t> records,
                                std::span<const Section> fields, double threshold) {
  const auto encoded = encode_records(corpus, records, vocab, fields);
  TestEvaluation out;
  for (const auto r : records) {
    out.record_ids.push_back(corpus.at(r).record_id);
    out.targets.push_back(corpus.at(r).codes);
  }
  out.predictions = predict_code_sets(state, encoded.inputs, corpus.inventory(), threshold);
  out.report = evaluate(out.targets, out.predictions, corpus.inventory());
  return out;
}

PipelineResult run_pipeline(const Corpus& corpus, const SplitPlan& plan,
                            const PipelineConfig& config, std::uint64_t seed,
                            const std::set<std::string>* train_subset,
                            const EpochCallback& on_epoch) {
  const auto& fields = config.input.fields;
  if (fields.empty()) throw Error(ErrorKind::config, "no input fields given");
  auto train_records = split_indices(corpus, plan, SplitTag::train);
  if (train_subset) {
    std::erase_if(train_records,
                  [&](std::size_t r) { return !train_subset->contains(corpus.at(r).record_id); });
  }
  const auto validation_records = split_indices(corpus, plan, SplitTag::validation);
  const auto test_records = split_indices(corpus, plan, SplitTag::test);
  if (train_records.empty()) throw Error(ErrorKind::invalid_argument, "empty train split");

  PipelineResult result;
  std::vector<std::string> train_texts;
  for (const auto r : train_records) train_texts.push_back(build_input(corpus.at(r), fields));
  result.vocab =
      build_vocab(train_texts, config.input.min_count, config.input.max_vocab, config.input.max_len);

  std::vector<std::string> all_texts;
  for (std::size_t r = 0; r < corpus.size(); ++r) {
    if (plan.assignment.contains(corpus.at(r).record_id)) {
      all_texts.push_back(build_input(corpus.at(r), fields));
    }
  }
  result.input_stats = corpus_stats(result.vocab, all_texts);

  ModelConfig model_config = config.model;
  model_config.vocab_size = result.vocab.size();
  model_config.classes = corpus.num_classes();
  model_config.max_len = config.input.max_len;
  auto state = init_model(model_config, derive_seed(seed, "model"));

  TrainConfig train_config = config.train;
  train_config.seed = derive_seed(seed, "trainer");
  const auto train_set = encode_records(corpus, train_records, result.vocab, fields);
  const auto validation_set = encode_records(corpus, validation_records, result.vocab, fields);
  result.trained = train(std::move(state), train_set, validation_set, corpus.inventory(),
                         train_config, on_epoch);
  result.test = evaluate_records(result.trained.model, result.vocab, corpus, test_records, fields,
                                 train_config.threshold);
  return result;
}

std::vector<EvalReport> run_replicates(const Corpus& corpus, const SplitPlan& plan,
                                       const PipelineConfig& config,
                                       std::span<const std::uint64_t> seeds) {
  std::vector<EvalReport> reports;
  for (const auto seed : seeds) reports.push_back(run_pipeline(corpus, plan, config, seed).test.report);
  return reports;
}

ReplicateSummary summarize_replicates(std::span<const EvalReport> reports, double level) {
  auto interval = [&](double EvalReport::*field) {
    std::vector<double> values;
    for (const auto& r : reports) values.push_back(r.*field);
    return confidence_interval(values, level);
  };
  return {interval(&EvalReport::precision), interval(&EvalReport::recall),
          interval(&EvalReport::f1), interval(&EvalReport::exact_match)};
}

void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle) {
  if (bundle.inventory.size() != bundle.model.config.classes) {
    throw Error(ErrorKind::shape, "inventory size differs from the model's class count");
  }
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "model.ckpt", bundle.model);
  save_vocab(dir / "vocab.tsv", bundle.vocab);
  {
    std::ofstream out(dir / "inventory.txt", std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + (dir / "inventory.txt").string());
    for (const auto& code : bundle.inventory) out << code << '\n';
  }
  nlohmann::ordered_json j;
  std::vector<std::string> fields;
  for (const auto f : bundle.fields) fields.emplace_back(to_string(f));
  j["fields"] = fields;
  j["threshold"] = bundle.threshold;
  std::ofstream out(dir / "bundle.json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + (dir / "bundle.json").string());
  out << j.dump(2) << '\n';
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
  ModelBundle bundle;
  bundle.model = load_checkpoint(dir / "model.ckpt");
  bundle.vocab = load_vocab(dir / "vocab.tsv");
  {
    std::ifstream in(dir / "inventory.txt", std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + (dir / "inventory.txt").string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (!is_code_identifier(line)) {
        throw Error(ErrorKind::parse, "invalid code in inventory: '" + line + "'");
      }
      bundle.inventory.push_back(line);
    }
  }
  std::ifstream in(dir / "bundle.json", std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + (dir / "bundle.json").string());
  try {
    const auto j = nlohmann::json::parse(in);
    bundle.fields = parse_sections(j.at("fields").get<std::vector<std::string>>());
    bundle.threshold = j.at("threshold").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, "bundle.json: " + std::string(e.what()));
  }
  if (bundle.inventory.size() != bundle.model.config.classes) {
    throw Error(ErrorKind::shape, "inventory size differs from the model's class count");
  }
  if (bundle.vocab.size() != bundle.model.config.vocab_size) {
    throw Error(ErrorKind::shape, "vocabulary size differs from the model's embedding table");
  }
  return bundle;
}

}  // namespace vetcode
