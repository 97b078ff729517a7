#include "vetcode/cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include "vetcode/analysis.hpp"
#include "vetcode/config.hpp"
#include "vetcode/error.hpp"
#include "vetcode/pipeline.hpp"
#include "vetcode/rng.hpp"
#include "vetcode/service.hpp"
#include "vetcode/terminology.hpp"

namespace vetcode::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

// Flag values that override the config file when given.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  std::optional<std::size_t> records, codes;
  std::optional<double> zipf;
  std::vector<double> split_fractions;
  std::vector<std::string> fields;
  std::optional<std::size_t> max_len, min_count, dim, epochs, patience, batch_size, warmup, replicates;
  std::optional<double> lr, threshold;
  bool frozen = false;
  std::vector<double> volume_fractions;
  std::optional<std::string> host;
  std::optional<int> port;
  std::optional<std::string> log, queue;

  std::string eval_split = "test";
  std::string model_dir;
  std::string study;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.records) c.generator.records = *o.records;
  if (o.codes) c.generator.codes = *o.codes;
  if (o.zipf) c.generator.zipf_exponent = *o.zipf;
  if (!o.split_fractions.empty()) {
    c.split.fractions = {o.split_fractions[0], o.split_fractions[1], o.split_fractions[2]};
  }
  if (!o.fields.empty()) {
    try {
      c.tokenizer.fields = parse_sections(o.fields);
    } catch (const Error& e) {
      throw Error(ErrorKind::config, std::string("--fields: ") + e.what());
    }
  }
  if (o.max_len) c.tokenizer.max_len = *o.max_len;
  if (o.min_count) c.tokenizer.min_count = *o.min_count;
  if (o.dim) c.model.dim = *o.dim;
  if (o.frozen) c.model.backbone_frozen = true;
  if (o.epochs) c.train.max_epochs = *o.epochs;
  if (o.patience) c.train.patience = *o.patience;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.warmup) c.train.warmup_steps = *o.warmup;
  if (o.lr) c.train.peak_learning_rate = *o.lr;
  if (o.threshold) c.train.threshold = *o.threshold;
  if (o.replicates) c.replicates = *o.replicates;
  if (!o.volume_fractions.empty()) c.analysis.volume_fractions = o.volume_fractions;
  if (o.host) c.service.host = *o.host;
  if (o.port) c.service.port = *o.port;
  if (o.log) c.service.log = *o.log;
  if (o.queue) c.service.queue = *o.queue;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << text;
}

// Resolved config for this subcommand, plus the common provenance fields.
ordered_json begin_run(const RunConfig& c, const std::string& command) {
  fs::create_directories(c.out);
  write_text(c.out / ("config." + command + ".yaml"), dump_run_config(c));
  ordered_json p;
  p["command"] = command;
  p["seed"] = c.seed;
  p["config_hash"] = config_hash(c);
  return p;
}

void write_sidecar(const fs::path& output, const ordered_json& provenance) {
  write_text(output.string() + ".json", provenance.dump(2) + "\n");
}

std::shared_ptr<const ConceptGraph> load_graph(const RunConfig& c, bool required) {
  const auto dir = c.terminology_dir();
  auto paths = TerminologyPaths::in_directory(dir);
  if (!fs::exists(paths.concepts)) {
    if (required) throw Error(ErrorKind::not_found, "no terminology at " + dir.string());
    return nullptr;
  }
  if (!fs::exists(paths.mapping)) paths.mapping.clear();
  if (!fs::exists(paths.categories)) paths.categories.clear();
  return std::make_shared<const ConceptGraph>(load_terminology(paths));
}

Corpus load_inputs(const RunConfig& c) {
  auto corpus = load_corpus(c.corpus_path());
  if (c.corpus.migrate) {
    if (const auto graph = load_graph(c, false)) corpus = migrate_corpus(corpus, *graph);
  }
  return corpus;
}

SplitPlan load_plan(const RunConfig& c, const Corpus& corpus) {
  auto plan = load_split_plan(c.plan_path());
  for (const auto& r : corpus.records()) {
    if (!plan.assignment.contains(r.record_id)) {
      throw Error(ErrorKind::validation, "record '" + r.record_id + "' is missing from the split plan");
    }
  }
  return plan;
}

void print_epoch(std::ostream& err, const EpochRecord& e) {
  fmt::print(err, "epoch {:3d}  loss {:.5f}  val_f1 {:6.2f}  lr {:.3g}  {:.1f}s\n", e.epoch,
             e.train_loss, e.validation_f1, e.learning_rate, e.seconds);
}

ordered_json metrics_json(const EvalReport& r) {
  ordered_json j;
  j["precision"] = round2(r.precision);
  j["recall"] = round2(r.recall);
  j["f1"] = round2(r.f1);
  j["exact_match"] = round2(r.exact_match);
  return j;
}

ordered_json interval_json(const ConfidenceInterval& ci) {
  ordered_json j;
  j["mean"] = ci.mean;
  j["half_width"] = ci.half_width;
  j["runs"] = ci.runs;
  return j;
}

void write_predictions(const fs::path& path, const TestEvaluation& t) {
  std::string text;
  for (std::size_t i = 0; i < t.record_ids.size(); ++i) {
    ordered_json j;
    j["record_id"] = t.record_ids[i];
    j["targets"] = t.targets[i];
    j["predictions"] = t.predictions[i];
    text += j.dump() + "\n";
  }
  write_text(path, text);
}

int gen_synthetic(const RunConfig& c, std::ostream& out) {
  auto prov = begin_run(c, "gen-synthetic");
  const auto synthetic = generate_synthetic(c.generator, derive_seed(c.seed, "generator"));
  const auto graph = generate_synthetic_terminology(synthetic, derive_seed(c.seed, "terminology"));
  export_corpus(c.corpus_path(), synthetic.corpus);
  const auto dir = c.terminology_dir();
  fs::create_directories(dir);
  write_terminology(graph, TerminologyPaths::in_directory(dir));
  prov["records"] = synthetic.corpus.size();
  prov["codes"] = synthetic.corpus.num_classes();
  prov["corpus"] = corpus_fingerprint(synthetic.corpus);
  write_sidecar(c.corpus_path(), prov);
  fmt::print(out, "wrote {} records with {} codes to {}\n", synthetic.corpus.size(),
             synthetic.corpus.num_classes(), c.corpus_path().string());
  return 0;
}

int split(const RunConfig& c, std::ostream& out) {
  auto prov = begin_run(c, "split");
  const auto corpus = load_inputs(c);
  const auto seed = derive_seed(c.seed, "split");
  const auto plan = stratified_split(corpus, c.split.fractions, seed);
  save_split_plan(c.plan_path(), plan);
  prov["split_seed"] = seed;
  prov["corpus"] = corpus_fingerprint(corpus);
  for (const auto tag : {SplitTag::train, SplitTag::validation, SplitTag::test}) {
    prov["counts"][std::string(to_string(tag))] = plan.count(tag);
  }
  write_sidecar(c.plan_path(), prov);
  fmt::print(out, "train {}  validation {}  test {}\n", plan.count(SplitTag::train),
             plan.count(SplitTag::validation), plan.count(SplitTag::test));
  return 0;
}

int build_vocab_cmd(const RunConfig& c, std::ostream& out) {
  auto prov = begin_run(c, "build-vocab");
  const auto corpus = load_inputs(c);
  const auto plan = load_plan(c, corpus);
  std::vector<std::string> texts;
  for (const auto r : split_indices(corpus, plan, SplitTag::train)) {
    texts.push_back(build_input(corpus.at(r), c.tokenizer.fields));
  }
  const auto vocab =
      build_vocab(texts, c.tokenizer.min_count, c.tokenizer.max_vocab, c.tokenizer.max_len);
  const auto path = c.out / "vocab.tsv";
  save_vocab(path, vocab);
  const auto stats = corpus_stats(vocab, texts);
  prov["size"] = vocab.size();
  prov["fields"] = fields_label(c.tokenizer.fields);
  prov["train_mean_tokens"] = stats.mean_tokens;
  prov["train_truncation_rate"] = stats.truncation_rate;
  write_sidecar(path, prov);
  fmt::print(out, "vocabulary of {} tokens written to {}\n", vocab.size(), path.string());
  return 0;
}

int train_cmd(const RunConfig& c, std::ostream& out, std::ostream& err) {
  auto prov = begin_run(c, "train");
  const auto corpus = load_inputs(c);
  const auto plan = load_plan(c, corpus);
  const auto pipeline = c.pipeline();
  const auto result =
      run_pipeline(corpus, plan, pipeline, c.seed, nullptr,
                   [&](const EpochRecord& e) { print_epoch(err, e); });

  ModelBundle bundle;
  bundle.model = result.trained.model;
  bundle.vocab = result.vocab;
  bundle.inventory = corpus.inventory();
  bundle.fields = c.tokenizer.fields;
  bundle.threshold = c.train.threshold;
  save_bundle(c.model_dir(), bundle);

  {
    std::ostringstream log;
    write_train_log_csv(log, result.trained.log);
    write_text(c.out / "train_log.csv", log.str());
  }
  save_report(c.out / "test_report.json", c.out / "test_classes.csv", result.test.report);
  write_predictions(c.out / "test_predictions.jsonl", result.test);

  ordered_json summary = prov;
  summary["corpus"] = corpus_fingerprint(corpus);
  summary["vocab_size"] = result.vocab.size();
  summary["classes"] = corpus.num_classes();
  summary["parameters"] = result.trained.model.params.count();
  summary["epochs"] = result.trained.log.epochs.size();
  summary["best_epoch"] = result.trained.log.best_epoch;
  summary["global_steps"] = result.trained.log.global_steps;
  summary["stop_reason"] = std::string(to_string(result.trained.log.stop_reason));
  summary["mean_tokens"] = result.input_stats.mean_tokens;
  summary["truncation_rate"] = result.input_stats.truncation_rate;
  summary["test"] = metrics_json(result.test.report);

  if (c.replicates > 1) {
    std::vector<EvalReport> reports{result.test.report};
    std::vector<std::uint64_t> seeds{c.seed};
    std::vector<std::uint64_t> extra;
    for (std::size_t i = 1; i < c.replicates; ++i) extra.push_back(derive_seed(c.seed, i));
    for (const auto& r : run_replicates(corpus, plan, pipeline, extra)) reports.push_back(r);
    seeds.insert(seeds.end(), extra.begin(), extra.end());

    AnalysisTable table({"replicate", "seed", "precision", "recall", "f1", "exact_match"});
    for (std::size_t i = 0; i < reports.size(); ++i) {
      table.add_row({static_cast<std::int64_t>(i), std::to_string(seeds[i]), reports[i].precision,
                     reports[i].recall, reports[i].f1, reports[i].exact_match});
    }
    table.provenance = prov;
    save_table(c.out / "replicates.csv", table);
    const auto s = summarize_replicates(reports);
    summary["replicates"]["precision"] = interval_json(s.precision);
    summary["replicates"]["recall"] = interval_json(s.recall);
    summary["replicates"]["f1"] = interval_json(s.f1);
    summary["replicates"]["exact_match"] = interval_json(s.exact_match);
  }
  write_text(c.out / "train_summary.json", summary.dump(2) + "\n");

  const auto& r = result.test.report;
  fmt::print(out, "test  P {}  R {}  F1 {}  EM {}\n", format_percent(r.precision),
             format_percent(r.recall), format_percent(r.f1), format_percent(r.exact_match));
  return 0;
}

// The bundle's own threshold applies unless one is given.
TestEvaluation evaluate_bundle(const fs::path& model_dir, SplitTag tag, const Corpus& corpus,
                               const SplitPlan& plan, std::optional<double> threshold) {
  const auto bundle = load_bundle(model_dir);
  if (bundle.inventory != corpus.inventory()) {
    throw Error(ErrorKind::validation, "model inventory differs from the corpus inventory");
  }
  const auto records = split_indices(corpus, plan, tag);
  return evaluate_records(bundle.model, bundle.vocab, corpus, records, bundle.fields,
                          threshold.value_or(bundle.threshold));
}

int evaluate_cmd(const RunConfig& c, const Overrides& o, std::ostream& out) {
  auto prov = begin_run(c, "evaluate");
  const auto corpus = load_inputs(c);
  const auto plan = load_plan(c, corpus);
  const auto tag = parse_split_tag(o.eval_split);
  const fs::path model_dir = o.model_dir.empty() ? c.model_dir() : fs::path(o.model_dir);
  const auto t = evaluate_bundle(model_dir, tag, corpus, plan, o.threshold);
  const auto stem = c.out / ("eval_" + o.eval_split);
  save_report(stem.string() + "_report.json", stem.string() + "_classes.csv", t.report);
  write_predictions(stem.string() + "_predictions.jsonl", t);
  prov["split"] = o.eval_split;
  prov["model"] = model_dir.string();
  prov["corpus"] = corpus_fingerprint(corpus);
  write_sidecar(stem.string() + "_classes.csv", prov);
  fmt::print(out, "{}  P {}  R {}  F1 {}  EM {}\n", o.eval_split, format_percent(t.report.precision),
             format_percent(t.report.recall), format_percent(t.report.f1),
             format_percent(t.report.exact_match));
  return 0;
}

int analyze_cmd(const RunConfig& c, const std::string& study, std::optional<double> threshold,
                std::ostream& out, std::ostream& err) {
  auto prov = begin_run(c, "analyze-" + study);
  const auto corpus = load_inputs(c);
  const auto plan = load_plan(c, corpus);
  const auto dir = c.out / "analysis";
  fs::create_directories(dir);
  const auto path = dir / (study + ".csv");
  const auto pipeline = c.pipeline();

  auto finish = [&](AnalysisTable table) {
    for (const auto& [k, v] : prov.items()) table.provenance[k] = v;
    save_table(path, table);
    fmt::print(out, "{} rows written to {}\n", table.rows().size(), path.string());
    return 0;
  };
  auto checkpoint = [&](const AnalysisTable& partial) {
    AnalysisTable copy = partial;
    for (const auto& [k, v] : prov.items()) copy.provenance[k] = v;
    copy.provenance["partial"] = true;
    save_table(path, copy);
    fmt::print(err, "{}: {} rows done\n", study, partial.rows().size());
  };

  if (study == "frequency" || study == "depth" || study == "categories") {
    const auto t = evaluate_bundle(c.model_dir(), SplitTag::test, corpus, plan, threshold);
    prov["model"] = c.model_dir().string();
    if (study == "frequency") {
      auto s = frequency_study(corpus, t.report);
      if (s.r) fmt::print(out, "pearson r {:.4f}\n", *s.r);
      return finish(std::move(s.table));
    }
    const auto graph = load_graph(c, true);
    if (study == "depth") {
      auto s = depth_study(*graph, t.report);
      fmt::print(out, "{} codes placed, {} excluded\n", s.represented, s.excluded);
      return finish(std::move(s.table));
    }
    return finish(category_study(*graph, t.report));
  }
  if (study == "volume") {
    return finish(volume_sweep(corpus, plan, c.analysis.volume_fractions, pipeline, c.seed,
                               checkpoint));
  }
  if (study == "fields") {
    return finish(field_study(corpus, plan, c.analysis.field_permutations, pipeline, c.seed,
                              checkpoint));
  }
  if (study == "frozen") return finish(frozen_comparison(corpus, plan, pipeline, c.seed, checkpoint));
  throw Error(ErrorKind::invalid_argument, "unknown study '" + study + "'");
}

int serve_cmd(const RunConfig& c, std::optional<double> threshold, std::ostream& out) {
  begin_run(c, "serve");
  auto bundle = load_bundle(c.model_dir());
  const auto graph = load_graph(c, false);
  std::vector<ClinicalRecord> queue;
  if (!c.service.queue.empty()) {
    queue = load_corpus(c.service.queue).records();
  } else {
    const auto corpus = load_inputs(c);
    const auto plan = load_plan(c, corpus);
    for (const auto r : split_indices(corpus, plan, SplitTag::test)) queue.push_back(corpus.at(r));
  }
  ServiceOptions options;
  options.default_top_k = c.service.top_k;
  options.default_threshold = threshold;
  auto engine = std::make_unique<SuggestEngine>(std::move(bundle), graph);
  Service service(std::move(engine), graph, std::move(queue), c.log_path(), options);
  fmt::print(out, "listening on http://{}:{}\n", c.service.host, c.service.port);
  out.flush();
  serve_http(service, c.service.host, c.service.port);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Clinical diagnosis-code suggestion toolkit", "vetcode"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "YAML run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Global seed");
  app.add_option("--out", o.out, "Output directory");

  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic corpus and terminology");
  gen->add_option("--records", o.records, "Number of records");
  gen->add_option("--codes", o.codes, "Size of the code inventory");
  gen->add_option("--zipf", o.zipf, "Zipf exponent of code frequencies");

  auto* sp = app.add_subcommand("split", "Stratified train/validation/test split");
  sp->add_option("--fractions", o.split_fractions, "train validation test")->expected(3);

  auto* bv = app.add_subcommand("build-vocab", "Build the vocabulary on the train split");
  auto* tr = app.add_subcommand("train", "Train, then score the test split");
  auto* ev = app.add_subcommand("evaluate", "Score a saved model on one split");
  auto* an = app.add_subcommand("analyze", "Run one performance analysis");
  auto* sv = app.add_subcommand("serve", "Serve the coder-assist HTTP API");

  for (auto* sub : {bv, tr, an}) {
    sub->add_option("--fields", o.fields, "Input sections in order")->delimiter(',');
    sub->add_option("--max-len", o.max_len, "Maximum sequence length");
    sub->add_option("--min-count", o.min_count, "Minimum token count");
  }
  for (auto* sub : {tr, an}) {
    sub->add_option("--dim", o.dim, "Model width");
    sub->add_flag("--frozen", o.frozen, "Train the classification head only");
    sub->add_option("--epochs", o.epochs, "Maximum epochs");
    sub->add_option("--patience", o.patience, "Epochs without improvement before stopping");
    sub->add_option("--batch-size", o.batch_size, "Batch size");
    sub->add_option("--lr", o.lr, "Peak learning rate");
    sub->add_option("--warmup", o.warmup, "Linear warmup steps");
  }
  for (auto* sub : {tr, ev, an, sv}) {
    sub->add_option("--threshold", o.threshold, "Decision threshold");
  }
  tr->add_option("--replicates", o.replicates, "Independent runs for confidence intervals");
  ev->add_option("--split", o.eval_split, "train, validation or test")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  ev->add_option("--model", o.model_dir, "Model bundle directory (default <out>/model)");
  an->add_option("study", o.study, "Analysis to run")
      ->required()
      ->check(CLI::IsMember({"frequency", "depth", "volume", "fields", "frozen", "categories"}));
  an->add_option("--volume-fractions", o.volume_fractions, "Training fractions for the sweep")
      ->delimiter(',');
  sv->add_option("--host", o.host, "Bind address");
  sv->add_option("--port", o.port, "Port");
  sv->add_option("--log", o.log, "Decision event log");
  sv->add_option("--queue", o.queue, "JSONL corpus of records to review");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string message = e.what();
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i].starts_with("-")) {
        if (args[i].find('=') == std::string::npos) ++i;  // global options all take a value
        continue;
      }
      const auto subs = app.get_subcommands([&](const CLI::App* sub) { return sub->get_name() == args[i]; });
      if (subs.empty()) message = "unknown subcommand '" + args[i] + "'";
      break;
    }
    fmt::print(err, "error: usage: {}\n", message);
    err << app.help();
    return 2;
  }

  try {
    const auto config = resolve(o);
    if (gen->parsed()) return gen_synthetic(config, out);
    if (sp->parsed()) return split(config, out);
    if (bv->parsed()) return build_vocab_cmd(config, out);
    if (tr->parsed()) return train_cmd(config, out, err);
    if (ev->parsed()) return evaluate_cmd(config, o, out);
    if (an->parsed()) return analyze_cmd(config, o.study, o.threshold, out, err);
    return serve_cmd(config, o.threshold, out);
  } catch (const Error& e) {
    fmt::print(err, "error: {}: {}\n", to_string(e.kind()), e.what());
  } catch (const fs::filesystem_error& e) {
    fmt::print(err, "error: io: {}\n", e.what());
  } catch (const std::exception& e) {
    fmt::print(err, "error: internal: {}\n", e.what());
  }
  return 1;
}

}  // namespace vetcode::cli
