#include <cmath>
#include <sstream>

#include <doctest.h>

#include "vetcode/analysis.hpp"
#include "vetcode/error.hpp"
#include "vetcode/rng.hpp"

using namespace vetcode;

namespace {

const std::string kRoot(kClinicalFindingCode);

ClassMetrics metric(std::string code, std::size_t support, double f1, double precision = 0,
                    double recall = 0) {
  ClassMetrics m;
  m.code = std::move(code);
  m.support = support;
  m.f1 = f1;
  m.precision = precision;
  m.recall = recall;
  return m;
}

double number(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return *d;
  return static_cast<double>(std::get<std::int64_t>(c));
}

PipelineConfig tiny_pipeline() {
  PipelineConfig c;
  c.input.max_len = 32;
  c.model.dim = 16;
  c.model.blocks = 1;
  c.model.heads = 2;
  c.train.peak_learning_rate = 3e-3;
  c.train.warmup_steps = 5;
  c.train.max_epochs = 2;
  c.train.patience = 1;
  return c;
}

}  // namespace

TEST_CASE("pearson") {
  const std::vector<double> x = {1, 2, 3, 4};
  const std::vector<double> y = {2, 4, 6, 8};
  const std::vector<double> z = {8, 6, 4, 2};
  CHECK(*pearson(x, y) == doctest::Approx(1.0));
  CHECK(*pearson(x, z) == doctest::Approx(-1.0));
  const std::vector<double> flat = {0.5, 0.5, 0.5, 0.5};
  CHECK_FALSE(pearson(x, flat).has_value());
  CHECK_FALSE(pearson(std::span(x).first(1), std::span(y).first(1)).has_value());
  // hand computation: x = 1,2,3; y = 1,3,2 -> r = 0.5
  const std::vector<double> a = {1, 2, 3};
  const std::vector<double> b = {1, 3, 2};
  CHECK(*pearson(a, b) == doctest::Approx(0.5));
}

TEST_CASE("table csv and provenance") {
  AnalysisTable t({"name", "value", "count"});
  t.add_row({std::string("a,b"), 0.5, std::int64_t{3}});
  t.add_row({std::string("c"), std::monostate{}, std::int64_t{0}});
  std::ostringstream out;
  write_csv(out, t);
  CHECK(out.str() == "name,value,count\n\"a,b\",0.500000,3\nc,NA,0\n");
  CHECK_THROWS_AS(t.add_row({1.0}), Error);
  CHECK_THROWS_AS(AnalysisTable({"x", "x"}), Error);
}

TEST_CASE("frequency study") {
  std::vector<ClinicalRecord> records;
  auto add = [&](const std::string& id, CodeSet codes) {
    ClinicalRecord r;
    r.record_id = id;
    r.codes = std::move(codes);
    records.push_back(r);
  };
  add("1", {"10", "11"});
  add("2", {"10"});
  add("3", {"10", "12"});
  add("4", {"11"});
  const Corpus corpus(records);
  EvalReport report;
  report.classes = {metric("10", 2, 0.9), metric("11", 1, 0.5), metric("12", 0, 0.0)};
  const auto study = frequency_study(corpus, report);
  REQUIRE(study.table.rows().size() == 2);
  CHECK(number(study.table.at(0, "ln_frequency")) == doctest::Approx(std::log(3.0)));
  CHECK(number(study.table.at(1, "ln_frequency")) == doctest::Approx(std::log(2.0)));
  CHECK(*study.r == doctest::Approx(1.0));

  report.classes = {metric("10", 2, 0.7), metric("11", 1, 0.7)};
  CHECK_FALSE(frequency_study(corpus, report).r.has_value());
}

TEST_CASE("depth study") {
  ConceptGraph graph({{kRoot, "root", true},
                      {"1", "a", true},
                      {"2", "b", true},
                      {"3", "c", true},
                      {"4", "d", false}},
                     {{"1", kRoot}, {"2", kRoot}, {"3", "1"}}, kRoot);
  EvalReport report;
  report.classes = {metric("1", 3, 0.4), metric("2", 1, 0.6), metric("3", 2, 0.9),
                    metric("4", 1, 0.2), metric("77", 5, 0.1), metric(kRoot, 0, 0.0)};
  const auto study = depth_study(graph, report);
  REQUIRE(study.table.rows().size() == 2);
  CHECK(number(study.table.at(0, "depth")) == 1);
  CHECK(number(study.table.at(0, "mean_class_f1")) == doctest::Approx(0.5));
  CHECK(number(study.table.at(0, "codes")) == 2);
  const double t = student_t_quantile(0.975, 1);
  CHECK(number(study.table.at(0, "ci_half_width")) ==
        doctest::Approx(t * std::sqrt(0.02) / std::sqrt(2.0)));
  CHECK(std::holds_alternative<std::monostate>(study.table.at(1, "ci_half_width")));
  CHECK(study.excluded == 2);
  // represented + excluded = classes with test support
  CHECK(study.represented + study.excluded == 5);
}

TEST_CASE("category study partitions the weighted metrics") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Concept> concepts{{kRoot, "root", true}};
    std::vector<ConceptGraph::Edge> edges;
    std::map<std::string, std::string> categories;
    const int groups = 4;
    for (int g = 0; g < groups; ++g) {
      const auto code = std::to_string(100 + g);
      concepts.push_back({code, "group", true});
      edges.emplace_back(code, kRoot);
      if (g < 3) categories[code] = std::string(kCategoryPriority[rng.below(kCategoryPriority.size())]);
    }
    EvalReport report;
    double total = 0, weighted = 0;
    std::vector<std::string> inventory;
    for (int c = 0; c < 12; ++c) {
      const auto code = std::to_string(200 + c);
      concepts.push_back({code, "leaf", true});
      edges.emplace_back(code, std::to_string(100 + rng.below(groups)));
      const auto support = rng.below(5);
      const double f1 = rng.uniform();
      report.classes.push_back(metric(code, support, f1, rng.uniform(), rng.uniform()));
      total += static_cast<double>(support);
      weighted += static_cast<double>(support) * f1;
    }
    const ConceptGraph graph(concepts, edges, kRoot, {}, categories);
    const auto table = category_study(graph, report);
    double sum = 0, support = 0;
    for (std::size_t r = 0; r < table.rows().size(); ++r) {
      const double n = number(table.at(r, "support"));
      CHECK(n > 0);
      sum += n * number(table.at(r, "f1"));
      support += n;
    }
    CHECK(support == total);
    if (total > 0) CHECK(std::abs(sum / support - 100.0 * weighted / total) < 1e-9);
  }
}

TEST_CASE("single category equals overall metrics") {
  ConceptGraph graph({{kRoot, "root", true}, {"1", "a", true}, {"2", "b", true}},
                     {{"1", kRoot}, {"2", kRoot}}, kRoot, {},
                     {{"1", "Poisoning"}, {"2", "Poisoning"}});
  const std::vector<std::string> inventory = {"1", "2"};
  const std::vector<CodeSet> targets = {{"1"}, {"1", "2"}, {"2"}};
  const std::vector<CodeSet> predictions = {{"1"}, {"2"}, {}};
  const auto report = evaluate(targets, predictions, inventory);
  const auto table = category_study(graph, report);
  REQUIRE(table.rows().size() == 1);
  CHECK(std::get<std::string>(table.at(0, "category")) == "Poisoning");
  CHECK(number(table.at(0, "f1")) == doctest::Approx(report.f1));
  CHECK(number(table.at(0, "precision")) == doctest::Approx(report.precision));
  CHECK(number(table.at(0, "recall")) == doctest::Approx(report.recall));
}

TEST_CASE("pipeline studies") {
  GeneratorConfig gen;
  gen.records = 120;
  gen.codes = 6;
  const auto corpus = generate_synthetic(gen, 2).corpus;
  const auto plan = stratified_split(corpus, {}, 2);
  const auto config = tiny_pipeline();

  const std::vector<double> fractions = {0.5, 1.0};
  std::size_t checkpoints = 0;
  const auto sweep = volume_sweep(corpus, plan, fractions, config, 4,
                                  [&](const AnalysisTable& t) { checkpoints = t.rows().size(); });
  REQUIRE(sweep.rows().size() == 2);
  CHECK(checkpoints == 2);
  const auto full = run_pipeline(corpus, plan, config, 4);
  CHECK(number(sweep.at(1, "f1")) == full.test.report.f1);
  CHECK(number(sweep.at(1, "exact_match")) == full.test.report.exact_match);
  CHECK(number(sweep.at(1, "train_records")) == plan.count(SplitTag::train));
  const std::vector<double> bad = {0.0};
  CHECK_THROWS_AS(volume_sweep(corpus, plan, bad, config, 4), Error);

  const std::vector<std::vector<Section>> one = {{Section::diagnosis}};
  const auto fields = field_study(corpus, plan, one, config, 4);
  REQUIRE(fields.rows().size() == 1);
  CHECK(std::get<std::string>(fields.at(0, "fields")) == "diagnosis");

  const auto frozen = frozen_comparison(corpus, plan, config, 4);
  REQUIRE(frozen.rows().size() == 2);
  CHECK(std::get<std::string>(frozen.at(0, "mode")) == "fine_tuned");
  CHECK(number(frozen.at(0, "f1")) == full.test.report.f1);
  CHECK(frozen.provenance["corpus"] == corpus_fingerprint(corpus));
}
