#include <cmath>
#include <sstream>

#include <doctest.h>

#include "metric_oracle.hpp"
#include "vetcode/error.hpp"
#include "vetcode/evaluation.hpp"
#include "vetcode/rng.hpp"

using namespace vetcode;

using vetcode::testing::metric_oracle;

TEST_CASE("worked example") {
  const std::vector<std::string> inventory = {"1", "2", "3"};
  const std::vector<CodeSet> targets = {{"1", "2"}, {"2"}};
  const std::vector<CodeSet> predictions = {{"1"}, {"2", "3"}};
  const auto report = evaluate(targets, predictions, inventory);
  CHECK(format_percent(report.precision) == "100.00");
  CHECK(format_percent(report.recall) == "66.67");
  CHECK(format_percent(report.f1) == "77.78");
  CHECK(format_percent(report.exact_match) == "0.00");
  CHECK(report.classes[0].support == 1);
  CHECK(report.classes[1].support == 2);
  CHECK(report.classes[2].support == 0);
  CHECK(report.classes[2].fp == 1);
}

TEST_CASE("identity predictions score 100") {
  const std::vector<std::string> inventory = {"1", "2", "3"};
  const std::vector<CodeSet> targets = {{"1", "3"}, {}, {"2"}};
  const auto report = evaluate(targets, targets, inventory);
  CHECK(report.precision == 100.0);
  CHECK(report.recall == 100.0);
  CHECK(report.f1 == 100.0);
  CHECK(report.exact_match == 100.0);
}

TEST_CASE("evaluate matches the brute-force oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto classes = 1 + rng.below(5);
    const auto records = rng.below(9);
    std::vector<std::string> inventory;
    for (std::uint64_t c = 0; c < classes; ++c) inventory.push_back(std::to_string(c + 1));
    std::vector<CodeSet> targets(records), predictions(records);
    for (std::uint64_t j = 0; j < records; ++j) {
      for (const auto& code : inventory) {
        if (rng.bernoulli(0.4)) targets[j].insert(code);
        if (rng.bernoulli(0.4)) predictions[j].insert(code);
      }
    }
    const auto report = evaluate(targets, predictions, inventory);
    const auto expected = metric_oracle(targets, predictions, inventory);
    CHECK(std::abs(report.precision - expected.precision) <= 1e-12);
    CHECK(std::abs(report.recall - expected.recall) <= 1e-12);
    CHECK(std::abs(report.f1 - expected.f1) <= 1e-12);
    CHECK(std::abs(report.exact_match - expected.exact_match) <= 1e-12);
    for (const auto& c : report.classes) CHECK(c.tp + c.fn == c.support);

    // weighted recall is micro recall over target instances
    double tp = 0, n = 0;
    for (const auto& c : report.classes) {
      tp += static_cast<double>(c.tp);
      n += static_cast<double>(c.support);
    }
    if (n > 0) CHECK(std::abs(report.recall - 100.0 * tp / n) <= 1e-9);
  }
}

TEST_CASE("evaluate errors") {
  const std::vector<std::string> inventory = {"1"};
  const std::vector<CodeSet> one = {{"1"}};
  const std::vector<CodeSet> two = {{"1"}, {}};
  CHECK_THROWS_AS(evaluate(one, two, inventory), Error);
  const std::vector<CodeSet> unknown = {{"9"}};
  CHECK_THROWS_AS(evaluate(one, unknown, inventory), Error);
  CHECK_THROWS_AS(exact_match(one, two), Error);
}

TEST_CASE("exact match examples") {
  const std::vector<CodeSet> empty = {{}};
  CHECK(exact_match(empty, empty) == 100.0);
  const std::vector<CodeSet> t = {{"1"}, {"2"}};
  const std::vector<CodeSet> p = {{"1"}, {"3"}};
  CHECK(exact_match(t, p) == 50.0);
  const std::vector<CodeSet> t2 = {{"2"}, {"1"}};
  const std::vector<CodeSet> p2 = {{"3"}, {"1"}};
  CHECK(exact_match(t2, p2) == 50.0);
}

TEST_CASE("confidence intervals") {
  // t_{.975,2} in closed form: for 2 degrees of freedom the quantile of
  // probability q is (2q - 1) * sqrt(2 / (1 - (2q - 1)^2)).
  const double a = 2 * 0.975 - 1;
  const double t2 = a * std::sqrt(2.0 / (1 - a * a));
  CHECK(t2 == doctest::Approx(4.302653).epsilon(1e-6));
  CHECK(student_t_quantile(0.975, 2) == doctest::Approx(t2).epsilon(1e-12));

  const std::vector<double> values = {70, 72, 74};
  const auto ci = confidence_interval(values);
  CHECK(ci.mean == 72.0);
  CHECK(std::abs(ci.half_width - t2 * 2.0 / std::sqrt(3.0)) < 1e-9);
  CHECK(std::abs(ci.half_width - 4.968) < 1e-3);
  CHECK(ci.runs == 3);

  const std::vector<double> flat = {61.25, 61.25, 61.25};
  const auto z = confidence_interval(flat);
  CHECK(z.mean == 61.25);
  CHECK(z.half_width == 0.0);

  const std::vector<double> single = {1.0};
  CHECK_THROWS_AS(confidence_interval(single), Error);
}

TEST_CASE("report serialization") {
  const std::vector<std::string> inventory = {"1", "2", "3"};
  const std::vector<CodeSet> targets = {{"1", "2"}, {"2"}};
  const std::vector<CodeSet> predictions = {{"1"}, {"2", "3"}};
  const auto report = evaluate(targets, predictions, inventory);
  std::ostringstream csv;
  write_class_csv(csv, report);
  CHECK(csv.str().rfind("code,support,tp,fp,fn,precision,recall,f1\n1,1,1,0,0,", 0) == 0);
  std::ostringstream json;
  write_report_json(json, report);
  CHECK(json.str().find("\"weighted_f1\": 77.78") != std::string::npos);
}
