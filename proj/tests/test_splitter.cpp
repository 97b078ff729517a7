#include <cmath>
#include <sstream>

#include <doctest.h>

#include "splitter_fixtures.hpp"
#include "vetcode/error.hpp"
#include "vetcode/splitter.hpp"

using namespace vetcode;
using vetcode::testing::label_counts;
using vetcode::testing::random_label_corpus;

TEST_CASE("single shared label splits 8/1/1") {
  std::vector<ClinicalRecord> records;
  for (int i = 0; i < 10; ++i) {
    ClinicalRecord r;
    r.record_id = "v" + std::to_string(i);
    r.codes = {"1"};
    records.push_back(r);
  }
  const Corpus corpus(records);
  const auto plan = stratified_split(corpus, {}, 42);
  CHECK(plan.count(SplitTag::train) == 8);
  CHECK(plan.count(SplitTag::validation) == 1);
  CHECK(plan.count(SplitTag::test) == 1);
  CHECK(plan == stratified_split(corpus, {}, 42));
}

TEST_CASE("split errors") {
  const auto corpus = random_label_corpus(20, 3, 1);
  CHECK_THROWS_AS(stratified_split(corpus, {0.5, 0.5, 0.5}, 1), Error);
  CHECK_THROWS_AS(stratified_split(corpus, {1.2, -0.1, -0.1}, 1), Error);
  CHECK_THROWS_AS(stratified_split(Corpus{}, {}, 1), Error);
}

TEST_CASE("stratification stays within one record per label") {
  Rng sizes(77);
  const SplitFractions fractions;
  const auto f = fractions.as_array();
  const SplitTag tags[] = {SplitTag::train, SplitTag::validation, SplitTag::test};
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 20 + sizes.below(181);
    const auto labels = 1 + sizes.below(20);
    const auto corpus = random_label_corpus(n, labels, 1000 + trial);
    const auto plan = stratified_split(corpus, fractions, trial);

    // partition
    REQUIRE(plan.assignment.size() == corpus.size());
    for (const auto& r : corpus.records()) CHECK(plan.assignment.contains(r.record_id));

    std::map<std::string, std::size_t> support;
    for (const auto& r : corpus.records()) {
      for (const auto& c : r.codes) ++support[c];
    }
    for (int s = 0; s < 3; ++s) {
      const auto counts = label_counts(corpus, plan.ids(tags[s]));
      for (const auto& [code, n_code] : support) {
        if (n_code < 10) continue;
        const double expected = f[s] * static_cast<double>(n_code);
        const auto it = counts.find(code);
        const double got = it == counts.end() ? 0.0 : static_cast<double>(it->second);
        CHECK_MESSAGE(std::abs(got - expected) <= 1.0 + 1e-9, "trial ", trial, " label ", code,
                      " split ", s, " got ", got, " expected ", expected);
      }
      // sizes within the number of labels of the target
      CHECK(std::abs(static_cast<double>(plan.count(tags[s])) - f[s] * static_cast<double>(n)) <=
            static_cast<double>(labels));
    }
    CHECK(plan == stratified_split(corpus, fractions, trial));
  }
}

TEST_CASE("subset_training") {
  const auto corpus = random_label_corpus(250, 6, 9);
  const auto plan = stratified_split(corpus, {}, 3);
  const auto train_ids = plan.ids(SplitTag::train);
  const std::set<std::string> train(train_ids.begin(), train_ids.end());
  CHECK(subset_training(corpus, plan, 1.0, 5) == train);

  CHECK_THROWS_AS(subset_training(corpus, plan, 0.0, 5), Error);
  CHECK_THROWS_AS(subset_training(corpus, plan, 1.5, 5), Error);

  const auto quarter = subset_training(corpus, plan, 0.25, 5);
  CHECK(quarter.size() ==
        static_cast<std::size_t>(std::llround(0.25 * static_cast<double>(train.size()))));
  for (const auto& id : quarter) CHECK(train.contains(id));
  CHECK(quarter == subset_training(corpus, plan, 0.25, 5));

  const auto full = label_counts(corpus, train_ids);
  const auto sub = label_counts(corpus, {quarter.begin(), quarter.end()});
  for (const auto& [code, n] : full) {
    if (n < 8) continue;
    const auto it = sub.find(code);
    const double got = it == sub.end() ? 0.0 : static_cast<double>(it->second);
    CHECK(std::abs(got - 0.25 * static_cast<double>(n)) <= 1.0 + 1e-9);
  }
}

TEST_CASE("split plan file round trip") {
  const auto corpus = random_label_corpus(30, 4, 2);
  const auto plan = stratified_split(corpus, {}, 8);
  std::stringstream io;
  write_split_plan(io, plan);
  const auto first = io.str();
  CHECK(first.rfind(R"({"record_id":"r0","split":)", 0) == 0);
  CHECK(read_split_plan(io) == plan);
  std::istringstream dup(R"({"record_id":"a","split":"train"})"
                         "\n"
                         R"({"record_id":"a","split":"test"})"
                         "\n");
  CHECK_THROWS_AS(read_split_plan(dup), Error);
}
