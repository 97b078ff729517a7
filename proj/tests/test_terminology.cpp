#include <doctest.h>

#include "support.hpp"
#include "terminology_fixtures.hpp"
#include "vetcode/error.hpp"
#include "vetcode/terminology.hpp"

using namespace vetcode;
using vetcode::testing::random_dag;
using vetcode::testing::TempDir;

namespace {

const std::string kRoot(kClinicalFindingCode);

std::vector<Concept> concepts(std::initializer_list<std::string> codes) {
  std::vector<Concept> out{{kRoot, "Clinical finding", true}};
  for (const auto& c : codes) out.push_back({c, "term " + c, true});
  return out;
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("depth fixtures") {
  // chain root <- A <- B
  ConceptGraph chain(concepts({"10", "11"}), {{"10", kRoot}, {"11", "10"}}, kRoot);
  CHECK(chain.depth(kRoot) == 0);
  CHECK(chain.depth("10") == 1);
  CHECK(chain.depth("11") == 2);

  // diamond root <- A <- C and root <- C
  ConceptGraph diamond(concepts({"10", "12"}), {{"10", kRoot}, {"12", "10"}, {"12", kRoot}},
                       kRoot);
  CHECK(diamond.depth("12") == 1);

  ConceptGraph orphan(concepts({"10", "20"}), {{"10", kRoot}}, kRoot);
  CHECK_FALSE(orphan.depth("20").has_value());
  CHECK(kind_of([&] { (void)orphan.depth("99"); }) == ErrorKind::not_found);
}

TEST_CASE("depth equals reverse BFS distance on random DAGs") {
  vetcode::Rng sizes(2024);
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = 2 + sizes.below(999);
    const auto dag = random_dag(n, 100 + trial);
    ConceptGraph graph(dag.concepts, dag.edges, dag.root);
    const auto oracle = vetcode::testing::bfs_depths(dag);
    for (const auto& c : dag.concepts) {
      const auto it = oracle.find(c.code);
      const auto d = graph.depth(c.code);
      if (it == oracle.end()) {
        CHECK_FALSE(d.has_value());
      } else {
        REQUIRE(d.has_value());
        CHECK(*d == it->second);
      }
    }
    for (const auto& [child, parent] : dag.edges) {
      const auto dc = graph.depth(child);
      const auto dp = graph.depth(parent);
      if (dc && dp) {
        CHECK(*dc <= *dp + 1);
        CHECK(*dc >= 1);
      }
    }
  }
}

TEST_CASE("ancestors examples") {
  ConceptGraph chain(concepts({"10", "11"}), {{"10", kRoot}, {"11", "10"}}, kRoot);
  CHECK(chain.ancestors(kRoot).empty());
  CHECK(chain.ancestors("11") == std::set<std::string>{"10", kRoot});

  ConceptGraph diamond(concepts({"20", "21", "22"}),
                       {{"20", kRoot}, {"21", kRoot}, {"22", "20"}, {"22", "21"}}, kRoot);
  CHECK(diamond.ancestors("22") == std::set<std::string>{"20", "21", kRoot});
}

TEST_CASE("ancestors match a brute-force transitive closure") {
  for (int trial = 0; trial < 40; ++trial) {
    const auto dag = random_dag(25, 500 + trial);
    ConceptGraph graph(dag.concepts, dag.edges, dag.root);
    // Warshall-style closure until nothing changes.
    std::map<std::string, std::set<std::string>> closure;
    for (const auto& c : dag.concepts) closure[c.code];
    for (const auto& [child, parent] : dag.edges) closure[child].insert(parent);
    bool changed = true;
    while (changed) {
      changed = false;
      for (auto& [node, up] : closure) {
        const auto snapshot = up;
        for (const auto& p : snapshot) {
          for (const auto& q : closure[p]) changed |= up.insert(q).second;
        }
      }
    }
    for (const auto& c : dag.concepts) CHECK(graph.ancestors(c.code) == closure[c.code]);
  }
}

TEST_CASE("graph validation") {
  CHECK(kind_of([] {
          ConceptGraph(concepts({"10", "11"}), {{"10", "11"}, {"11", "10"}, {"10", kRoot}}, kRoot);
        }) == ErrorKind::cycle);
  CHECK(kind_of([] { ConceptGraph(concepts({"10"}), {{"10", "77"}}, kRoot); }) ==
        ErrorKind::not_found);
  CHECK(kind_of([] { ConceptGraph(concepts({"10"}), {{kRoot, "10"}}, kRoot); }) ==
        ErrorKind::validation);
  CHECK(kind_of([] { ConceptGraph(concepts({"10"}), {}, "55"); }) == ErrorKind::not_found);
  CHECK(kind_of([] { ConceptGraph(concepts({"10", "10"}), {}, kRoot); }) == ErrorKind::duplicate);
  // mapping source must be inactive
  CHECK(kind_of([] { ConceptGraph(concepts({"10", "11"}), {}, kRoot, {{"10", "11"}}); }) ==
        ErrorKind::validation);
  CHECK(kind_of([] {
          ConceptGraph(concepts({"10"}), {}, kRoot, {}, {{"10", "Idiopathic mystery"}});
        }) == ErrorKind::validation);
}

TEST_CASE("migrate") {
  auto cs = concepts({"10", "11", "12", "13"});
  cs[1].active = false;  // 10 old
  cs[2].active = false;  // 11 mid
  ConceptGraph graph(cs, {{"12", kRoot}, {"13", kRoot}}, kRoot, {{"10", "11"}, {"11", "12"}});
  CHECK(graph.migrate({}).empty());
  CHECK(graph.migrate({"11", "13"}) == CodeSet{"12", "13"});
  CHECK(graph.migrate({"10"}) == CodeSet{"12"});
  CHECK(graph.migrate({"10", "11", "12"}) == CodeSet{"12"});
  const CodeSet input{"10", "13", "99"};
  CHECK(graph.migrate(graph.migrate(input)) == graph.migrate(input));

  auto cyc = concepts({"10", "11"});
  cyc[1].active = false;
  cyc[2].active = false;
  ConceptGraph looping(cyc, {}, kRoot, {{"10", "11"}, {"11", "10"}});
  try {
    looping.migrate({"10"});
    FAIL("expected cycle");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::cycle);
    CHECK(std::string(e.what()).find("10 -> 11 -> 10") != std::string::npos);
  }
}

TEST_CASE("migrate_corpus") {
  auto cs = concepts({"10", "12"});
  cs[1].active = false;
  ConceptGraph graph(cs, {{"12", kRoot}}, kRoot, {{"10", "12"}});
  ClinicalRecord a;
  a.record_id = "a";
  a.codes = {"10", "5"};
  ClinicalRecord b;
  b.record_id = "b";
  b.codes = {"12"};
  const auto migrated = migrate_corpus(Corpus({a, b}), graph);
  CHECK(migrated.at(0).codes == CodeSet{"12", "5"});
  CHECK(migrated.inventory() == std::vector<std::string>{"12", "5"});
}

TEST_CASE("categorize") {
  ConceptGraph graph(concepts({"10", "11", "12", "13", "14"}),
                     {{"10", kRoot},
                      {"11", kRoot},
                      {"12", "10"},
                      {"12", "11"},
                      {"13", kRoot},
                      {"14", "12"}},
                     kRoot, {},
                     {{"10", "Metabolic disease"}, {"11", "Inflammatory disorder"}});
  CHECK(graph.categorize("10") == "Metabolic disease");
  CHECK(graph.categorize("13") == "Other");
  CHECK(graph.categorize("12") == "Inflammatory disorder");
  CHECK(graph.categorize("14") == "Inflammatory disorder");
  CHECK(graph.categorize(kRoot) == "Other");
  CHECK(kind_of([&] { (void)graph.categorize("99"); }) == ErrorKind::not_found);
}

TEST_CASE("search") {
  std::vector<Concept> cs{{kRoot, "Clinical finding", true},
                          {"1", "Otitis externa", true},
                          {"2", "Otitis media", true},
                          {"3", "Fracture", true},
                          {"4", "Chronic otitis", true}};
  ConceptGraph graph(cs, {{"1", kRoot}, {"2", kRoot}, {"3", kRoot}, {"4", kRoot}}, kRoot);
  const auto hits = graph.search("OTITIS", 10);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0] == SearchHit{"2", "Otitis media"});
  CHECK(hits[1] == SearchHit{"1", "Otitis externa"});
  CHECK(hits[2].code == "4");
  CHECK(graph.search("", 10).empty());
  const auto top = graph.search("otitis", 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].code == "2");
}

TEST_CASE("terminology files round trip") {
  GeneratorConfig config;
  config.records = 100;
  config.codes = 30;
  const auto synthetic = generate_synthetic(config, 4);
  const auto graph = generate_synthetic_terminology(synthetic, 4);
  for (const auto& code : synthetic.corpus.inventory()) CHECK(graph.contains(code));

  TempDir dir("terms");
  const auto paths = TerminologyPaths::in_directory(dir.path());
  write_terminology(graph, paths);
  const auto back = load_terminology(paths);
  CHECK(back.size() == graph.size());
  CHECK(back.edges() == graph.edges());
  CHECK(back.inactive_map() == graph.inactive_map());
  CHECK(back.category_map() == graph.category_map());
  for (const auto& c : graph.concepts()) {
    CHECK(back.depth(c.code) == graph.depth(c.code));
    CHECK(back.concept_of(c.code).term == c.term);
    CHECK(back.concept_of(c.code).active == c.active);
  }
}
