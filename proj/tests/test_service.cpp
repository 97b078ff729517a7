#include <fstream>
#include <thread>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "service_fixtures.hpp"
#include "support.hpp"
#include "vetcode/error.hpp"
#include "vetcode/service.hpp"

// after Eigen: <resolv.h> defines a _res macro
#include <httplib.h>

using namespace vetcode;
using nlohmann::json;
using vetcode::testing::TempDir;

namespace {

DecisionEvent event(std::uint64_t id, std::string record, Action action,
                    std::optional<std::string> code = std::nullopt) {
  DecisionEvent e;
  e.event_id = id;
  e.record_id = std::move(record);
  e.action = action;
  e.code = std::move(code);
  e.actor = "c1";
  e.timestamp_ms = 1000 + static_cast<std::int64_t>(id);
  return e;
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

// A small trained bundle plus terminology over a synthetic corpus.
struct Fixture {
  SyntheticCorpus synthetic;
  std::shared_ptr<const ConceptGraph> terms;
  ModelBundle bundle;

  Fixture() {
    GeneratorConfig gen;
    gen.records = 200;
    gen.codes = 8;
    synthetic = generate_synthetic(gen, 21);
    terms = std::make_shared<ConceptGraph>(generate_synthetic_terminology(synthetic, 21));
    const auto plan = stratified_split(synthetic.corpus, {}, 3);
    PipelineConfig c;
    c.input.max_len = 64;
    c.model.dim = 32;
    c.model.blocks = 1;
    c.model.heads = 2;
    c.train.peak_learning_rate = 3e-3;
    c.train.warmup_steps = 20;
    c.train.max_epochs = 15;
    c.train.patience = 15;
    auto result = run_pipeline(synthetic.corpus, plan, c, 5);
    bundle = {result.trained.model, result.vocab, synthetic.corpus.inventory(), c.input.fields,
              0.5};
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("replay examples") {
  TempDir dir("replay");
  EventLog log(dir / "events.jsonl");
  log.append(event(1, "a", Action::accept, "1"));
  log.append(event(2, "a", Action::reject, "1"));
  log.append(event(3, "a", Action::augment, "2"));
  log.append(event(4, "a", Action::finalize));
  log.append(event(5, "b", Action::finalize));
  log.append(event(6, "c", Action::accept, "3"));
  CHECK(export_finalized(log.state()) ==
        "{\"record_id\":\"a\",\"codes\":[\"2\"]}\n{\"record_id\":\"b\",\"codes\":[]}\n");
  CHECK(export_finalized(log.state()) == export_finalized(log.state()));
  CHECK(export_finalized(log.state(), "b", "z") == "{\"record_id\":\"b\",\"codes\":[]}\n");
}

TEST_CASE("lifecycle and idempotency") {
  TempDir dir("lifecycle");
  EventLog log(dir / "events.jsonl");
  log.append(event(1, "a", Action::accept, "1"));
  log.append(event(2, "a", Action::finalize));
  CHECK(kind_of([&] { log.append(event(3, "a", Action::accept, "1")); }) == ErrorKind::conflict);

  const auto again = log.append(event(2, "a", Action::finalize));
  CHECK(again.duplicate);
  CHECK(log.events().size() == 2);
  auto changed = event(1, "a", Action::reject, "1");
  CHECK(kind_of([&] { log.append(changed); }) == ErrorKind::conflict);
  CHECK(kind_of([&] { log.append(event(1, "b", Action::accept, "1")); }) == ErrorKind::conflict);
  CHECK(kind_of([&] { log.append(event(9, "b", Action::accept)); }) == ErrorKind::validation);
  CHECK(kind_of([&] { log.append(event(9, "b", Action::finalize, "4")); }) ==
        ErrorKind::validation);
}

TEST_CASE("export equals a brute-force fold over random decision streams") {
  for (std::uint64_t trial = 0; trial < 300; ++trial) {
    TempDir dir("fold");
    const auto stream = vetcode::testing::random_events(trial, 40);
    std::vector<DecisionEvent> accepted;
    {
      EventLog log(dir / "events.jsonl");
      for (const auto& e : stream) {
        try {
          log.append(e);
          accepted.push_back(e);
        } catch (const Error& err) {
          CHECK(err.kind() == ErrorKind::conflict);
        }
      }
      CHECK(export_finalized(log.state()) == vetcode::testing::oracle_export(accepted));
      CHECK(export_finalized(replay(accepted)) == export_finalized(log.state()));
    }
    EventLog reopened(dir / "events.jsonl");
    CHECK(reopened.events() == accepted);
    CHECK(export_finalized(reopened.state()) == vetcode::testing::oracle_export(accepted));
  }
}

TEST_CASE("a torn trailing line is discarded on recovery") {
  TempDir dir("torn");
  const auto path = dir / "events.jsonl";
  {
    EventLog log(path);
    log.append(event(1, "a", Action::accept, "1"));
    log.append(event(2, "a", Action::finalize));
  }
  const auto before = export_finalized(EventLog(path).state());
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << R"({"event_id":3,"record_id":"b","timesta)";
  }
  EventLog recovered(path);
  CHECK(recovered.events().size() == 2);
  CHECK(export_finalized(recovered.state()) == before);
  recovered.append(event(3, "b", Action::finalize));
  EventLog again(path);
  CHECK(again.events().size() == 3);

  std::ofstream(dir / "bad.jsonl") << "{garbage}\n";
  CHECK(kind_of([&] { EventLog bad(dir / "bad.jsonl"); }) == ErrorKind::parse);
}

TEST_CASE("suggestions") {
  auto& f = fixture();
  const SuggestEngine engine(f.bundle, f.terms);
  CHECK(engine.suggest("anything", 0, 0.5).empty());
  const auto list = engine.suggest("some text", 20, 0.3);
  CHECK(list.size() == f.bundle.inventory.size());
  for (std::size_t i = 0; i < list.size(); ++i) {
    CHECK(list[i].above_threshold == (list[i].probability > 0.3));
    CHECK(list[i].term == f.terms->concept_of(list[i].code).term);
    if (i > 0) {
      CHECK((list[i - 1].probability > list[i].probability ||
             (list[i - 1].probability == list[i].probability && list[i - 1].code < list[i].code)));
    }
  }
  // a pure template of a common code ranks it in the top 5
  const auto& code = f.synthetic.codes[0];
  const auto top = engine.suggest(code.templates[1], 5, 0.5);
  bool found = false;
  for (const auto& s : top) found = found || s.code == code.code;
  CHECK(found);
}

TEST_CASE("service routes") {
  auto& f = fixture();
  TempDir dir("routes");
  std::vector<ClinicalRecord> queue(f.synthetic.corpus.records().begin(),
                                    f.synthetic.corpus.records().begin() + 3);
  Service service(std::make_unique<SuggestEngine>(f.bundle, f.terms), f.terms, queue,
                  dir / "events.jsonl");
  const std::map<std::string, std::string> none;

  auto r = service.handle("POST", "/suggest", none, R"({"text":"x","top_k":3})");
  CHECK(r.status == 200);
  auto j = json::parse(r.body);
  CHECK(j["suggestions"].size() == 3);
  CHECK(j["suggestions"][0].contains("above_threshold"));
  CHECK(service.handle("POST", "/suggest", none, R"({"text":"x","top_k":-1})").status == 422);
  CHECK(service.handle("POST", "/suggest", none, R"({"txt":"x"})").status == 422);
  CHECK(service.handle("POST", "/suggest", none, "not json").status == 400);
  CHECK(service.handle("GET", "/suggest", none, "").status == 400);

  r = service.handle("GET", "/records", {{"status", "pending"}}, "");
  j = json::parse(r.body);
  REQUIRE(j["records"].size() == 3);
  CHECK(j["records"][0]["record_id"] == queue[0].record_id);
  CHECK(j["records"][0]["input"] ==
        build_input(queue[0], std::span<const Section>(f.bundle.fields)));

  const auto rid = queue[1].record_id;
  const auto code = f.bundle.inventory[0];
  auto post = [&](std::uint64_t id, const std::string& action, const std::string& c) {
    json body{{"record_id", rid}, {"action", action}, {"event_id", id}, {"actor", "c1"}};
    if (!c.empty()) body["code"] = c;
    return service.handle("POST", "/decisions", none, body.dump());
  };
  CHECK(post(10, "accept", code).status == 201);
  CHECK(post(10, "accept", code).status == 200);
  CHECK(post(11, "augment", "999999999999").status == 422);
  CHECK(post(11, "finalize", "").status == 201);
  CHECK(post(12, "accept", code).status == 409);
  CHECK(service.handle("POST", "/decisions", none,
                       R"({"record_id":"nope","action":"finalize","event_id":50,"actor":"c"})")
            .status == 404);

  j = json::parse(service.handle("GET", "/records", {{"status", "pending"}}, "").body);
  CHECK(j["records"].size() == 2);
  j = json::parse(service.handle("GET", "/records", {{"status", "finalized"}}, "").body);
  REQUIRE(j["records"].size() == 1);
  CHECK(j["records"][0]["codes"] == json::array({code}));
  CHECK(service.handle("GET", "/records", {{"status", "odd"}}, "").status == 422);

  r = service.handle("GET", "/export", none, "");
  CHECK(r.body == "{\"record_id\":\"" + rid + "\",\"codes\":[\"" + code + "\"]}\n");
  CHECK(r.content_type == "application/x-ndjson");

  const auto term = f.terms->concept_of(code).term;
  j = json::parse(service.handle("GET", "/search", {{"q", term}, {"limit", "1"}}, "").body);
  REQUIRE(j["results"].size() == 1);
  CHECK(j["results"][0]["code"] == code);
  CHECK(service.handle("GET", "/search", {{"q", "x"}, {"limit", "-2"}}, "").status == 422);
  j = json::parse(service.handle("GET", "/search", {{"q", ""}}, "").body);
  CHECK(j["results"].empty());

  j = json::parse(service.handle("GET", "/health", none, "").body);
  CHECK(j["status"] == "ok");
  CHECK(j["events"] == 2);
  CHECK(service.handle("GET", "/missing", none, "").status == 404);
}

TEST_CASE("service without a model reports unavailable") {
  TempDir dir("nomodel");
  Service service(nullptr, nullptr, {}, dir / "events.jsonl");
  CHECK(service.handle("POST", "/suggest", {}, R"({"text":"x"})").status == 503);
  CHECK(service.handle("GET", "/search", {{"q", "x"}}, "").status == 503);
  CHECK(service.handle("GET", "/health", {}, "").status == 200);
}

TEST_CASE("HTTP round trip") {
  auto& f = fixture();
  TempDir dir("http");
  std::vector<ClinicalRecord> queue(f.synthetic.corpus.records().begin(),
                                    f.synthetic.corpus.records().begin() + 2);
  Service service(std::make_unique<SuggestEngine>(f.bundle, f.terms), f.terms, queue,
                  dir / "events.jsonl");

  HttpServer server(service);
  const int port = server.bind("127.0.0.1", 0);
  std::thread thread([&] { server.run(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/health");
  REQUIRE(res);
  CHECK(res->status == 200);
  res = client.Post("/suggest", R"({"text":"cough","top_k":2})", "application/json");
  REQUIRE(res);
  CHECK(json::parse(res->body)["suggestions"].size() == 2);
  const json decision{{"record_id", queue[0].record_id},
                      {"action", "finalize"},
                      {"event_id", 1},
                      {"actor", "c"}};
  res = client.Post("/decisions", decision.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  res = client.Get("/records?status=pending");
  REQUIRE(res);
  CHECK(json::parse(res->body)["records"].size() == 1);
  res = client.Get("/export");
  REQUIRE(res);
  CHECK(res->body == "{\"record_id\":\"" + queue[0].record_id + "\",\"codes\":[]}\n");
  res = client.Get("/search?q=clinical&limit=3");
  REQUIRE(res);
  CHECK(res->status == 200);
  res = client.Get("/nowhere");
  REQUIRE(res);
  CHECK(res->status == 404);
  CHECK(json::parse(res->body)["error"]["kind"] == "not_found");
  res = client.Get("/suggest");
  REQUIRE(res);
  CHECK(res->status == 400);

  server.stop();
  thread.join();
}
