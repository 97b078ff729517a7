#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "vetcode/corpus.hpp"
#include "vetcode/error.hpp"
#include "vetcode/pipeline.hpp"
#include "vetcode/terminology.hpp"

namespace vetcode {

struct Suggestion {
  std::string code;
  std::string term;
  double probability = 0.0;
  bool above_threshold = false;
};

// Read-only inference over a loaded bundle; safe to call concurrently.
class SuggestEngine {
 public:
  SuggestEngine(ModelBundle bundle, std::shared_ptr<const ConceptGraph> terminology);

  // Sorted by probability descending, ties by code.
  std::vector<Suggestion> suggest(std::string_view text, std::size_t top_k,
                                  double threshold) const;
  const ModelBundle& bundle() const { return bundle_; }

 private:
  ModelBundle bundle_;
  std::shared_ptr<const ConceptGraph> terminology_;
};

enum class Action { accept, reject, augment, finalize };
std::string_view to_string(Action action);
Action parse_action(std::string_view name);

struct DecisionEvent {
  std::uint64_t event_id = 0;
  std::string record_id;
  std::int64_t timestamp_ms = 0;  // UTC
  Action action = Action::accept;
  std::optional<std::string> code;  // absent for finalize
  std::string actor;

  friend bool operator==(const DecisionEvent&, const DecisionEvent&) = default;
};

std::string event_to_json_line(const DecisionEvent& event);
DecisionEvent event_from_json_line(std::string_view line);

struct RecordDecisions {
  std::map<std::string, bool> included;  // code -> in the final set
  bool finalized = false;

  CodeSet final_codes() const;
};

// Folds events in log order: accept and augment include a code, reject
// excludes it, later events win, finalize closes the record.
std::map<std::string, RecordDecisions> replay(std::span<const DecisionEvent> events);

// JSONL of {"record_id", "codes"} for finalized records in record_id order,
// optionally restricted to the inclusive range [from, to].
std::string export_finalized(const std::map<std::string, RecordDecisions>& state,
                             const std::optional<std::string>& from = std::nullopt,
                             const std::optional<std::string>& to = std::nullopt);

// Append-only newline-delimited JSON log. Every append is written and
// fsync'ed before it is acknowledged; one mutex serializes writers. On open
// the existing log is replayed; a trailing line without its newline (an
// interrupted append) is discarded.
class EventLog {
 public:
  explicit EventLog(std::filesystem::path path);
  ~EventLog();
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  struct Ack {
    DecisionEvent event;  // as stored
    bool duplicate = false;
  };

  // Throws Error(conflict) for a finalized record, a non-increasing event id
  // or a reused id with different content, and Error(validation) for a
  // malformed event. Resending a stored event is acknowledged unchanged.
  Ack append(DecisionEvent event);

  std::vector<DecisionEvent> events() const;
  std::map<std::string, RecordDecisions> state() const;
  bool is_finalized(const std::string& record_id) const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  mutable std::mutex mutex_;
  std::vector<DecisionEvent> events_;
  std::map<std::uint64_t, std::size_t> by_id_;
  std::map<std::string, RecordDecisions> state_;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct ServiceOptions {
  std::size_t default_top_k = 20;
  std::optional<double> default_threshold;  // bundle threshold when unset
  std::size_t default_search_limit = 20;
};

// Routes of the coder-assist API, independent of any socket layer.
class Service {
 public:
  Service(std::unique_ptr<SuggestEngine> engine, std::shared_ptr<const ConceptGraph> terminology,
          std::vector<ClinicalRecord> queue, std::filesystem::path log_path,
          ServiceOptions options = {});

  HttpResponse handle(std::string_view method, std::string_view path,
                      const std::map<std::string, std::string>& query, std::string_view body);

  EventLog& log() { return log_; }

 private:
  HttpResponse suggest(std::string_view body) const;
  HttpResponse records(const std::map<std::string, std::string>& query) const;
  HttpResponse decide(std::string_view body);
  HttpResponse export_coded(const std::map<std::string, std::string>& query) const;
  HttpResponse search(const std::map<std::string, std::string>& query) const;
  HttpResponse health() const;

  std::unique_ptr<SuggestEngine> engine_;
  std::shared_ptr<const ConceptGraph> terminology_;
  std::vector<ClinicalRecord> queue_;
  std::map<std::string, std::size_t> queue_index_;
  CodeSet inventory_;
  ServiceOptions options_;
  EventLog log_;
};

int http_status(ErrorKind kind);
HttpResponse error_response(ErrorKind kind, const std::string& message);

// Socket front end; every method and path is passed to Service::handle.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 binds any free port. Returns the bound port; throws Error(io).
  int bind(const std::string& host, int port);
  // Blocks until stop() is called from another thread.
  void run();
  void stop();
  void wait_until_ready();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Blocks serving `service` over HTTP until the process is stopped.
void serve_http(Service& service, const std::string& host, int port);

}  // namespace vetcode
