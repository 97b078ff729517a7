#include "vetcode/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vetcode/error.hpp"
#include "vetcode/trainer.hpp"

namespace vetcode {

using nlohmann::json;
using nlohmann::ordered_json;

SuggestEngine::SuggestEngine(ModelBundle bundle, std::shared_ptr<const ConceptGraph> terminology)
    : bundle_(std::move(bundle)), terminology_(std::move(terminology)) {}

std::vector<Suggestion> SuggestEngine::suggest(std::string_view text, std::size_t top_k,
                                               double threshold) const {
  if (top_k == 0) return {};
  const auto ids = encode(bundle_.vocab, clean_text(text)).ids;
  const std::vector<std::vector<TokenId>> one = {ids};
  const Matrix logits = forward(bundle_.model, make_batch(one), false, 0);
  std::vector<Suggestion> all;
  all.reserve(bundle_.inventory.size());
  for (std::size_t c = 0; c < bundle_.inventory.size(); ++c) {
    Suggestion s;
    s.code = bundle_.inventory[c];
    s.probability = sigmoid(logits(0, static_cast<Eigen::Index>(c)));
    s.above_threshold = s.probability > threshold;
    all.push_back(std::move(s));
  }
  const auto k = std::min(top_k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Suggestion& a, const Suggestion& b) {
                      if (a.probability != b.probability) return a.probability > b.probability;
                      return a.code < b.code;
                    });
  all.resize(k);
  for (auto& s : all) {
    s.term = terminology_ && terminology_->contains(s.code) ? terminology_->concept_of(s.code).term
                                                            : s.code;
  }
  return all;
}

std::string_view to_string(Action action) {
  switch (action) {
    case Action::accept: return "accept";
    case Action::reject: return "reject";
    case Action::augment: return "augment";
    case Action::finalize: return "finalize";
  }
  return "accept";
}

Action parse_action(std::string_view name) {
  for (const auto a : {Action::accept, Action::reject, Action::augment, Action::finalize}) {
    if (to_string(a) == name) return a;
  }
  throw Error(ErrorKind::validation, "unknown action '" + std::string(name) + "'");
}

std::string event_to_json_line(const DecisionEvent& event) {
  ordered_json j;
  j["event_id"] = event.event_id;
  j["record_id"] = event.record_id;
  j["timestamp_ms"] = event.timestamp_ms;
  j["action"] = std::string(to_string(event.action));
  if (event.code) j["code"] = *event.code;
  j["actor"] = event.actor;
  return j.dump();
}

DecisionEvent event_from_json_line(std::string_view line) {
  try {
    const auto j = json::parse(line);
    DecisionEvent e;
    e.event_id = j.at("event_id").get<std::uint64_t>();
    e.record_id = j.at("record_id").get<std::string>();
    e.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
    e.action = parse_action(j.at("action").get<std::string>());
    if (j.contains("code")) e.code = j.at("code").get<std::string>();
    e.actor = j.at("actor").get<std::string>();
    return e;
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::parse, std::string("event: ") + ex.what());
  }
}

CodeSet RecordDecisions::final_codes() const {
  CodeSet out;
  for (const auto& [code, in] : included) {
    if (in) out.insert(code);
  }
  return out;
}

namespace {

void fold(std::map<std::string, RecordDecisions>& state, const DecisionEvent& e) {
  auto& r = state[e.record_id];
  switch (e.action) {
    case Action::accept:
    case Action::augment: r.included[*e.code] = true; break;
    case Action::reject: r.included[*e.code] = false; break;
    case Action::finalize: r.finalized = true; break;
  }
}

void validate_event(const DecisionEvent& e) {
  if (e.record_id.empty()) throw Error(ErrorKind::validation, "record_id must be nonempty");
  if (e.action == Action::finalize) {
    if (e.code) throw Error(ErrorKind::validation, "finalize takes no code");
  } else if (!e.code || !is_code_identifier(*e.code)) {
    throw Error(ErrorKind::validation,
                std::string(to_string(e.action)) + " needs a code made of decimal digits");
  }
}

bool same_decision(const DecisionEvent& a, const DecisionEvent& b) {
  return a.record_id == b.record_id && a.action == b.action && a.code == b.code &&
         a.actor == b.actor;
}

}  // namespace

std::map<std::string, RecordDecisions> replay(std::span<const DecisionEvent> events) {
  std::map<std::string, RecordDecisions> state;
  for (const auto& e : events) fold(state, e);
  return state;
}

std::string export_finalized(const std::map<std::string, RecordDecisions>& state,
                             const std::optional<std::string>& from,
                             const std::optional<std::string>& to) {
  std::string out;
  for (const auto& [id, r] : state) {
    if (!r.finalized) continue;
    if (from && id < *from) continue;
    if (to && id > *to) continue;
    ordered_json j;
    j["record_id"] = id;
    const auto codes = r.final_codes();
    j["codes"] = std::vector<std::string>(codes.begin(), codes.end());
    out += j.dump();
    out += '\n';
  }
  return out;
}

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path)) {
  std::string content;
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open event log " + path_.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    content = buffer.str();
  }
  // Keep only complete lines; an interrupted append leaves a partial tail.
  const auto complete = content.rfind('\n') == std::string::npos ? 0 : content.rfind('\n') + 1;
  std::size_t line_no = 0;
  for (std::size_t start = 0; start < complete;) {
    const auto end = content.find('\n', start);
    const auto line = std::string_view(content).substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    DecisionEvent e;
    try {
      e = event_from_json_line(line);
      validate_event(e);
    } catch (const Error& err) {
      throw Error(err.kind(), fmt::format("{}:{}: {}", path_.string(), line_no, err.what()));
    }
    if (!events_.empty() && e.event_id <= events_.back().event_id) {
      throw Error(ErrorKind::parse, fmt::format("{}:{}: event ids out of order", path_.string(),
                                                line_no));
    }
    by_id_[e.event_id] = events_.size();
    events_.push_back(e);
    fold(state_, e);
  }
  if (complete < content.size()) std::filesystem::resize_file(path_, complete);

  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw Error(ErrorKind::io, "cannot open event log " + path_.string() + ": " +
                                   std::strerror(errno));
  }
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

EventLog::Ack EventLog::append(DecisionEvent event) {
  validate_event(event);
  std::lock_guard lock(mutex_);
  if (const auto it = by_id_.find(event.event_id); it != by_id_.end()) {
    const auto& stored = events_[it->second];
    if (!same_decision(stored, event)) {
      throw Error(ErrorKind::conflict,
                  fmt::format("event id {} already holds a different decision", event.event_id));
    }
    return {stored, true};
  }
  if (const auto it = state_.find(event.record_id); it != state_.end() && it->second.finalized) {
    throw Error(ErrorKind::conflict, "record '" + event.record_id + "' is finalized");
  }
  if (!events_.empty() && event.event_id <= events_.back().event_id) {
    throw Error(ErrorKind::conflict,
                fmt::format("event id {} is not greater than the last stored id {}",
                            event.event_id, events_.back().event_id));
  }
  const auto line = event_to_json_line(event) + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    const auto n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorKind::io, std::string("event log write failed: ") + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) {
    throw Error(ErrorKind::io, std::string("event log fsync failed: ") + std::strerror(errno));
  }
  by_id_[event.event_id] = events_.size();
  events_.push_back(event);
  fold(state_, event);
  return {event, false};
}

std::vector<DecisionEvent> EventLog::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

std::map<std::string, RecordDecisions> EventLog::state() const {
  std::lock_guard lock(mutex_);
  return state_;
}

bool EventLog::is_finalized(const std::string& record_id) const {
  std::lock_guard lock(mutex_);
  const auto it = state_.find(record_id);
  return it != state_.end() && it->second.finalized;
}

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument:
    case ErrorKind::parse:
    case ErrorKind::shape: return 400;
    case ErrorKind::validation: return 422;
    case ErrorKind::not_found: return 404;
    case ErrorKind::duplicate:
    case ErrorKind::conflict: return 409;
    case ErrorKind::unavailable: return 503;
    default: return 500;
  }
}

HttpResponse error_response(ErrorKind kind, const std::string& message) {
  ordered_json j;
  j["error"]["kind"] = std::string(to_string(kind));
  j["error"]["message"] = message;
  return {http_status(kind), "application/json", j.dump()};
}

Service::Service(std::unique_ptr<SuggestEngine> engine,
                 std::shared_ptr<const ConceptGraph> terminology, std::vector<ClinicalRecord> queue,
                 std::filesystem::path log_path, ServiceOptions options)
    : engine_(std::move(engine)),
      terminology_(std::move(terminology)),
      queue_(std::move(queue)),
      options_(options),
      log_(std::move(log_path)) {
  for (std::size_t i = 0; i < queue_.size(); ++i) {
    if (!queue_index_.emplace(queue_[i].record_id, i).second) {
      throw Error(ErrorKind::duplicate, "duplicate record_id '" + queue_[i].record_id + "'");
    }
  }
  if (engine_) inventory_.insert(engine_->bundle().inventory.begin(), engine_->bundle().inventory.end());
  if (terminology_) {
    for (const auto& c : terminology_->concepts()) {
      if (c.active) inventory_.insert(c.code);
    }
  }
}

namespace {

json parse_body(std::string_view body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw Error(ErrorKind::parse, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("invalid JSON body: ") + e.what());
  }
}

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error(ErrorKind::validation, "unknown field '" + key + "'");
    }
  }
}

std::size_t parse_count(const std::string& text, const char* name) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || text.empty() || text[0] == '-') {
    throw Error(ErrorKind::validation, std::string(name) + " must be a nonnegative integer");
  }
  return static_cast<std::size_t>(v);
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

ordered_json record_json(const ClinicalRecord& r, std::span<const Section> fields,
                         const RecordDecisions* decisions) {
  ordered_json j;
  j["record_id"] = r.record_id;
  ordered_json sections = ordered_json::object();
  for (const auto s : kAllSections) {
    if (!r.section(s).empty()) sections[std::string(to_string(s))] = r.section(s);
  }
  j["sections"] = sections;
  j["input"] = build_input(r, fields);
  const bool finalized = decisions && decisions->finalized;
  j["status"] = finalized ? "finalized" : "pending";
  if (finalized) {
    const auto codes = decisions->final_codes();
    j["codes"] = std::vector<std::string>(codes.begin(), codes.end());
  }
  return j;
}

}  // namespace

HttpResponse Service::handle(std::string_view method, std::string_view path,
                             const std::map<std::string, std::string>& query,
                             std::string_view body) {
  try {
    if (path == "/suggest") {
      if (method != "POST") return error_response(ErrorKind::invalid_argument, "use POST /suggest");
      return suggest(body);
    }
    if (path == "/decisions") {
      if (method != "POST") {
        return error_response(ErrorKind::invalid_argument, "use POST /decisions");
      }
      return decide(body);
    }
    if (method != "GET") {
      return error_response(ErrorKind::invalid_argument, "unsupported method " + std::string(method));
    }
    if (path == "/records") return records(query);
    if (path == "/export") return export_coded(query);
    if (path == "/search") return search(query);
    if (path == "/health") return health();
    return error_response(ErrorKind::not_found, "no route " + std::string(path));
  } catch (const Error& e) {
    return error_response(e.kind(), e.what());
  }
}

HttpResponse Service::suggest(std::string_view body) const {
  if (!engine_) throw Error(ErrorKind::unavailable, "no model loaded");
  const auto j = parse_body(body);
  reject_unknown_keys(j, {"text", "top_k", "threshold"});
  if (!j.contains("text") || !j["text"].is_string()) {
    throw Error(ErrorKind::validation, "text must be a string");
  }
  std::size_t top_k = options_.default_top_k;
  if (j.contains("top_k")) {
    if (!j["top_k"].is_number_integer() || j["top_k"].get<std::int64_t>() < 0) {
      throw Error(ErrorKind::validation, "top_k must be a nonnegative integer");
    }
    top_k = j["top_k"].get<std::size_t>();
  }
  double threshold = options_.default_threshold.value_or(engine_->bundle().threshold);
  if (j.contains("threshold")) {
    if (!j["threshold"].is_number()) throw Error(ErrorKind::validation, "threshold must be a number");
    threshold = j["threshold"].get<double>();
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
      throw Error(ErrorKind::validation, "threshold must lie in [0, 1]");
    }
  }
  ordered_json out;
  out["threshold"] = threshold;
  out["suggestions"] = ordered_json::array();
  for (const auto& s : engine_->suggest(j["text"].get<std::string>(), top_k, threshold)) {
    ordered_json item;
    item["code"] = s.code;
    item["term"] = s.term;
    item["probability"] = s.probability;
    item["above_threshold"] = s.above_threshold;
    out["suggestions"].push_back(item);
  }
  return {200, "application/json", out.dump()};
}

HttpResponse Service::records(const std::map<std::string, std::string>& query) const {
  std::string status = "pending";
  if (const auto it = query.find("status"); it != query.end()) status = it->second;
  if (status != "pending" && status != "finalized") {
    throw Error(ErrorKind::validation, "status must be pending or finalized");
  }
  const std::vector<Section> default_fields = {Section::diagnosis, Section::assessment};
  const std::span<const Section> fields =
      engine_ ? std::span<const Section>(engine_->bundle().fields) : default_fields;
  const auto state = log_.state();
  ordered_json out;
  out["status"] = status;
  out["records"] = ordered_json::array();
  if (status == "pending") {
    for (const auto& r : queue_) {
      const auto it = state.find(r.record_id);
      if (it != state.end() && it->second.finalized) continue;
      out["records"].push_back(record_json(r, fields, it == state.end() ? nullptr : &it->second));
    }
  } else {
    for (const auto& [id, decisions] : state) {
      if (!decisions.finalized) continue;
      const auto q = queue_index_.find(id);
      if (q != queue_index_.end()) {
        out["records"].push_back(record_json(queue_[q->second], fields, &decisions));
      } else {
        ClinicalRecord bare;
        bare.record_id = id;
        out["records"].push_back(record_json(bare, fields, &decisions));
      }
    }
  }
  return {200, "application/json", out.dump()};
}

HttpResponse Service::decide(std::string_view body) {
  const auto j = parse_body(body);
  reject_unknown_keys(j, {"record_id", "action", "code", "event_id", "actor", "timestamp_ms"});
  DecisionEvent e;
  try {
    e.event_id = j.at("event_id").get<std::uint64_t>();
    e.record_id = j.at("record_id").get<std::string>();
    e.action = parse_action(j.at("action").get<std::string>());
    if (j.contains("code") && !j["code"].is_null()) e.code = j["code"].get<std::string>();
    e.actor = j.at("actor").get<std::string>();
    e.timestamp_ms = j.contains("timestamp_ms") ? j["timestamp_ms"].get<std::int64_t>() : now_ms();
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::validation, std::string("malformed decision: ") + ex.what());
  }
  if (!j["event_id"].is_number_unsigned()) {
    throw Error(ErrorKind::validation, "event_id must be a nonnegative integer");
  }
  if (!queue_index_.contains(e.record_id) && !log_.state().contains(e.record_id)) {
    throw Error(ErrorKind::not_found, "unknown record '" + e.record_id + "'");
  }
  if ((e.action == Action::accept || e.action == Action::augment) && e.code &&
      !inventory_.contains(*e.code)) {
    throw Error(ErrorKind::validation, "code " + *e.code + " is not in the inventory");
  }
  const auto ack = log_.append(e);
  ordered_json out;
  out["event_id"] = ack.event.event_id;
  out["record_id"] = ack.event.record_id;
  out["duplicate"] = ack.duplicate;
  out["finalized"] = log_.is_finalized(ack.event.record_id);
  return {ack.duplicate ? 200 : 201, "application/json", out.dump()};
}

HttpResponse Service::export_coded(const std::map<std::string, std::string>& query) const {
  std::optional<std::string> from, to;
  if (const auto it = query.find("from"); it != query.end()) from = it->second;
  if (const auto it = query.find("to"); it != query.end()) to = it->second;
  return {200, "application/x-ndjson", export_finalized(log_.state(), from, to)};
}

HttpResponse Service::search(const std::map<std::string, std::string>& query) const {
  if (!terminology_) throw Error(ErrorKind::unavailable, "no terminology loaded");
  std::string q;
  if (const auto it = query.find("q"); it != query.end()) q = it->second;
  std::size_t limit = options_.default_search_limit;
  if (const auto it = query.find("limit"); it != query.end()) limit = parse_count(it->second, "limit");
  ordered_json out;
  out["query"] = q;
  out["results"] = ordered_json::array();
  for (const auto& hit : terminology_->search(q, limit)) {
    ordered_json item;
    item["code"] = hit.code;
    item["term"] = hit.term;
    out["results"].push_back(item);
  }
  return {200, "application/json", out.dump()};
}

HttpResponse Service::health() const {
  ordered_json out;
  out["status"] = "ok";
  out["model_loaded"] = engine_ != nullptr;
  out["terminology_loaded"] = terminology_ != nullptr;
  out["queue"] = queue_.size();
  out["events"] = log_.events().size();
  return {200, "application/json", out.dump()};
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>()) {
  auto route = [&service](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query.emplace(k, v);
    const auto out = service.handle(req.method, req.path, query, req.body);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  const char* any = R"(/.*)";
  impl_->server.Get(any, route);
  impl_->server.Post(any, route);
  impl_->server.Put(any, route);
  impl_->server.Delete(any, route);
  impl_->server.Patch(any, route);
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw Error(ErrorKind::io, fmt::format("cannot listen on {}:{}", host, port));
  return bound;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }
void HttpServer::wait_until_ready() { impl_->server.wait_until_ready(); }

void serve_http(Service& service, const std::string& host, int port) {
  HttpServer server(service);
  server.bind(host, port);
  server.run();
}

}  // namespace vetcode
