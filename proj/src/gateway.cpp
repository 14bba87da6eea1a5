#include "resectsim/gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>

namespace fs = std::filesystem;

namespace resectsim {

const char* to_string(HandleStatus s) noexcept {
  switch (s) {
    case HandleStatus::created: return "created";
    case HandleStatus::running: return "running";
    case HandleStatus::awaiting_decision: return "awaiting_decision";
    case HandleStatus::completed: return "completed";
    case HandleStatus::aborted: return "aborted";
  }
  return "?";
}

void validate_run_id(const std::string& id) {
  bool ok = !id.empty() && id.size() <= 64 && id.front() != '.';
  for (char c : id) ok = ok && (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.');
  if (!ok) fail(ErrorKind::config, "invalid run id '" + id + "'");
}

int http_status(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::contract_violation:
    case ErrorKind::protocol: return 400;
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict: return 409;
    default: return 500;
  }
}

namespace {

HandleStatus finished_status(RunStatus s) {
  return s == RunStatus::aborted || s == RunStatus::aborted_by_supervisor ? HandleStatus::aborted
                                                                          : HandleStatus::completed;
}

std::optional<int> current_cycle(const std::vector<Event>& events) {
  for (auto it = events.rbegin(); it != events.rend(); ++it)
    if (it->kind == "cycle_started") return it->payload.at("cycle").get<int>();
  return std::nullopt;
}

}  // namespace

RunService::RunService(fs::path data_dir) : data_(std::move(data_dir)) {
  std::error_code ec;
  fs::create_directories(data_, ec);
  if (ec) fail(ErrorKind::io, "cannot create data directory " + data_.string() + ": " + ec.message());
}

RunService::~RunService() {
  std::map<std::string, std::shared_ptr<Live>> live;
  {
    std::lock_guard lock(mu_);
    live.swap(live_);
  }
  for (auto& [id, run] : live) {
    if (run->channel) run->channel->shutdown();
    if (run->thread.joinable()) run->thread.join();
  }
}

fs::path RunService::run_dir(const std::string& id) const {
  validate_run_id(id);
  return data_ / id;
}

std::shared_ptr<RunService::Live> RunService::find_live(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = live_.find(id);
  return it == live_.end() ? nullptr : it->second;
}

Json RunService::create_run(const Json& body) {
  if (!body.is_object()) fail(ErrorKind::config, "run request must be a JSON object");
  if (!body.contains("phantom")) fail(ErrorKind::config, "run request needs a phantom spec");
  const PhantomSpec phantom = body.at("phantom").get<PhantomSpec>();
  const RunConfig config = run_config_from_json(body.value("config", Json::object()));
  SceneState scene = generate_phantom(phantom);

  std::lock_guard lock(mu_);
  for (const auto& [other, run] : live_)
    if (!run->finished) fail(ErrorKind::conflict, "run '" + other + "' is still active");

  std::string id;
  if (body.contains("id")) {
    id = body.at("id").get<std::string>();
    validate_run_id(id);
    if (live_.count(id) || fs::exists(data_ / id)) fail(ErrorKind::conflict, "run '" + id + "' already exists");
  } else {
    do {
      char buf[32];
      std::snprintf(buf, sizeof buf, "run-%04llu", static_cast<unsigned long long>(++counter_));
      id = buf;
    } while (live_.count(id) || fs::exists(data_ / id));
  }

  auto run = std::make_shared<Live>();
  run->id = id;
  run->recorder = std::make_unique<RunRecorder>(data_ / id);
  if (config.auto_approve) {
    run->supervisor = std::make_unique<AutoApproveSupervisor>();
  } else {
    auto channel = std::make_unique<ChannelSupervisor>();
    run->channel = channel.get();
    run->supervisor = std::move(channel);
  }
  live_[id] = run;

  Json handle = {{"id", id}, {"status", to_string(HandleStatus::created)}, {"result", nullptr},
                 {"current_cycle", nullptr}, {"pending_request", nullptr}, {"last_seq", 0}};

  Live* r = run.get();
  run->thread = std::thread([r, scene = std::move(scene), phantom, config]() mutable {
    try {
      const auto record = run_procedure(std::move(scene), phantom, config, *r->supervisor, *r->recorder);
      r->result = static_cast<int>(record.status);
    } catch (const std::exception& e) {
      try {
        r->recorder->emit(0.0, "error", {{"message", e.what()}});
      } catch (...) {
      }
      r->result = static_cast<int>(RunStatus::aborted);
      r->recorder->close();
    }
    r->finished = true;
  });
  return handle;
}

Json RunService::get_run(const std::string& id) const {
  if (auto run = find_live(id)) {
    const auto events = run->recorder->events();
    Json h = {{"id", id}, {"last_seq", events.size()}, {"result", nullptr}, {"pending_request", nullptr}};
    const auto cycle = current_cycle(events);
    h["current_cycle"] = cycle ? Json(*cycle) : Json(nullptr);
    if (run->finished) {
      const auto status = static_cast<RunStatus>(run->result.load());
      h["status"] = to_string(finished_status(status));
      h["result"] = to_string(status);
      return h;
    }
    const auto pending = run->channel ? run->channel->pending() : std::nullopt;
    if (pending) {
      h["status"] = to_string(HandleStatus::awaiting_decision);
      h["pending_request"] = {{"seq", pending->seq},
                              {"kind", to_string(pending->kind)},
                              {"cycle", pending->cycle},
                              {"payload", pending->payload}};
    } else {
      h["status"] = to_string(events.empty() ? HandleStatus::created : HandleStatus::running);
    }
    return h;
  }

  const auto dir = run_dir(id);
  if (!fs::exists(dir / "events.jsonl")) fail(ErrorKind::not_found, "unknown run '" + id + "'");
  const auto loaded = load_run(dir);
  const auto cycle = current_cycle(loaded.events);
  const auto status = loaded.completed ? run_status_from_string(loaded.status) : RunStatus::aborted;
  return {{"id", id},
          {"status", to_string(finished_status(status))},
          {"result", to_string(status)},
          {"current_cycle", cycle ? Json(*cycle) : Json(nullptr)},
          {"pending_request", nullptr},
          {"last_seq", loaded.events.size()}};
}

Json RunService::list_runs() const {
  Json out = Json::array();
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(data_))
    if (entry.is_directory() && fs::exists(entry.path() / "events.jsonl")) ids.push_back(entry.path().filename());
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    try {
      out.push_back(get_run(id));
    } catch (const Error&) {
      out.push_back({{"id", id}, {"status", "aborted"}, {"result", nullptr}});
    }
  }
  return out;
}

std::vector<Event> RunService::poll_events(const std::string& id, std::uint64_t after_seq,
                                           std::chrono::milliseconds wait, bool& done) const {
  if (auto run = find_live(id)) {
    auto events = run->recorder->wait_events_after(after_seq, wait);
    done = run->recorder->closed() && after_seq + events.size() >= run->recorder->last_seq();
    return events;
  }
  const auto dir = run_dir(id);
  if (!fs::exists(dir / "events.jsonl")) fail(ErrorKind::not_found, "unknown run '" + id + "'");
  auto loaded = load_run(dir);
  done = true;
  if (after_seq >= loaded.events.size()) return {};
  return {loaded.events.begin() + static_cast<std::ptrdiff_t>(after_seq), loaded.events.end()};
}

Json RunService::submit_decision(const std::string& id, const Json& message) {
  auto run = find_live(id);
  if (!run) {
    if (fs::exists(run_dir(id) / "events.jsonl")) fail(ErrorKind::conflict, "run '" + id + "' is not active");
    fail(ErrorKind::not_found, "unknown run '" + id + "'");
  }
  if (!message.is_object() || !message.contains("request_seq") || !message.contains("verdict"))
    fail(ErrorKind::protocol, "decision needs request_seq and verdict");
  Decision d;
  std::uint64_t seq = 0;
  try {
    seq = message.at("request_seq").get<std::uint64_t>();
    d.verdict = decision_verdict_from_string(message.at("verdict").get<std::string>());
    for (const auto& b : message.value("boxes", Json::array())) {
      auto box = b.get<BoundingBox2D>();
      box.source = BoxSource::human;
      d.boxes.push_back(box);
    }
  } catch (const Json::exception& e) {
    fail(ErrorKind::protocol, std::string("malformed decision: ") + e.what());
  }
  d.decided_by = DecidedBy::human;
  if (run->finished || !run->channel) fail(ErrorKind::conflict, "no supervision request is pending");
  run->channel->submit(seq, std::move(d));
  return {{"accepted", true}, {"request_seq", seq}};
}

fs::path RunService::artifact(const std::string& id, const std::string& rel) const {
  const auto dir = run_dir(id);
  if (!fs::exists(dir)) fail(ErrorKind::not_found, "unknown run '" + id + "'");
  const auto path = artifact_path(dir, rel);
  if (!fs::is_regular_file(path)) fail(ErrorKind::not_found, "no artifact '" + rel + "'");
  return path;
}

void RunService::wait(const std::string& id) {
  auto run = find_live(id);
  if (!run) return;
  if (run->thread.joinable() && run->thread.get_id() != std::this_thread::get_id()) run->thread.join();
}

namespace {

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  res.status = status;
  res.set_content(Json{{"error", kind}, {"message", message}}.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, http_status(e.kind()), to_string(e.kind()), e.what());
  } catch (const Json::exception& e) {
    send_error(res, 400, "protocol", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

Json parse_body(const httplib::Request& req) {
  try {
    return Json::parse(req.body);
  } catch (const Json::exception& e) {
    fail(ErrorKind::protocol, std::string("request body is not valid JSON: ") + e.what());
  }
}

std::string content_type_for(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".json") return "application/json";
  if (ext == ".jsonl") return "application/x-ndjson";
  if (ext == ".pgm") return "image/x-portable-graymap";
  return "text/plain";
}

std::string sse_frame(const Event& e) {
  return "id: " + std::to_string(e.seq) + "\nevent: " + e.kind + "\ndata: " + event_to_json(e).dump() + "\n\n";
}

}  // namespace

std::unique_ptr<httplib::Server> make_http_server(RunService& service) {
  auto server = std::make_unique<httplib::Server>();
  auto& svc = service;

  server->Post("/runs", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const Json handle = svc.create_run(parse_body(req));
      res.status = 201;
      res.set_content(handle.dump(), "application/json");
    });
  });

  server->Get("/runs", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(svc.list_runs().dump(), "application/json"); });
  });

  server->Get(R"(/runs/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(svc.get_run(req.matches[1]).dump(), "application/json"); });
  });

  server->Get(R"(/runs/([^/]+)/events)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      std::uint64_t from = 0;
      try {
        if (req.has_param("from_seq")) {
          from = std::stoull(req.get_param_value("from_seq"));
        } else if (req.has_header("Last-Event-ID")) {
          from = std::stoull(req.get_header_value("Last-Event-ID"));
        }
      } catch (const std::exception&) {
        fail(ErrorKind::protocol, "from_seq must be a non-negative integer");
      }
      bool done = false;
      auto first = svc.poll_events(id, from, std::chrono::milliseconds(0), done);
      auto next = std::make_shared<std::uint64_t>(from);
      auto pending = std::make_shared<std::vector<Event>>(std::move(first));
      auto finished = std::make_shared<bool>(done);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream", [&svc, id, next, pending, finished](std::size_t, httplib::DataSink& sink) {
            if (pending->empty() && !*finished) {
              try {
                *pending = svc.poll_events(id, *next, std::chrono::milliseconds(250), *finished);
              } catch (const std::exception&) {
                sink.done();
                return true;
              }
            }
            for (const auto& e : *pending) {
              const auto frame = sse_frame(e);
              if (!sink.write(frame.data(), frame.size())) return false;
              *next = e.seq;
            }
            pending->clear();
            if (*finished) {
              // Drain anything appended between the last poll and closing.
              bool done_again = false;
              auto rest = svc.poll_events(id, *next, std::chrono::milliseconds(0), done_again);
              for (const auto& e : rest) {
                const auto frame = sse_frame(e);
                if (!sink.write(frame.data(), frame.size())) return false;
                *next = e.seq;
              }
              sink.done();
            }
            return true;
          });
    });
  });

  server->Post(R"(/runs/([^/]+)/decision)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(svc.submit_decision(req.matches[1], parse_body(req)).dump(), "application/json"); });
  });

  server->Get(R"(/runs/([^/]+)/artifacts/(.+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto path = svc.artifact(req.matches[1], req.matches[2]);
      std::ifstream in(path, std::ios::binary);
      if (!in) fail(ErrorKind::not_found, "cannot read artifact");
      std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      res.set_content(std::move(content), content_type_for(path));
    });
  });

  return server;
}

}  // namespace resectsim
