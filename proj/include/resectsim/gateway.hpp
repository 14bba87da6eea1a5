#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "resectsim/executor.hpp"
#include "resectsim/run_store.hpp"

namespace httplib {
class Server;
}

namespace resectsim {

enum class HandleStatus { created, running, awaiting_decision, completed, aborted };
const char* to_string(HandleStatus s) noexcept;

// Hosts supervised runs below a data directory. At most one run mutates at
// a time; finished runs (including ones from earlier processes) are served
// read-only from their run directories.
class RunService {
 public:
  explicit RunService(std::filesystem::path data_dir);
  ~RunService();
  RunService(const RunService&) = delete;
  RunService& operator=(const RunService&) = delete;

  // Body: {id?, phantom, config?}. Starts the run on its own thread.
  Json create_run(const Json& body);
  Json get_run(const std::string& id) const;
  Json list_runs() const;

  // Events with seq > after_seq. For a live run this waits up to `wait` for
  // new events; `done` is set once the log can no longer grow.
  std::vector<Event> poll_events(const std::string& id, std::uint64_t after_seq, std::chrono::milliseconds wait,
                                 bool& done) const;

  // Message: {request_seq, verdict: approve|reject|boxes, boxes?}.
  Json submit_decision(const std::string& id, const Json& message);

  std::filesystem::path artifact(const std::string& id, const std::string& rel) const;

  // Blocks until the run's thread has finished.
  void wait(const std::string& id);

  const std::filesystem::path& data_dir() const noexcept { return data_; }

 private:
  struct Live {
    std::string id;
    std::unique_ptr<RunRecorder> recorder;
    std::unique_ptr<Supervisor> supervisor;
    ChannelSupervisor* channel = nullptr;  // null under auto-approve
    std::thread thread;
    std::atomic<bool> finished{false};
    std::atomic<int> result{static_cast<int>(RunStatus::running)};
  };

  std::filesystem::path data_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Live>> live_;
  std::uint64_t counter_ = 0;

  std::shared_ptr<Live> find_live(const std::string& id) const;
  std::filesystem::path run_dir(const std::string& id) const;
};

// Validates a run id: 1-64 characters from [A-Za-z0-9_.-], not starting with '.'.
void validate_run_id(const std::string& id);

// HTTP status for an error kind.
int http_status(ErrorKind kind) noexcept;

// Routes: POST /runs, GET /runs, GET /runs/{id}, GET /runs/{id}/events
// (server-sent events, ?from_seq= or Last-Event-ID), POST /runs/{id}/decision,
// GET /runs/{id}/artifacts/{path}.
std::unique_ptr<httplib::Server> make_http_server(RunService& service);

}  // namespace resectsim
