#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "resectsim/phantom.hpp"
#include "resectsim/serialization.hpp"

namespace resectsim {

struct Event {
  std::uint64_t seq = 0;  // 1-based, gap-free
  double t_sim_s = 0.0;
  std::string kind;
  Json payload;

  friend bool operator==(const Event&, const Event&) = default;
};

Json event_to_json(const Event& e);
Event event_from_json(const Json& j);

// Append-only event log with artifact storage. With an empty directory the
// recorder keeps everything in memory. Each event is written as one line
// with a single write call, so a killed process leaves only whole lines
// (plus at most one torn tail that readers drop).
class RunRecorder {
 public:
  explicit RunRecorder(std::filesystem::path dir = {});
  ~RunRecorder();
  RunRecorder(const RunRecorder&) = delete;
  RunRecorder& operator=(const RunRecorder&) = delete;

  std::uint64_t emit(double t_sim_s, std::string kind, Json payload);

  bool persistent() const noexcept { return !dir_.empty(); }
  const std::filesystem::path& dir() const noexcept { return dir_; }

  std::vector<Event> events() const;
  std::vector<Event> events_after(std::uint64_t seq) const;
  std::uint64_t last_seq() const;

  // Blocks until an event with seq > `seq` exists, the log is closed, or the
  // timeout passes.
  std::vector<Event> wait_events_after(std::uint64_t seq, std::chrono::milliseconds timeout) const;
  void close();
  bool closed() const;

  void write_text(const std::string& rel, const std::string& content);
  void write_json(const std::string& rel, const Json& j);
  void write_cloud(const std::string& rel, const PointCloud& cloud);
  void write_snapshot(const std::string& rel_stem, const Snapshot& snap);

 private:
  std::filesystem::path dir_;
  int fd_ = -1;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<Event> events_;
  bool closed_ = false;

  std::filesystem::path resolve(const std::string& rel) const;
};

struct LoadedRun {
  std::vector<Event> events;
  bool completed = false;
  std::string status;  // from run_completed, or "aborted"
  bool dropped_torn_line = false;
  Json spec;  // spec.json, null when absent
};

// Reads events.jsonl; a torn final line is dropped, any other malformed
// line is an io error.
LoadedRun load_run(const std::filesystem::path& dir);

// Safe join of an artifact path below the run directory; rejects absolute
// paths and parent traversal.
std::filesystem::path artifact_path(const std::filesystem::path& run_dir, const std::string& rel);

}  // namespace resectsim
