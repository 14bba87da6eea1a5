#include "resectsim/run_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "resectsim/pcd.hpp"

namespace fs = std::filesystem;

namespace resectsim {

Json event_to_json(const Event& e) {
  return Json{{"seq", e.seq}, {"t_sim_s", e.t_sim_s}, {"kind", e.kind}, {"payload", e.payload}};
}

Event event_from_json(const Json& j) {
  Event e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.t_sim_s = j.at("t_sim_s").get<double>();
  e.kind = j.at("kind").get<std::string>();
  e.payload = j.value("payload", Json::object());
  return e;
}

RunRecorder::RunRecorder(fs::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) return;
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) fail(ErrorKind::io, "cannot create run directory " + dir_.string() + ": " + ec.message());
  const auto log = dir_ / "events.jsonl";
  fd_ = ::open(log.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) fail(ErrorKind::io, "cannot open " + log.string() + ": " + std::strerror(errno));
}

RunRecorder::~RunRecorder() {
  if (fd_ >= 0) ::close(fd_);
}

std::uint64_t RunRecorder::emit(double t_sim_s, std::string kind, Json payload) {
  std::unique_lock lock(mu_);
  if (closed_) fail(ErrorKind::protocol, "event log is closed");
  Event e{events_.size() + 1, t_sim_s, std::move(kind), std::move(payload)};
  if (fd_ >= 0) {
    const std::string line = event_to_json(e).dump() + "\n";
    const char* p = line.data();
    std::size_t left = line.size();
    while (left > 0) {
      const ssize_t n = ::write(fd_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(ErrorKind::io, std::string("event log write failed: ") + std::strerror(errno));
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
  }
  events_.push_back(std::move(e));
  const auto seq = events_.back().seq;
  lock.unlock();
  cv_.notify_all();
  return seq;
}

std::vector<Event> RunRecorder::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::vector<Event> RunRecorder::events_after(std::uint64_t seq) const {
  std::lock_guard lock(mu_);
  if (seq >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(seq), events_.end()};
}

std::uint64_t RunRecorder::last_seq() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

std::vector<Event> RunRecorder::wait_events_after(std::uint64_t seq, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return closed_ || events_.size() > seq; });
  if (seq >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(seq), events_.end()};
}

void RunRecorder::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool RunRecorder::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

fs::path artifact_path(const fs::path& run_dir, const std::string& rel) {
  const fs::path p(rel);
  if (rel.empty() || p.is_absolute()) fail(ErrorKind::not_found, "invalid artifact path '" + rel + "'");
  for (const auto& part : p)
    if (part == "..") fail(ErrorKind::not_found, "invalid artifact path '" + rel + "'");
  return run_dir / p;
}

fs::path RunRecorder::resolve(const std::string& rel) const {
  const auto path = artifact_path(dir_, rel);
  fs::create_directories(path.parent_path());
  return path;
}

void RunRecorder::write_text(const std::string& rel, const std::string& content) {
  if (!persistent()) return;
  const auto path = resolve(rel);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + tmp);
    out << content;
    if (!out) fail(ErrorKind::io, "cannot write " + tmp);
  }
  fs::rename(tmp, path);
}

void RunRecorder::write_json(const std::string& rel, const Json& j) { write_text(rel, j.dump(2) + "\n"); }

void RunRecorder::write_cloud(const std::string& rel, const PointCloud& cloud) {
  if (!persistent()) return;
  std::ostringstream out;
  pcd::write(out, cloud);
  write_text(rel, out.str());
}

void RunRecorder::write_snapshot(const std::string& rel_stem, const Snapshot& snap) {
  if (!persistent()) return;
  export_snapshot(snap, resolve(rel_stem));
}

LoadedRun load_run(const fs::path& dir) {
  LoadedRun run;
  const auto log = dir / "events.jsonl";
  std::ifstream in(log, std::ios::binary);
  if (!in) fail(ErrorKind::not_found, "no event log at " + log.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) {
      run.dropped_torn_line = true;
      break;
    }
    const auto line = content.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    Event e;
    try {
      e = event_from_json(Json::parse(line));
    } catch (const Json::exception& ex) {
      fail(ErrorKind::io, "malformed event line in " + log.string() + ": " + ex.what());
    }
    if (e.seq != run.events.size() + 1) fail(ErrorKind::io, "event sequence gap in " + log.string());
    run.events.push_back(std::move(e));
  }

  run.status = "aborted";
  if (!run.events.empty() && run.events.back().kind == "run_completed") {
    run.completed = true;
    run.status = run.events.back().payload.value("status", std::string("completed"));
  }

  const auto spec_path = dir / "spec.json";
  if (fs::exists(spec_path)) {
    std::ifstream sin(spec_path);
    try {
      run.spec = Json::parse(sin);
    } catch (const Json::exception& ex) {
      fail(ErrorKind::io, std::string("malformed spec.json: ") + ex.what());
    }
  }
  return run;
}

}  // namespace resectsim
