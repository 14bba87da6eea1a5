#include <doctest.h>

#include <fstream>
#include <thread>

#include "resectsim/error.hpp"
#include "resectsim/run_store.hpp"
#include "test_util.hpp"

using namespace resectsim;
namespace fs = std::filesystem;

TEST_CASE("event JSON round trip") {
  const Event e{7, 12.5, "cycle_started", {{"cycle", 3}}};
  CHECK(event_from_json(event_to_json(e)) == e);
}

TEST_CASE("in-memory recorder numbers events from 1") {
  RunRecorder rec;
  CHECK_FALSE(rec.persistent());
  CHECK(rec.emit(0.0, "a", Json::object()) == 1);
  CHECK(rec.emit(1.0, "b", Json::object()) == 2);
  CHECK(rec.emit(2.0, "c", Json::object()) == 3);
  CHECK(rec.last_seq() == 3);
  const auto tail = rec.events_after(1);
  REQUIRE(tail.size() == 2);
  CHECK(tail[0].kind == "b");
  rec.close();
  CHECK(rec.closed());
  CHECK_THROWS_AS(rec.emit(3.0, "d", Json::object()), Error);
}

TEST_CASE("waiting readers wake on new events and on close") {
  RunRecorder rec;
  std::thread writer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    rec.emit(0.0, "late", Json::object());
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    rec.close();
  });
  const auto got = rec.wait_events_after(0, std::chrono::seconds(5));
  REQUIRE(got.size() == 1);
  CHECK(got[0].kind == "late");
  const auto none = rec.wait_events_after(1, std::chrono::seconds(5));
  CHECK(none.empty());
  CHECK(rec.closed());
  writer.join();
}

TEST_CASE("persistent log reloads identically") {
  const auto dir = test::temp_dir("store");
  {
    RunRecorder rec(dir);
    rec.write_json("spec.json", {{"seed", 4}});
    rec.emit(0.0, "run_started", Json::object());
    rec.emit(1.5, "cycle_started", {{"cycle", 0}});
    rec.emit(9.0, "run_completed", {{"status", "detached"}});
    rec.close();
  }
  const auto run = load_run(dir);
  REQUIRE(run.events.size() == 3);
  CHECK(run.completed);
  CHECK(run.status == "detached");
  CHECK_FALSE(run.dropped_torn_line);
  CHECK(run.spec.at("seed") == 4);
  CHECK(run.events[1].t_sim_s == 1.5);
  fs::remove_all(dir);
}

TEST_CASE("a torn final line is dropped and the run counts as aborted") {
  const auto dir = test::temp_dir("torn");
  {
    RunRecorder rec(dir);
    rec.emit(0.0, "run_started", Json::object());
    rec.emit(1.0, "cycle_started", {{"cycle", 0}});
  }
  {
    std::ofstream out(dir / "events.jsonl", std::ios::app);
    out << R"({"seq":3,"t_sim_s":2.0,"kind":"cyc)";
  }
  const auto run = load_run(dir);
  CHECK(run.events.size() == 2);
  CHECK(run.dropped_torn_line);
  CHECK_FALSE(run.completed);
  CHECK(run.status == "aborted");
  fs::remove_all(dir);
}

TEST_CASE("corrupt logs are io errors") {
  const auto dir = test::temp_dir("corrupt");
  {
    std::ofstream out(dir / "events.jsonl");
    out << R"({"seq":1,"t_sim_s":0,"kind":"a","payload":{}})" << "\n"
        << R"({"seq":3,"t_sim_s":0,"kind":"b","payload":{}})" << "\n";
  }
  CHECK_THROWS_AS(load_run(dir), Error);
  {
    std::ofstream out(dir / "events.jsonl");
    out << "garbage\n";
  }
  CHECK_THROWS_AS(load_run(dir), Error);
  CHECK_THROWS_AS(load_run(dir / "missing"), Error);
  fs::remove_all(dir);
}

TEST_CASE("artifact paths stay inside the run directory") {
  const fs::path root = "/data/run-1";
  CHECK(artifact_path(root, "plans/cycle_00.json") == root / "plans/cycle_00.json");
  CHECK_THROWS_AS(artifact_path(root, "../other/events.jsonl"), Error);
  CHECK_THROWS_AS(artifact_path(root, "/etc/passwd"), Error);
  CHECK_THROWS_AS(artifact_path(root, "a/../../b"), Error);
  CHECK_THROWS_AS(artifact_path(root, ""), Error);
}

TEST_CASE("artifacts are written below the run directory") {
  const auto dir = test::temp_dir("artifacts");
  RunRecorder rec(dir);
  rec.write_text("notes/a.txt", "hello");
  PointCloud c;
  c.points = {Point3(1, 2, 3)};
  rec.write_cloud("clouds/c.pcd", c);
  CHECK(fs::exists(dir / "notes/a.txt"));
  CHECK(fs::exists(dir / "clouds/c.pcd"));
  CHECK_THROWS_AS(rec.write_text("../escape.txt", "x"), Error);
  rec.close();
  fs::remove_all(dir);
}
