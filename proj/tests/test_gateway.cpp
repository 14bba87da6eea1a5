#include <doctest.h>

#include <future>
#include <sstream>
#include <thread>

#include "resectsim/error.hpp"
#include "resectsim/gateway.hpp"
#include "resectsim/serialization.hpp"
#include "test_util.hpp"

// After the Eigen-based headers: <resolv.h> defines a _res macro.
#include <httplib.h>

using namespace resectsim;
namespace fs = std::filesystem;

namespace {

Json run_body(std::uint64_t seed, bool auto_approve, Json faults = Json::array()) {
  return {{"phantom", Json(phantom_for_seed(seed))},
          {"config", {{"seed", seed}, {"auto_approve", auto_approve}, {"faults", faults}}}};
}

Json wait_for_status(const RunService& svc, const std::string& id, const std::string& status) {
  for (int i = 0; i < 2000; ++i) {
    auto h = svc.get_run(id);
    if (h.at("status") == status) return h;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  FAIL("run " << id << " never reached " << status);
  return {};
}

struct ParsedSse {
  std::vector<std::uint64_t> ids;
  std::vector<std::string> kinds;
};

ParsedSse parse_sse(const std::string& body) {
  ParsedSse out;
  std::istringstream in(body);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("id: ", 0) == 0) out.ids.push_back(std::stoull(line.substr(4)));
    if (line.rfind("event: ", 0) == 0) out.kinds.push_back(line.substr(7));
  }
  return out;
}

struct Server {
  RunService& svc;
  std::unique_ptr<httplib::Server> http;
  int port = 0;
  std::thread thread;

  explicit Server(RunService& s) : svc(s), http(make_http_server(s)) {
    port = http->bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { http->listen_after_bind(); });
    http->wait_until_ready();
  }
  ~Server() {
    http->stop();
    thread.join();
  }
};

}  // namespace

TEST_CASE("run ids are validated") {
  CHECK_NOTHROW(validate_run_id("run-0001"));
  CHECK_NOTHROW(validate_run_id("A_b.c-9"));
  CHECK_THROWS_AS(validate_run_id(""), Error);
  CHECK_THROWS_AS(validate_run_id(".hidden"), Error);
  CHECK_THROWS_AS(validate_run_id("a/b"), Error);
  CHECK_THROWS_AS(validate_run_id(std::string(65, 'a')), Error);
}

TEST_CASE("error kinds map to HTTP statuses") {
  CHECK(http_status(ErrorKind::config) == 400);
  CHECK(http_status(ErrorKind::protocol) == 400);
  CHECK(http_status(ErrorKind::not_found) == 404);
  CHECK(http_status(ErrorKind::conflict) == 409);
  CHECK(http_status(ErrorKind::io) == 500);
}

TEST_CASE("auto-approved run completes and stays readable from disk") {
  const auto dir = test::temp_dir("gw-auto");
  {
    RunService svc(dir);
    const auto h = svc.create_run(run_body(2, true));
    CHECK(h.at("id") == "run-0001");
    CHECK(h.at("status") == "created");
    svc.wait("run-0001");
    const auto done = svc.get_run("run-0001");
    CHECK(done.at("status") == "completed");
    CHECK(done.at("result") == "detached");
    CHECK(fs::exists(svc.artifact("run-0001", "metrics.json")));
    CHECK_THROWS_AS(svc.artifact("run-0001", "../x"), Error);
  }
  RunService again(dir);
  const auto h = again.get_run("run-0001");
  CHECK(h.at("status") == "completed");
  CHECK(h.at("result") == "detached");
  CHECK(again.list_runs().size() == 1);
  bool done = false;
  const auto events = again.poll_events("run-0001", 0, std::chrono::milliseconds(0), done);
  CHECK(done);
  CHECK(events.back().kind == "run_completed");
  CHECK_THROWS_AS(again.get_run("nope"), Error);
  fs::remove_all(dir);
}

TEST_CASE("duplicate ids and concurrent runs conflict") {
  const auto dir = test::temp_dir("gw-conflict");
  RunService svc(dir);
  auto body = run_body(1, false, Json::array({{{"cycle", 0}, {"kind", "detector_failure"}}}));
  body["id"] = "alpha";
  svc.create_run(body);
  wait_for_status(svc, "alpha", "awaiting_decision");
  try {
    svc.create_run(run_body(3, true));
    FAIL("expected conflict");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::conflict);
  }
  const auto pending = svc.get_run("alpha").at("pending_request");
  svc.submit_decision("alpha", {{"request_seq", pending.at("seq")}, {"verdict", "reject"}});
  svc.wait("alpha");
  try {
    svc.create_run(body);
    FAIL("expected conflict");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::conflict);
  }
  CHECK_THROWS_AS(svc.create_run(Json{{"config", Json::object()}}), Error);
  fs::remove_all(dir);
}

TEST_CASE("decisions must name the pending request and apply exactly once") {
  const auto dir = test::temp_dir("gw-decide");
  RunService svc(dir);
  svc.create_run(run_body(1, false, Json::array({{{"cycle", 1}, {"kind", "detector_failure"}}})));
  const auto h = wait_for_status(svc, "run-0001", "awaiting_decision");
  const auto req = h.at("pending_request");
  CHECK(req.at("kind") == "segmentation_override");
  CHECK(req.at("cycle") == 1);
  const auto seq = req.at("seq").get<std::uint64_t>();

  try {
    svc.submit_decision("run-0001", {{"request_seq", seq - 1}, {"verdict", "approve"}});
    FAIL("stale seq accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::conflict);
  }
  CHECK_THROWS_AS(svc.submit_decision("run-0001", {{"request_seq", seq}, {"verdict", "maybe"}}), Error);

  std::vector<std::future<bool>> racers;
  for (int i = 0; i < 4; ++i)
    racers.push_back(std::async(std::launch::async, [&] {
      try {
        svc.submit_decision("run-0001", {{"request_seq", seq}, {"verdict", "reject"}});
        return true;
      } catch (const Error&) {
        return false;
      }
    }));
  int accepted = 0;
  for (auto& f : racers) accepted += f.get() ? 1 : 0;
  CHECK(accepted == 1);

  svc.wait("run-0001");
  CHECK(svc.get_run("run-0001").at("result") == "detached");
  bool done = false;
  int decisions = 0;
  for (const auto& e : svc.poll_events("run-0001", 0, std::chrono::milliseconds(0), done))
    if (e.kind == "supervision_decision") ++decisions;
  CHECK(decisions == 1);
  fs::remove_all(dir);
}

TEST_CASE("HTTP routes and concurrent SSE subscribers") {
  const auto dir = test::temp_dir("gw-http");
  RunService svc(dir);
  Server server(svc);
  httplib::Client client("127.0.0.1", server.port);
  client.set_read_timeout(120, 0);

  auto created = client.Post("/runs", run_body(4, true).dump(), "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto id = Json::parse(created->body).at("id").get<std::string>();

  auto subscribe = [&](std::uint64_t from) {
    httplib::Client c("127.0.0.1", server.port);
    c.set_read_timeout(120, 0);
    auto res = c.Get("/runs/" + id + "/events?from_seq=" + std::to_string(from));
    return res ? res->body : std::string();
  };
  auto a = std::async(std::launch::async, subscribe, 0);
  auto b = std::async(std::launch::async, subscribe, 0);
  const auto sa = parse_sse(a.get());
  const auto sb = parse_sse(b.get());
  svc.wait(id);

  REQUIRE(!sa.ids.empty());
  CHECK(sa.ids == sb.ids);
  CHECK(sa.kinds == sb.kinds);
  for (std::size_t i = 0; i < sa.ids.size(); ++i) CHECK(sa.ids[i] == i + 1);
  CHECK(sa.kinds.front() == "run_started");
  CHECK(sa.kinds.back() == "run_completed");
  CHECK(sa.ids.size() == load_run(dir / id).events.size());

  const auto resumed = parse_sse(subscribe(10));
  REQUIRE(!resumed.ids.empty());
  CHECK(resumed.ids.front() == 11);
  CHECK(resumed.ids.back() == sa.ids.back());

  httplib::Headers last_id{{"Last-Event-ID", "20"}};
  auto res = client.Get("/runs/" + id + "/events", last_id);
  REQUIRE(res);
  CHECK(parse_sse(res->body).ids.front() == 21);

  res = client.Get("/runs/" + id);
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(Json::parse(res->body).at("status") == "completed");
  res = client.Get("/runs");
  REQUIRE(res);
  CHECK(Json::parse(res->body).size() == 1);
  res = client.Get("/runs/" + id + "/artifacts/surfaces/goal.json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(Json::parse(res->body).at("model_id") == "poly55_cap5");
  res = client.Get("/runs/" + id + "/artifacts/..%2F..%2Fetc%2Fpasswd");
  REQUIRE(res);
  CHECK(res->status >= 400);
  res = client.Get("/runs/missing");
  REQUIRE(res);
  CHECK(res->status == 404);
  res = client.Post("/runs", "{not json", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  res = client.Post("/runs/" + id + "/decision", R"({"request_seq": 1, "verdict": "approve"})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 409);
  fs::remove_all(dir);
}
