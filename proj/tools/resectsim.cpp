// resectsim command-line front end: run, serve, sweep-fit, eval, replay.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "resectsim/evaluation.hpp"
#include "resectsim/executor.hpp"
#include "resectsim/gateway.hpp"
#include "resectsim/pcd.hpp"
#include "resectsim/serialization.hpp"
#include "resectsim/surface.hpp"

// After the Eigen-based headers: <resolv.h> defines a _res macro.
#include <httplib.h>

namespace fs = std::filesystem;
using namespace resectsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitSupervisorAbort = 2;
constexpr int kExitPerforation = 3;
constexpr int kExitConfig = 4;

// Terminal supervisor: shows each request on stderr and reads one line
// "approve", "reject" or "boxes <json array>" from stdin.
class TerminalSupervisor final : public Supervisor {
 public:
  Decision decide(const SupervisionRequest& request) override {
    std::cerr << "\nsupervision request #" << request.seq << " (" << to_string(request.kind) << ", cycle "
              << request.cycle << ")\n"
              << request.payload.dump(2) << "\n";
    for (;;) {
      std::cerr << (request.kind == RequestKind::segmentation_override ? "[approve|reject|boxes <json>] > "
                                                                        : "[approve|reject] > ");
      std::string line;
      if (!std::getline(std::cin, line)) return {DecisionVerdict::reject, {}, DecidedBy::human};
      const auto space = line.find(' ');
      const std::string word = line.substr(0, space);
      try {
        const auto verdict = decision_verdict_from_string(word);
        Decision d{verdict, {}, DecidedBy::human};
        if (verdict == DecisionVerdict::boxes) {
          if (request.kind != RequestKind::segmentation_override || space == std::string::npos)
            fail(ErrorKind::protocol, "boxes need a segmentation request and a JSON array");
          for (const auto& b : Json::parse(line.substr(space + 1))) d.boxes.push_back(b.get<BoundingBox2D>());
        }
        return d;
      } catch (const std::exception& e) {
        std::cerr << "invalid answer: " << e.what() << "\n";
      }
    }
  }
};

int exit_code_for(RunStatus s) {
  switch (s) {
    case RunStatus::detached:
    case RunStatus::budget_exhausted:
    case RunStatus::stations_exhausted: return kExitOk;
    case RunStatus::aborted_by_supervisor: return kExitSupervisorAbort;
    case RunStatus::perforated: return kExitPerforation;
    default: return kExitFailure;
  }
}

FaultInjection parse_fault(const std::string& text) {
  // cycle:kind[:shift_mm]
  FaultInjection f;
  const auto a = text.find(':');
  if (a == std::string::npos) fail(ErrorKind::config, "fault must look like CYCLE:KIND[:SHIFT_MM]");
  const auto b = text.find(':', a + 1);
  try {
    f.cycle = std::stoi(text.substr(0, a));
    if (b != std::string::npos) f.shift_mm = std::stod(text.substr(b + 1));
  } catch (const std::exception&) {
    fail(ErrorKind::config, "bad number in fault '" + text + "'");
  }
  const auto kind = text.substr(a + 1, b == std::string::npos ? std::string::npos : b - a - 1);
  if (kind == "detector_failure") {
    f.kind = FaultKind::detector_failure;
  } else if (kind == "bbox_shift") {
    f.kind = FaultKind::bbox_shift;
  } else {
    fail(ErrorKind::config, "unknown fault kind '" + kind + "'");
  }
  return f;
}

std::string data_dir_default() {
  if (const char* env = std::getenv("RESECTSIM_DATA"); env && *env) return env;
  return "resectsim-data";
}

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Supervised autonomous tumor resection simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run one supervised resection procedure");
  std::string phantom_path, config_path, out_dir;
  std::uint64_t seed = 1;
  bool headless = false, auto_approve = false;
  std::optional<double> gate_threshold;
  std::vector<std::string> faults;
  run->add_option("--phantom", phantom_path, "Phantom spec JSON (default: the seeded phantom for --seed)");
  run->add_option("--config", config_path, "Run config JSON");
  run->add_option("--seed", seed, "Run seed")->default_val(1);
  run->add_flag("--headless", headless, "No interactive supervision; requests are approved immediately");
  run->add_flag("--auto-approve", auto_approve, "Approve every supervision request");
  run->add_option("--gate-threshold", gate_threshold, "Gate RMSE threshold in mm");
  run->add_option("--fault", faults, "Inject a fault: CYCLE:detector_failure or CYCLE:bbox_shift[:MM]");
  run->add_option("--out", out_dir, "Run directory")->required();

  auto* serve = app.add_subcommand("serve", "Serve runs over HTTP with server-sent events");
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string data_dir = data_dir_default();
  serve->add_option("--port", port, "Port")->default_val(8080);
  serve->add_option("--host", host, "Bind address")->default_val("127.0.0.1");
  serve->add_option("--data", data_dir, "Data directory (default: $RESECTSIM_DATA or ./resectsim-data)");

  auto* sweep = app.add_subcommand("sweep-fit", "Fit every polynomial model up to a degree and write a CSV");
  std::string cloud_path, csv_path;
  int max_degree = 10;
  int timing_runs = 3;
  sweep->add_option("--cloud", cloud_path, "Trachea point cloud (PCD)")->required();
  sweep->add_option("--max-degree", max_degree, "Largest per-axis degree")->default_val(10);
  sweep->add_option("--timing-runs", timing_runs, "Fits per model for the median time")->default_val(3);
  sweep->add_option("--out", csv_path, "CSV output path")->required();

  auto* eval = app.add_subcommand("eval", "Recompute metrics for a completed run directory");
  std::string eval_dir;
  eval->add_option("--run", eval_dir, "Run directory")->required();

  auto* replay = app.add_subcommand("replay", "Re-execute a run from its recorded decisions and compare");
  std::string replay_dir;
  replay->add_option("--run", replay_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      const PhantomSpec phantom = phantom_path.empty() ? phantom_for_seed(seed) : load_phantom_spec(phantom_path);
      RunConfig config;
      if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) fail(ErrorKind::config, "cannot open run config " + config_path);
        Json j;
        try {
          j = Json::parse(in);
        } catch (const Json::exception& e) {
          fail(ErrorKind::config, std::string("run config is not valid JSON: ") + e.what());
        }
        config = run_config_from_json(j);
      }
      config.seed = seed;
      config.auto_approve = config.auto_approve || headless || auto_approve;
      if (gate_threshold) config.gate_threshold = *gate_threshold;
      for (const auto& f : faults) config.faults.push_back(parse_fault(f));
      config.validate();
      if (fs::exists(fs::path(out_dir) / "events.jsonl"))
        fail(ErrorKind::config, "run directory already holds a run: " + out_dir);

      SceneState scene = generate_phantom(phantom);
      RunRecorder recorder(out_dir);
      AutoApproveSupervisor automatic;
      TerminalSupervisor terminal;
      Supervisor& supervisor = config.auto_approve ? static_cast<Supervisor&>(automatic) : terminal;
      const auto record = run_procedure(std::move(scene), phantom, config, supervisor, recorder);

      std::cout << "status                 " << to_string(record.status) << "\n"
                << "cuts                   " << record.cycles.size() << "\n";
      if (!record.cycles.empty())
        std::cout << "simulated time         " << record.cycles.back().t_end_s << " s\n";
      print_metrics_table(std::cout, record.metrics);
      return exit_code_for(record.status);
    }

    if (*serve) {
      RunService service(data_dir);
      auto server = make_http_server(service);
      g_server = server.get();
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "serving " << fs::absolute(data_dir).string() << " on http://" << host << ":" << port << "\n";
      if (!server->listen(host, port)) fail(ErrorKind::config, "cannot listen on " + host + ":" + std::to_string(port));
      g_server = nullptr;
      return kExitOk;
    }

    if (*sweep) {
      if (max_degree < 0 || max_degree > 10) fail(ErrorKind::config, "--max-degree must lie in [0, 10]");
      if (timing_runs < 1) fail(ErrorKind::config, "--timing-runs must be >= 1");
      const PointCloud cloud = pcd::read_file(cloud_path);
      const auto reports = sweep_models(cloud, max_degree, timing_runs);
      std::ofstream out(csv_path);
      if (!out) fail(ErrorKind::io, "cannot write " + csv_path);
      write_fit_csv(out, reports, true);
      std::cout << "models " << reports.size() << ", pareto front " << pareto_front(reports).size() << "\n";
      try {
        std::cout << "default model " << select_default(reports) << "\n";
      } catch (const Error& e) {
        std::cout << "no default model: " << e.what() << "\n";
      }
      return kExitOk;
    }

    if (*eval) {
      const auto metrics = evaluate_run(eval_dir);
      print_metrics_table(std::cout, metrics);
      std::ofstream out(fs::path(eval_dir) / "metrics.json");
      if (!out) fail(ErrorKind::io, "cannot write metrics.json");
      out << metrics_to_json(metrics).dump(2) << "\n";
      return kExitOk;
    }

    if (*replay) {
      const auto recorded = cycle_records(load_run(replay_dir).events);
      const auto replayed = replay_run(replay_dir);
      bool same = recorded.size() == replayed.cycles.size();
      for (std::size_t i = 0; same && i < recorded.size(); ++i) same = same_record(recorded[i], replayed.cycles[i]);
      std::cout << "recorded cycles " << recorded.size() << ", replayed " << replayed.cycles.size() << ": "
                << (same ? "identical" : "DIFFERENT") << "\n";
      return same ? kExitOk : kExitFailure;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return e.kind() == ErrorKind::config ? kExitConfig : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
