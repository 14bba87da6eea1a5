#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "resectsim/evaluation.hpp"
#include "resectsim/phantom.hpp"
#include "resectsim/planner.hpp"
#include "resectsim/run_store.hpp"
#include "resectsim/segmentation.hpp"

namespace resectsim {

enum class FsmState { reach_in, resect, retract };
enum class FsmEvent { tool_aligned, cut_complete, retracted };

const char* to_string(FsmState s) noexcept;
const char* to_string(FsmEvent e) noexcept;

// ReachIn -tool_aligned-> Resect -cut_complete-> Retract -retracted-> ReachIn.
FsmState fsm_step(FsmState state, FsmEvent event);

enum class GateVerdict { auto_approved, supervisor_approved, supervisor_rejected, replanned };
enum class DecidedBy { system, human };

const char* to_string(GateVerdict v) noexcept;
const char* to_string(DecidedBy d) noexcept;

struct GateDecision {
  double rmse = 0.0;  // +inf when the plans were not comparable
  double threshold = 1.0;
  GateVerdict verdict = GateVerdict::auto_approved;
  DecidedBy decided_by = DecidedBy::system;

  bool approved() const noexcept {
    return verdict == GateVerdict::auto_approved || verdict == GateVerdict::supervisor_approved;
  }
};

enum class RequestKind { segmentation_override, cut_approval };
const char* to_string(RequestKind k) noexcept;

struct SupervisionRequest {
  std::uint64_t seq = 0;  // seq of the supervision_request event
  RequestKind kind = RequestKind::cut_approval;
  int cycle = 0;
  Json payload;
};

enum class DecisionVerdict { approve, reject, boxes };
const char* to_string(DecisionVerdict v) noexcept;
DecisionVerdict decision_verdict_from_string(const std::string& s);

struct Decision {
  DecisionVerdict verdict = DecisionVerdict::approve;
  std::vector<BoundingBox2D> boxes;  // for verdict boxes; forced to source human
  DecidedBy decided_by = DecidedBy::human;
};

// Decision channel. decide() blocks the run until a verdict arrives.
class Supervisor {
 public:
  virtual ~Supervisor() = default;
  virtual Decision decide(const SupervisionRequest& request) = 0;
};

// Headless policy: every request is approved immediately by the system.
class AutoApproveSupervisor final : public Supervisor {
 public:
  Decision decide(const SupervisionRequest&) override { return {DecisionVerdict::approve, {}, DecidedBy::system}; }
};

// Answers requests with a callback, e.g. a scripted test operator.
class CallbackSupervisor final : public Supervisor {
 public:
  explicit CallbackSupervisor(std::function<Decision(const SupervisionRequest&)> fn) : fn_(std::move(fn)) {}
  Decision decide(const SupervisionRequest& request) override { return fn_(request); }

 private:
  std::function<Decision(const SupervisionRequest&)> fn_;
};

// Replays recorded decisions in order; a request kind mismatch or running
// out of decisions is a protocol error.
class ReplaySupervisor final : public Supervisor {
 public:
  struct Recorded {
    RequestKind kind;
    Decision decision;
  };
  explicit ReplaySupervisor(std::vector<Recorded> decisions) : decisions_(std::move(decisions)) {}
  Decision decide(const SupervisionRequest& request) override;
  std::size_t remaining() const noexcept { return decisions_.size() - next_; }

 private:
  std::vector<Recorded> decisions_;
  std::size_t next_ = 0;
};

// Cross-thread channel: the run thread blocks in decide() until submit()
// delivers a decision carrying the pending request's seq.
class ChannelSupervisor final : public Supervisor {
 public:
  // With a timeout, an unanswered request resolves as reject.
  explicit ChannelSupervisor(std::optional<std::chrono::milliseconds> timeout = std::nullopt) : timeout_(timeout) {}

  Decision decide(const SupervisionRequest& request) override;
  // Throws conflict when no request is pending or seq does not match.
  void submit(std::uint64_t request_seq, Decision decision);
  std::optional<SupervisionRequest> pending() const;
  // Wakes a blocked decide() with a reject and refuses later requests.
  void shutdown();

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<SupervisionRequest> pending_;
  std::optional<Decision> answer_;
  std::optional<std::chrono::milliseconds> timeout_;
  bool shutdown_ = false;
};

// rmse <= threshold approves automatically; otherwise `ask` is consulted.
// A comparison error counts as rmse = +inf.
GateDecision gate_check(const CutPlan& predicted, const CutPlan& current, std::size_t index, double threshold,
                        const std::function<Decision(double rmse)>& ask);

enum class FaultKind { detector_failure, bbox_shift };
const char* to_string(FaultKind k) noexcept;

// Applied to the first imaging attempt of `cycle` only.
struct FaultInjection {
  int cycle = 0;
  FaultKind kind = FaultKind::bbox_shift;
  double shift_mm = 10.0;  // bbox_shift: trachea box moved along +u by this world distance
};

// Calibrated on seeds 1-20: clean cycles stay below 0.06 mm while a 10 mm
// trachea box shift yields at least 0.18 mm.
inline constexpr double kDefaultGateThreshold = 0.1;

struct RunConfig {
  std::uint64_t seed = 1;
  double gate_threshold = kDefaultGateThreshold;
  int cut_budget = 12;
  bool auto_approve = false;
  int image_width = 256;
  int image_height = 256;
  double camera_standoff = 250.0;
  double depth_noise_sigma = 0.1;
  double kerf = kDefaultKerf;
  double subtraction_radius = kDefaultSubtractionRadius;
  // Sweeps stay this far inside the trachea footprint edge.
  double footprint_margin = 0.5;
  int max_segmentation_attempts = 3;
  DetectorConfig detector;
  PlanConfig plan;
  std::vector<FaultInjection> faults;

  void validate() const;
};

Json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);

enum class RunStatus {
  running,
  detached,
  budget_exhausted,
  stations_exhausted,
  aborted_by_supervisor,
  perforated,
  segmentation_failed,
  aborted,
};
const char* to_string(RunStatus s) noexcept;
RunStatus run_status_from_string(const std::string& s);

struct CycleRecord {
  int cycle = 0;
  int attempts = 1;  // imaging attempts, > 1 after a re-image
  std::string snapshot_id;
  std::string segmentation_id;
  std::string surface_id;
  std::string plan_id;
  int cut_path = 0;        // path i of the plan is cut this cycle
  int predicted_path = -1;  // path i+1, checked by the next cycle's gate; -1 if none
  BoxSource segmentation_source = BoxSource::automatic;
  std::vector<GateDecision> gates;  // empty at cycle 0; last entry approved the cut
  CutOutcome cut;
  double removed_volume_total = 0.0;
  double peel_station = 0.0;
  double t_start_s = 0.0;  // simulated
  double t_end_s = 0.0;
  double wall_s = 0.0;  // wall-clock duration, excluded from replay comparison
};

Json cycle_record_to_json(const CycleRecord& r);
CycleRecord cycle_record_from_json(const Json& j);

// Equality ignoring wall-clock timing.
bool same_record(const CycleRecord& a, const CycleRecord& b);
// Equality ignoring timing and who decided / how the decision was phrased.
bool same_outcome(const CycleRecord& a, const CycleRecord& b);

struct RunRecord {
  RunStatus status = RunStatus::running;
  std::vector<CycleRecord> cycles;
  std::vector<FsmState> state_trace;
  ProcedureMetrics metrics;
  std::vector<Event> events;
};

// Runs the supervised cycle loop to termination. Events and artifacts go to
// `recorder`; the returned record mirrors them.
RunRecord run_procedure(SceneState scene, const PhantomSpec& phantom, const RunConfig& config, Supervisor& supervisor,
                        RunRecorder& recorder);

// Convenience: generate the phantom and run in memory with auto-approval.
RunRecord run_headless(const PhantomSpec& phantom, const RunConfig& config);

// Cycle records stored in a run's event log.
std::vector<CycleRecord> cycle_records(const std::vector<Event>& events);

// Re-executes a recorded run from its spec.json and recorded decisions,
// in memory.
RunRecord replay_run(const std::filesystem::path& run_dir);

// Recomputes metrics from a completed run directory's artifacts.
ProcedureMetrics evaluate_run(const std::filesystem::path& run_dir);

}  // namespace resectsim
