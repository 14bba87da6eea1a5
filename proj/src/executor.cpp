#include "resectsim/executor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "resectsim/pcd.hpp"

namespace fs = std::filesystem;

namespace resectsim {

const char* to_string(FsmState s) noexcept {
  switch (s) {
    case FsmState::reach_in: return "ReachIn";
    case FsmState::resect: return "Resect";
    case FsmState::retract: return "Retract";
  }
  return "?";
}

const char* to_string(FsmEvent e) noexcept {
  switch (e) {
    case FsmEvent::tool_aligned: return "tool_aligned";
    case FsmEvent::cut_complete: return "cut_complete";
    case FsmEvent::retracted: return "retracted";
  }
  return "?";
}

FsmState fsm_step(FsmState state, FsmEvent event) {
  if (state == FsmState::reach_in && event == FsmEvent::tool_aligned) return FsmState::resect;
  if (state == FsmState::resect && event == FsmEvent::cut_complete) return FsmState::retract;
  if (state == FsmState::retract && event == FsmEvent::retracted) return FsmState::reach_in;
  fail(ErrorKind::protocol,
       std::string("illegal transition: ") + to_string(event) + " in state " + to_string(state));
}

const char* to_string(GateVerdict v) noexcept {
  switch (v) {
    case GateVerdict::auto_approved: return "auto_approved";
    case GateVerdict::supervisor_approved: return "supervisor_approved";
    case GateVerdict::supervisor_rejected: return "supervisor_rejected";
    case GateVerdict::replanned: return "replanned";
  }
  return "?";
}

const char* to_string(DecidedBy d) noexcept { return d == DecidedBy::human ? "human" : "system"; }

const char* to_string(RequestKind k) noexcept {
  return k == RequestKind::segmentation_override ? "segmentation_override" : "cut_approval";
}

const char* to_string(DecisionVerdict v) noexcept {
  switch (v) {
    case DecisionVerdict::approve: return "approve";
    case DecisionVerdict::reject: return "reject";
    case DecisionVerdict::boxes: return "boxes";
  }
  return "?";
}

DecisionVerdict decision_verdict_from_string(const std::string& s) {
  if (s == "approve") return DecisionVerdict::approve;
  if (s == "reject") return DecisionVerdict::reject;
  if (s == "boxes") return DecisionVerdict::boxes;
  fail(ErrorKind::protocol, "unknown verdict '" + s + "'");
}

const char* to_string(FaultKind k) noexcept {
  return k == FaultKind::detector_failure ? "detector_failure" : "bbox_shift";
}

const char* to_string(RunStatus s) noexcept {
  switch (s) {
    case RunStatus::running: return "running";
    case RunStatus::detached: return "detached";
    case RunStatus::budget_exhausted: return "budget_exhausted";
    case RunStatus::stations_exhausted: return "stations_exhausted";
    case RunStatus::aborted_by_supervisor: return "aborted_by_supervisor";
    case RunStatus::perforated: return "perforated";
    case RunStatus::segmentation_failed: return "segmentation_failed";
    case RunStatus::aborted: return "aborted";
  }
  return "?";
}

RunStatus run_status_from_string(const std::string& s) {
  for (auto st : {RunStatus::running, RunStatus::detached, RunStatus::budget_exhausted, RunStatus::stations_exhausted,
                  RunStatus::aborted_by_supervisor, RunStatus::perforated, RunStatus::segmentation_failed,
                  RunStatus::aborted})
    if (s == to_string(st)) return st;
  fail(ErrorKind::io, "unknown run status '" + s + "'");
}

Decision ReplaySupervisor::decide(const SupervisionRequest& request) {
  if (next_ >= decisions_.size()) fail(ErrorKind::protocol, "replay has no recorded decision for this request");
  const auto& r = decisions_[next_++];
  if (r.kind != request.kind) fail(ErrorKind::protocol, "replayed decision answers a different request kind");
  return r.decision;
}

Decision ChannelSupervisor::decide(const SupervisionRequest& request) {
  std::unique_lock lock(mu_);
  if (shutdown_) return {DecisionVerdict::reject, {}, DecidedBy::system};
  pending_ = request;
  answer_.reset();
  auto ready = [&] { return answer_.has_value() || shutdown_; };
  if (timeout_) {
    cv_.wait_for(lock, *timeout_, ready);
  } else {
    cv_.wait(lock, ready);
  }
  pending_.reset();
  if (!answer_) return {DecisionVerdict::reject, {}, DecidedBy::system};
  Decision d = std::move(*answer_);
  answer_.reset();
  return d;
}

void ChannelSupervisor::submit(std::uint64_t request_seq, Decision decision) {
  {
    std::lock_guard lock(mu_);
    if (!pending_ || answer_) fail(ErrorKind::conflict, "no supervision request is pending");
    if (pending_->seq != request_seq) {
      fail(ErrorKind::conflict, "stale decision: pending request is seq " + std::to_string(pending_->seq));
    }
    if (decision.verdict == DecisionVerdict::boxes) {
      if (pending_->kind != RequestKind::segmentation_override)
        fail(ErrorKind::protocol, "boxes verdict only answers a segmentation_override request");
      if (decision.boxes.empty()) fail(ErrorKind::protocol, "boxes verdict needs at least one box");
    }
    answer_ = std::move(decision);
  }
  cv_.notify_all();
}

std::optional<SupervisionRequest> ChannelSupervisor::pending() const {
  std::lock_guard lock(mu_);
  if (answer_) return std::nullopt;
  return pending_;
}

void ChannelSupervisor::shutdown() {
  {
    std::lock_guard lock(mu_);
    shutdown_ = true;
  }
  cv_.notify_all();
}

GateDecision gate_check(const CutPlan& predicted, const CutPlan& current, std::size_t index, double threshold,
                        const std::function<Decision(double rmse)>& ask) {
  require(threshold > 0.0, "gate threshold must be positive");
  GateDecision g;
  g.threshold = threshold;
  try {
    g.rmse = plan_consistency_rmse(predicted, current, index);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::comparison) throw;
    g.rmse = std::numeric_limits<double>::infinity();
  }
  if (g.rmse <= threshold) {
    g.verdict = GateVerdict::auto_approved;
    g.decided_by = DecidedBy::system;
    return g;
  }
  const Decision d = ask(g.rmse);
  g.decided_by = d.decided_by;
  g.verdict = d.verdict == DecisionVerdict::approve ? GateVerdict::supervisor_approved : GateVerdict::supervisor_rejected;
  return g;
}

void RunConfig::validate() const {
  if (!(gate_threshold > 0.0)) fail(ErrorKind::config, "gate threshold must be positive");
  if (cut_budget < 0) fail(ErrorKind::config, "cut budget must be >= 0");
  if (image_width < 16 || image_height < 16 || image_width > 4096 || image_height > 4096)
    fail(ErrorKind::config, "image size must lie in [16, 4096]");
  if (!(camera_standoff > 0.0)) fail(ErrorKind::config, "camera standoff must be positive");
  if (!(depth_noise_sigma >= 0.0)) fail(ErrorKind::config, "depth noise must be >= 0");
  if (!(kerf > 0.0)) fail(ErrorKind::config, "kerf must be positive");
  if (!(subtraction_radius > 0.0)) fail(ErrorKind::config, "subtraction radius must be positive");
  if (!(footprint_margin >= 0.0)) fail(ErrorKind::config, "footprint margin must be >= 0");
  if (max_segmentation_attempts < 1) fail(ErrorKind::config, "segmentation attempts must be >= 1");
  if (plan.cut_count < 1) fail(ErrorKind::config, "cut count must be >= 1");
  if (!(plan.speed > 0.0)) fail(ErrorKind::config, "speed must be positive");
  if (!(plan.clearance >= 0.0)) fail(ErrorKind::config, "clearance must be >= 0");
  if (!(plan.pitch_deg > 0.0 && plan.pitch_deg < 90.0)) fail(ErrorKind::config, "pitch must lie in (0, 90)");
  detector.validate();
  for (const auto& f : faults) {
    if (f.cycle < 0) fail(ErrorKind::config, "fault cycle must be >= 0");
    if (f.kind == FaultKind::bbox_shift && !(f.shift_mm > 0.0)) fail(ErrorKind::config, "fault shift must be positive");
  }
}

Json run_config_to_json(const RunConfig& c) {
  Json faults = Json::array();
  for (const auto& f : c.faults) faults.push_back({{"cycle", f.cycle}, {"kind", to_string(f.kind)}, {"shift_mm", f.shift_mm}});
  const auto& d = c.detector;
  return Json{{"seed", c.seed},
              {"gate_threshold_mm", c.gate_threshold},
              {"cut_budget", c.cut_budget},
              {"auto_approve", c.auto_approve},
              {"image_width", c.image_width},
              {"image_height", c.image_height},
              {"camera_standoff_mm", c.camera_standoff},
              {"depth_noise_sigma_mm", c.depth_noise_sigma},
              {"kerf_mm", c.kerf},
              {"subtraction_radius_mm", c.subtraction_radius},
              {"footprint_margin_mm", c.footprint_margin},
              {"max_segmentation_attempts", c.max_segmentation_attempts},
              {"detector",
               {{"score_threshold", d.score_threshold},
                {"jitter_sigma_px", d.jitter_sigma},
                {"score_mean", d.score_mean},
                {"score_sd", d.score_sd},
                {"trachea_failure_prob", d.trachea_failure_prob},
                {"tumor_failure_prob", d.tumor_failure_prob}}},
              {"plan", c.plan},
              {"faults", faults}};
}

namespace {

void reject_unknown_keys(const Json& j, const Json& known, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::config, where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) fail(ErrorKind::config, "unknown key '" + key + "' in " + where);
}

}  // namespace

RunConfig run_config_from_json(const Json& j) {
  const Json known = run_config_to_json(RunConfig{});
  reject_unknown_keys(j, known, "run config");
  if (j.contains("detector")) reject_unknown_keys(j["detector"], known["detector"], "run config detector");
  if (j.contains("plan")) {
    Json plan_keys = known["plan"];
    plan_keys["per_cut_pitch_deg"] = Json::array();
    reject_unknown_keys(j["plan"], plan_keys, "run config plan");
  }
  for (const auto& f : j.value("faults", Json::array()))
    reject_unknown_keys(f, Json{{"cycle", 0}, {"kind", ""}, {"shift_mm", 0}}, "fault");
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.gate_threshold = j.value("gate_threshold_mm", c.gate_threshold);
    c.cut_budget = j.value("cut_budget", c.cut_budget);
    c.auto_approve = j.value("auto_approve", c.auto_approve);
    c.image_width = j.value("image_width", c.image_width);
    c.image_height = j.value("image_height", c.image_height);
    c.camera_standoff = j.value("camera_standoff_mm", c.camera_standoff);
    c.depth_noise_sigma = j.value("depth_noise_sigma_mm", c.depth_noise_sigma);
    c.kerf = j.value("kerf_mm", c.kerf);
    c.subtraction_radius = j.value("subtraction_radius_mm", c.subtraction_radius);
    c.footprint_margin = j.value("footprint_margin_mm", c.footprint_margin);
    c.max_segmentation_attempts = j.value("max_segmentation_attempts", c.max_segmentation_attempts);
    if (j.contains("detector")) {
      const auto& d = j["detector"];
      c.detector.score_threshold = d.value("score_threshold", c.detector.score_threshold);
      c.detector.jitter_sigma = d.value("jitter_sigma_px", c.detector.jitter_sigma);
      c.detector.score_mean = d.value("score_mean", c.detector.score_mean);
      c.detector.score_sd = d.value("score_sd", c.detector.score_sd);
      c.detector.trachea_failure_prob = d.value("trachea_failure_prob", c.detector.trachea_failure_prob);
      c.detector.tumor_failure_prob = d.value("tumor_failure_prob", c.detector.tumor_failure_prob);
    }
    if (j.contains("plan")) c.plan = j["plan"].get<PlanConfig>();
    for (const auto& f : j.value("faults", Json::array())) {
      FaultInjection fi;
      fi.cycle = f.at("cycle").get<int>();
      const auto kind = f.at("kind").get<std::string>();
      if (kind == "detector_failure") {
        fi.kind = FaultKind::detector_failure;
      } else if (kind == "bbox_shift") {
        fi.kind = FaultKind::bbox_shift;
      } else {
        fail(ErrorKind::config, "unknown fault kind '" + kind + "'");
      }
      fi.shift_mm = f.value("shift_mm", fi.shift_mm);
      c.faults.push_back(fi);
    }
  } catch (const Json::exception& e) {
    fail(ErrorKind::config, std::string("invalid run config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

Json gate_to_json(const GateDecision& g) {
  return Json{{"rmse_mm", finite_or_null(g.rmse)},
              {"threshold_mm", g.threshold},
              {"verdict", to_string(g.verdict)},
              {"decided_by", to_string(g.decided_by)}};
}

GateDecision gate_from_json(const Json& j) {
  GateDecision g;
  g.rmse = j.at("rmse_mm").is_null() ? std::numeric_limits<double>::infinity() : j.at("rmse_mm").get<double>();
  g.threshold = j.at("threshold_mm").get<double>();
  const auto v = j.at("verdict").get<std::string>();
  bool found = false;
  for (auto gv : {GateVerdict::auto_approved, GateVerdict::supervisor_approved, GateVerdict::supervisor_rejected,
                  GateVerdict::replanned}) {
    if (v == to_string(gv)) {
      g.verdict = gv;
      found = true;
    }
  }
  if (!found) fail(ErrorKind::io, "unknown gate verdict '" + v + "'");
  g.decided_by = j.at("decided_by").get<std::string>() == "human" ? DecidedBy::human : DecidedBy::system;
  return g;
}

}  // namespace

Json cycle_record_to_json(const CycleRecord& r) {
  Json gates = Json::array();
  for (const auto& g : r.gates) gates.push_back(gate_to_json(g));
  return Json{{"cycle", r.cycle},
              {"attempts", r.attempts},
              {"snapshot_id", r.snapshot_id},
              {"segmentation_id", r.segmentation_id},
              {"surface_id", r.surface_id},
              {"plan_id", r.plan_id},
              {"cut_path", r.cut_path},
              {"predicted_path", r.predicted_path},
              {"segmentation_source", to_string(r.segmentation_source)},
              {"gates", gates},
              {"cut", r.cut},
              {"removed_volume_total_mm3", r.removed_volume_total},
              {"peel_station_mm", r.peel_station},
              {"t_start_s", r.t_start_s},
              {"t_end_s", r.t_end_s},
              {"wall_s", r.wall_s}};
}

CycleRecord cycle_record_from_json(const Json& j) {
  CycleRecord r;
  r.cycle = j.at("cycle").get<int>();
  r.attempts = j.at("attempts").get<int>();
  r.snapshot_id = j.at("snapshot_id").get<std::string>();
  r.segmentation_id = j.at("segmentation_id").get<std::string>();
  r.surface_id = j.at("surface_id").get<std::string>();
  r.plan_id = j.at("plan_id").get<std::string>();
  r.cut_path = j.at("cut_path").get<int>();
  r.predicted_path = j.at("predicted_path").get<int>();
  r.segmentation_source = j.at("segmentation_source").get<std::string>() == "human" ? BoxSource::human
                                                                                     : BoxSource::automatic;
  for (const auto& g : j.at("gates")) r.gates.push_back(gate_from_json(g));
  const auto& c = j.at("cut");
  r.cut.removed_volume = c.at("removed_volume_mm3").get<double>();
  r.cut.perforated = c.at("perforated").get<bool>();
  r.cut.char_voxels_added = c.at("char_voxels_added").get<std::size_t>();
  r.cut.detached = c.at("detached").get<bool>();
  r.cut.detached_volume = c.at("detached_volume_mm3").get<double>();
  r.removed_volume_total = j.at("removed_volume_total_mm3").get<double>();
  r.peel_station = j.at("peel_station_mm").get<double>();
  r.t_start_s = j.at("t_start_s").get<double>();
  r.t_end_s = j.at("t_end_s").get<double>();
  r.wall_s = j.value("wall_s", 0.0);
  return r;
}

bool same_record(const CycleRecord& a, const CycleRecord& b) {
  auto ja = cycle_record_to_json(a);
  auto jb = cycle_record_to_json(b);
  ja.erase("wall_s");
  jb.erase("wall_s");
  return ja == jb;
}

bool same_outcome(const CycleRecord& a, const CycleRecord& b) {
  auto strip = [](const CycleRecord& r) {
    auto j = cycle_record_to_json(r);
    j.erase("wall_s");
    for (auto& g : j["gates"]) g.erase("decided_by");
    return j;
  };
  return strip(a) == strip(b);
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, int cycle, int attempt, int stream) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ static_cast<std::uint64_t>(cycle));
  h = splitmix(h ^ static_cast<std::uint64_t>(attempt));
  return splitmix(h ^ static_cast<std::uint64_t>(stream));
}

std::string tag(int cycle, int attempt) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cycle_%02d_a%d", cycle, attempt);
  return buf;
}

Json boxes_json(const std::vector<BoundingBox2D>& boxes) {
  Json arr = Json::array();
  for (const auto& b : boxes) arr.push_back(b);
  return arr;
}

struct Perception {
  std::string snapshot_id;
  std::string segmentation_id;
  BoxSource source = BoxSource::automatic;
  PointCloud trachea;  // world frame
  PointCloud tumor;    // world frame
};

class Runner {
 public:
  Runner(SceneState& scene, const PhantomSpec& phantom, const RunConfig& cfg, Supervisor& sup, RunRecorder& rec)
      : scene_(scene), phantom_(phantom), cfg_(cfg), sup_(sup), rec_(rec) {}

  RunRecord run() {
    cfg_.validate();
    rec_.write_json("spec.json", Json{{"phantom", phantom_}, {"config", run_config_to_json(cfg_)}});
    emit("run_started", {{"phantom", phantom_},
                         {"config", run_config_to_json(cfg_)},
                         {"initial_volume_mm3", scene_.initial_volume}});
    try {
      loop();
    } catch (const Error& e) {
      out_.status = RunStatus::aborted;
      emit("error", {{"error_kind", to_string(e.kind())}, {"message", e.what()}});
    }
    finish();
    return std::move(out_);
  }

 private:
  SceneState& scene_;
  const PhantomSpec& phantom_;
  const RunConfig& cfg_;
  Supervisor& sup_;
  RunRecorder& rec_;
  RunRecord out_;
  double t_ = 0.0;
  std::optional<FsmState> state_;
  std::optional<CutPlan> predicted_;
  std::optional<PlanFrame> frame_;
  bool perforated_ = false;

  std::uint64_t emit(const std::string& kind, Json payload) { return rec_.emit(t_, kind, std::move(payload)); }

  void transition(std::optional<FsmEvent> event, int cycle) {
    const FsmState next = event ? fsm_step(*state_, *event) : FsmState::reach_in;
    emit("fsm", {{"cycle", cycle},
                 {"from", state_ ? Json(to_string(*state_)) : Json(nullptr)},
                 {"event", event ? Json(to_string(*event)) : Json(nullptr)},
                 {"to", to_string(next)}});
    state_ = next;
    out_.state_trace.push_back(next);
  }

  Decision ask(RequestKind kind, int cycle, Json payload) {
    const auto seq = emit("supervision_request", {{"request_kind", to_string(kind)}, {"cycle", cycle}, {"payload", payload}});
    Decision d = sup_.decide({seq, kind, cycle, payload});
    for (auto& b : d.boxes) {
      b.source = BoxSource::human;
      b.cls_score = 1.0;
      b.validate_within(cfg_.image_width, cfg_.image_height);
    }
    if (d.verdict == DecisionVerdict::boxes && kind != RequestKind::segmentation_override) d.verdict = DecisionVerdict::reject;
    emit("supervision_decision", {{"request_seq", seq},
                                  {"request_kind", to_string(kind)},
                                  {"verdict", to_string(d.verdict)},
                                  {"boxes", boxes_json(d.boxes)},
                                  {"decided_by", to_string(d.decided_by)}});
    return d;
  }

  const FaultInjection* fault_for(int cycle, int attempt) const {
    if (attempt != 0) return nullptr;
    for (const auto& f : cfg_.faults)
      if (f.cycle == cycle) return &f;
    return nullptr;
  }

  void inject(const FaultInjection& f, const Snapshot& snap, std::vector<BoundingBox2D>& boxes) {
    if (f.kind == FaultKind::detector_failure) {
      std::erase_if(boxes, [](const BoundingBox2D& b) { return b.cls == Label::tumor; });
      for (auto& b : boxes) b.cls_score = std::min(b.cls_score, 0.5 * cfg_.detector.score_threshold);
      return;
    }
    double zsum = 0.0;
    std::size_t zn = 0;
    for (int v = 0; v < snap.labels.height; ++v)
      for (int u = 0; u < snap.labels.width; ++u)
        if (snap.labels.at(u, v) == Label::trachea && snap.depth.at(u, v) > 0.0) {
          zsum += snap.depth.at(u, v);
          ++zn;
        }
    const double z = zn ? zsum / static_cast<double>(zn) : cfg_.camera_standoff;
    const double shift = f.shift_mm * snap.intrinsics.fx / z;
    const double w = snap.labels.width;
    for (auto& b : boxes) {
      if (b.cls != Label::trachea) continue;
      b.u_min = std::min(b.u_min + shift, w - 1.0);
      b.u_max = std::min(b.u_max + shift, w);
    }
  }

  std::optional<Perception> perceive(int cycle, int attempt) {
    const auto pose = default_camera_pose(scene_, cfg_.camera_standoff);
    const auto K = default_intrinsics(cfg_.image_width, cfg_.image_height);
    RenderOptions ro;
    ro.noise_sigma = cfg_.depth_noise_sigma;
    ro.noise_seed = stream_seed(cfg_.seed, cycle, attempt, 1);
    const Snapshot snap = render_snapshot(scene_, pose, K, cfg_.image_width, cfg_.image_height, ro);

    Perception p;
    const auto stem = tag(cycle, attempt);
    p.snapshot_id = "snapshots/" + stem;
    rec_.write_snapshot(p.snapshot_id, snap);

    DetectorConfig dc = cfg_.detector;
    dc.seed = stream_seed(cfg_.seed, cycle, attempt, 2);
    auto boxes = detect(snap, dc);
    const FaultInjection* fault = fault_for(cycle, attempt);
    if (fault) inject(*fault, snap, boxes);

    Json gt = Json::array();
    Json iou = Json::object();
    for (Label cls : {Label::trachea, Label::tumor}) {
      const auto truth = ground_truth_box(snap.labels, cls);
      if (!truth) continue;
      gt.push_back(*truth);
      double best = 0.0;
      for (const auto& b : boxes)
        if (b.cls == cls) best = std::max(best, bbox_iou(b, *truth));
      iou[to_string(cls)] = best;
    }
    emit("detection", {{"cycle", cycle},
                       {"attempt", attempt},
                       {"snapshot_id", p.snapshot_id},
                       {"boxes", boxes_json(boxes)},
                       {"gt_boxes", gt},
                       {"iou", iou},
                       {"fault", fault ? Json(to_string(fault->kind)) : Json(nullptr)}});

    const bool has_trachea = std::any_of(boxes.begin(), boxes.end(), [](auto& b) { return b.cls == Label::trachea; });
    const bool has_tumor = std::any_of(boxes.begin(), boxes.end(), [](auto& b) { return b.cls == Label::tumor; });
    const bool low = std::any_of(boxes.begin(), boxes.end(),
                                 [&](auto& b) { return b.cls_score < dc.score_threshold; });
    if (low || !has_trachea || !has_tumor) {
      const Decision d = ask(RequestKind::segmentation_override, cycle,
                             {{"attempt", attempt},
                              {"snapshot_id", p.snapshot_id},
                              {"boxes", boxes_json(boxes)},
                              {"missing_trachea", !has_trachea},
                              {"missing_tumor", !has_tumor},
                              {"low_score", low}});
      if (d.verdict == DecisionVerdict::reject) return std::nullopt;
      if (d.verdict == DecisionVerdict::boxes) {
        for (const auto& hb : d.boxes) std::erase_if(boxes, [&](const BoundingBox2D& b) { return b.cls == hb.cls; });
        boxes.insert(boxes.end(), d.boxes.begin(), d.boxes.end());
      }
    }

    SegmentationResult seg;
    try {
      seg = segment(snap, boxes, cfg_.subtraction_radius, dc.score_threshold);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::segmentation_failed) throw;
      emit("segmentation", {{"cycle", cycle}, {"attempt", attempt}, {"ok", false}, {"message", e.what()}});
      return std::nullopt;
    }
    p.source = seg.source;
    p.trachea = transform_cloud(seg.trachea, snap.pose);
    p.tumor = transform_cloud(seg.tumor, snap.pose);
    p.segmentation_id = "clouds/" + stem;
    rec_.write_cloud(p.segmentation_id + "_trachea.pcd", p.trachea);
    rec_.write_cloud(p.segmentation_id + "_tumor.pcd", p.tumor);
    emit("segmentation", {{"cycle", cycle},
                          {"attempt", attempt},
                          {"ok", true},
                          {"segmentation_id", p.segmentation_id},
                          {"source", to_string(seg.source)},
                          {"needs_human", seg.needs_human},
                          {"boxes", boxes_json(seg.boxes)},
                          {"trachea_points", p.trachea.size()},
                          {"tumor_points", p.tumor.size()}});
    return p;
  }

  void loop() {
    int cuts = 0;
    for (int cycle = 0;; ++cycle) {
      if (cuts >= cfg_.cut_budget) {
        out_.status = RunStatus::budget_exhausted;
        return;
      }
      if (cycle >= cfg_.plan.cut_count) {
        out_.status = RunStatus::stations_exhausted;
        return;
      }
      const auto wall0 = std::chrono::steady_clock::now();
      CycleRecord rec;
      rec.cycle = cycle;
      rec.t_start_s = t_;
      emit("cycle_started", {{"cycle", cycle}});

      std::optional<CutPlan> plan;
      int attempt = 0;
      int failures = 0;
      int rejections = 0;
      for (;; ++attempt) {
        if (failures >= cfg_.max_segmentation_attempts) {
          out_.status = RunStatus::segmentation_failed;
          return;
        }
        auto p = perceive(cycle, attempt);
        if (!p) {
          ++failures;
          continue;
        }
        const auto stem = tag(cycle, attempt);
        PolySurface surface;
        try {
          surface = fit_default_surface(p->trachea);
        } catch (const FitError& e) {
          emit("surface_fit", {{"cycle", cycle}, {"attempt", attempt}, {"ok", false}, {"message", e.what()}});
          ++failures;
          continue;
        }
        const std::string surface_id = "surfaces/" + stem + ".json";
        rec_.write_json(surface_id, surface);
        emit("surface_fit", {{"cycle", cycle},
                             {"attempt", attempt},
                             {"ok", true},
                             {"surface_id", surface_id},
                             {"model_id", surface.model_id()},
                             {"coeff_count", surface.coefficient_count()},
                             {"rmse_mm", rmse(surface, p->trachea)}});

        PlanConfig pc = cfg_.plan;
        pc.x_limit = scene_.trachea.half_width() - cfg_.footprint_margin;
        pc.frame = frame_;
        CutPlan candidate;
        try {
          candidate = plan_cuts(surface, p->tumor, pc);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::planning) throw;
          emit("plan", {{"cycle", cycle}, {"attempt", attempt}, {"ok", false}, {"message", e.what()}});
          ++failures;
          continue;
        }
        const std::string plan_id = "plans/" + stem + ".json";
        rec_.write_json(plan_id, candidate);
        emit("plan", {{"cycle", cycle},
                      {"attempt", attempt},
                      {"ok", true},
                      {"plan_id", plan_id},
                      {"L_mm", candidate.frame.length},
                      {"stations_mm", candidate.stations},
                      {"cut_path", cycle},
                      {"predicted_path", cycle + 1 < cfg_.plan.cut_count ? cycle + 1 : -1}});

        rec.snapshot_id = p->snapshot_id;
        rec.segmentation_id = p->segmentation_id;
        rec.segmentation_source = p->source;
        rec.surface_id = surface_id;
        rec.plan_id = plan_id;

        if (!predicted_) {
          plan = std::move(candidate);
          break;
        }
        GateDecision gate = gate_check(*predicted_, candidate, static_cast<std::size_t>(cycle), cfg_.gate_threshold,
                                       [&](double r) {
                                         return ask(RequestKind::cut_approval, cycle,
                                                    {{"rmse_mm", finite_or_null(r)},
                                                     {"threshold_mm", cfg_.gate_threshold},
                                                     {"plan_id", plan_id},
                                                     {"cut_path", cycle}});
                                       });
        if (gate.verdict == GateVerdict::supervisor_rejected && ++rejections < 2) gate.verdict = GateVerdict::replanned;
        rec.gates.push_back(gate);
        emit("gate", {{"cycle", cycle}, {"attempt", attempt}, {"gate", gate_to_json(gate)}});
        if (gate.approved()) {
          plan = std::move(candidate);
          break;
        }
        if (gate.verdict == GateVerdict::supervisor_rejected) {
          out_.status = RunStatus::aborted_by_supervisor;
          return;
        }
        emit("replan", {{"cycle", cycle}, {"attempt", attempt + 1}});
      }
      rec.attempts = attempt + 1;
      if (!frame_) frame_ = plan->frame;

      const auto& path = plan->paths[static_cast<std::size_t>(cycle)];
      transition(state_ ? std::optional(FsmEvent::retracted) : std::nullopt, cycle);
      t_ += (path.front().position - plan->home).norm() / plan->speed;
      transition(FsmEvent::tool_aligned, cycle);
      const CutOutcome outcome = apply_cut(scene_, path, cfg_.kerf, plan->station_spacing());
      t_ += path_length(path) / plan->speed;
      ++cuts;
      perforated_ = perforated_ || outcome.perforated;
      emit("cut", {{"cycle", cycle}, {"cut_path", cycle}, {"outcome", outcome},
                   {"removed_volume_total_mm3", scene_.removed_volume}});
      transition(FsmEvent::cut_complete, cycle);
      t_ += (plan->home - path.back().position).norm() / plan->speed;
      if (!scene_.detached && !outcome.perforated) {
        scene_ = retract_tumor(std::move(scene_), plan->station_spacing());
        emit("retract", {{"cycle", cycle}, {"peel_station_mm", scene_.peel_station}});
      }
      predicted_ = std::move(plan);

      rec.cut_path = cycle;
      rec.predicted_path = cycle + 1 < cfg_.plan.cut_count ? cycle + 1 : -1;
      rec.cut = outcome;
      rec.removed_volume_total = scene_.removed_volume;
      rec.peel_station = scene_.peel_station;
      rec.t_end_s = t_;
      rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
      emit("cycle_completed", {{"record", cycle_record_to_json(rec)}});
      out_.cycles.push_back(rec);

      if (outcome.perforated) {
        out_.status = RunStatus::perforated;
        return;
      }
      if (scene_.detached) {
        out_.status = RunStatus::detached;
        return;
      }
    }
  }

  void finish() {
    ProcedureMetrics m;
    m.removal_pct = removal_percent(scene_.initial_volume, scene_.removed_volume);
    m.perforated = perforated_;
    m.lumen_pct = lumen_reopening(scene_, 2.0 * scene_.trachea.spec().radius);
    m.success = lumen_success(m.lumen_pct);

    // Goal surface: fit to a clean post-run scan of the trachea, as labeled.
    try {
      const auto pose = default_camera_pose(scene_, cfg_.camera_standoff);
      const auto K = default_intrinsics(cfg_.image_width, cfg_.image_height);
      RenderOptions ro;
      ro.noise_sigma = cfg_.depth_noise_sigma;
      ro.noise_seed = stream_seed(cfg_.seed, -1, 0, 1);
      const Snapshot snap = render_snapshot(scene_, pose, K, cfg_.image_width, cfg_.image_height, ro);
      const auto box = ground_truth_box(snap.labels, Label::trachea);
      if (!box) fail(ErrorKind::segmentation_failed, "post-run scan shows no trachea");
      const PointCloud trachea =
          transform_cloud(project_depth_to_cloud(snap.depth, mask_from_box(snap, *box), snap.intrinsics), pose);
      const PolySurface goal = fit_default_surface(trachea);
      rec_.write_json("surfaces/goal.json", goal);
      m.postcut_rmse_mm = postcut_rmse(scene_, goal, cfg_.plan.clearance);
    } catch (const Error& e) {
      emit("metric_undefined", {{"metric", "postcut_rmse_mm"}, {"message", e.what()}});
    }

    PointCloud voxels;
    voxels.labels.emplace();
    const auto& g = scene_.tumor;
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
      if (!g.occupied(idx)) continue;
      voxels.points.push_back(g.center(idx));
      voxels.labels->push_back(g.charred(idx) ? Label::charred : Label::tumor);
    }
    rec_.write_cloud("final/tumor_voxels.pcd", voxels);

    m.iou = iou_stats(rec_.events());
    out_.metrics = m;
    rec_.write_json("metrics.json", metrics_to_json(m));
    emit("run_completed", {{"status", to_string(out_.status)},
                           {"cuts", out_.cycles.size()},
                           {"initial_volume_mm3", scene_.initial_volume},
                           {"removed_volume_mm3", scene_.removed_volume},
                           {"t_sim_s", t_},
                           {"metrics", metrics_to_json(m)}});
    out_.events = rec_.events();
    rec_.close();
  }
};

}  // namespace

RunRecord run_procedure(SceneState scene, const PhantomSpec& phantom, const RunConfig& config, Supervisor& supervisor,
                        RunRecorder& recorder) {
  return Runner(scene, phantom, config, supervisor, recorder).run();
}

RunRecord run_headless(const PhantomSpec& phantom, const RunConfig& config) {
  AutoApproveSupervisor sup;
  RunRecorder rec;
  return run_procedure(generate_phantom(phantom), phantom, config, sup, rec);
}

std::vector<CycleRecord> cycle_records(const std::vector<Event>& events) {
  std::vector<CycleRecord> out;
  for (const auto& e : events)
    if (e.kind == "cycle_completed") out.push_back(cycle_record_from_json(e.payload.at("record")));
  return out;
}

namespace {

std::pair<PhantomSpec, RunConfig> spec_of(const LoadedRun& run, const fs::path& dir) {
  if (run.spec.is_null()) fail(ErrorKind::not_found, "run has no spec.json: " + dir.string());
  return {run.spec.at("phantom").get<PhantomSpec>(), run_config_from_json(run.spec.at("config"))};
}

}  // namespace

RunRecord replay_run(const fs::path& run_dir) {
  const auto run = load_run(run_dir);
  const auto [phantom, config] = spec_of(run, run_dir);
  std::vector<ReplaySupervisor::Recorded> decisions;
  for (const auto& e : run.events) {
    if (e.kind != "supervision_decision") continue;
    const auto& p = e.payload;
    Decision d;
    d.verdict = decision_verdict_from_string(p.at("verdict").get<std::string>());
    for (const auto& b : p.at("boxes")) d.boxes.push_back(b.get<BoundingBox2D>());
    d.decided_by = p.at("decided_by").get<std::string>() == "human" ? DecidedBy::human : DecidedBy::system;
    const auto kind = p.at("request_kind").get<std::string>() == "segmentation_override"
                          ? RequestKind::segmentation_override
                          : RequestKind::cut_approval;
    decisions.push_back({kind, std::move(d)});
  }
  ReplaySupervisor sup(std::move(decisions));
  RunRecorder rec;
  return run_procedure(generate_phantom(phantom), phantom, config, sup, rec);
}

ProcedureMetrics evaluate_run(const fs::path& run_dir) {
  const auto run = load_run(run_dir);
  if (!run.completed) fail(ErrorKind::metric_undefined, "run did not complete: " + run_dir.string());
  const auto [phantom, config] = spec_of(run, run_dir);
  const auto& done = run.events.back().payload;

  SceneState scene = generate_phantom(phantom);
  auto& g = scene.tumor;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    g.set_occupied(idx, false);
    g.set_charred(idx, false);
  }
  const auto voxels = pcd::read_file(artifact_path(run_dir, "final/tumor_voxels.pcd"));
  const double res = g.resolution();
  for (std::size_t n = 0; n < voxels.size(); ++n) {
    const Point3 q = (voxels.points[n] - g.origin()) / res;
    const int i = static_cast<int>(std::floor(q.x()));
    const int j = static_cast<int>(std::floor(q.y()));
    const int k = static_cast<int>(std::floor(q.z()));
    if (!g.contains(i, j, k)) fail(ErrorKind::io, "final voxel lies outside the phantom grid");
    const auto idx = g.linear(i, j, k);
    g.set_occupied(idx, true);
    g.set_charred(idx, voxels.labels && (*voxels.labels)[n] == Label::charred);
  }

  ProcedureMetrics m;
  m.removal_pct = removal_percent(done.at("initial_volume_mm3").get<double>(), done.at("removed_volume_mm3").get<double>());
  m.perforated = false;
  for (const auto& e : run.events)
    if (e.kind == "cut" && e.payload.at("outcome").at("perforated").get<bool>()) m.perforated = true;
  m.lumen_pct = lumen_reopening(scene, 2.0 * phantom.trachea.radius);
  m.success = lumen_success(m.lumen_pct);
  const auto goal_path = artifact_path(run_dir, "surfaces/goal.json");
  if (fs::exists(goal_path)) {
    std::ifstream in(goal_path);
    const PolySurface goal = Json::parse(in).get<PolySurface>();
    try {
      m.postcut_rmse_mm = postcut_rmse(scene, goal, config.plan.clearance);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::metric_undefined) throw;
    }
  }
  m.iou = iou_stats(run.events);
  return m;
}

}  // namespace resectsim
