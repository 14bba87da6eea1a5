#include "resectsim/serialization.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace resectsim {

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json point_to_json(const Point3& p) { return Json{{"x", p.x()}, {"y", p.y()}, {"z", p.z()}}; }

Point3 point_from_json(const Json& j) {
  return Point3(j.at("x").get<double>(), j.at("y").get<double>(), j.at("z").get<double>());
}

void to_json(Json& j, const BoundingBox2D& b) {
  j = Json{{"class", to_string(b.cls)}, {"u_min", b.u_min}, {"v_min", b.v_min}, {"u_max", b.u_max},
           {"v_max", b.v_max}, {"cls_score", b.cls_score}, {"source", to_string(b.source)}};
}

void from_json(const Json& j, BoundingBox2D& b) {
  b.cls = label_from_string(j.at("class").get<std::string>());
  b.u_min = j.at("u_min").get<double>();
  b.v_min = j.at("v_min").get<double>();
  b.u_max = j.at("u_max").get<double>();
  b.v_max = j.at("v_max").get<double>();
  b.cls_score = j.value("cls_score", 1.0);
  const auto source = j.value("source", std::string("auto"));
  if (source != "auto" && source != "human") fail(ErrorKind::contract_violation, "box source must be auto or human");
  b.source = source == "human" ? BoxSource::human : BoxSource::automatic;
  b.validate();
}

void to_json(Json& j, const CameraIntrinsics& k) {
  j = Json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}};
}

void from_json(const Json& j, CameraIntrinsics& k) {
  k = {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(), j.at("cy").get<double>()};
}

void to_json(Json& j, const TracheaSpec& s) {
  j = Json{{"radius", s.radius}, {"length", s.length}, {"noise_amp", s.noise_amp}, {"seed", s.seed}};
  if (s.arc_half_angle_deg != TracheaSpec{}.arc_half_angle_deg) j["arc_half_angle_deg"] = s.arc_half_angle_deg;
  if (s.shape == SurfaceShape::flat) j["shape"] = "flat";
}

void from_json(const Json& j, TracheaSpec& s) {
  s = TracheaSpec{};
  s.radius = j.at("radius").get<double>();
  s.length = j.at("length").get<double>();
  s.noise_amp = j.value("noise_amp", s.noise_amp);
  s.seed = j.value("seed", s.seed);
  s.arc_half_angle_deg = j.value("arc_half_angle_deg", s.arc_half_angle_deg);
  const auto shape = j.value("shape", std::string("half_pipe"));
  if (shape != "half_pipe" && shape != "flat") fail(ErrorKind::config, "unknown trachea shape '" + shape + "'");
  s.shape = shape == "flat" ? SurfaceShape::flat : SurfaceShape::half_pipe;
}

void to_json(Json& j, const TumorSpec& s) {
  j = Json{{"station", s.station}, {"diameter", s.diameter}, {"height", s.height},
           {"exp_n", s.exp_n},     {"exp_e", s.exp_e},       {"seed", s.seed}};
  if (s.lobe_amp != 0.0) j["lobe_amp"] = s.lobe_amp;
}

void from_json(const Json& j, TumorSpec& s) {
  s = TumorSpec{};
  s.station = j.at("station").get<double>();
  s.diameter = j.at("diameter").get<double>();
  s.height = j.at("height").get<double>();
  s.exp_n = j.value("exp_n", s.exp_n);
  s.exp_e = j.value("exp_e", s.exp_e);
  s.seed = j.value("seed", s.seed);
  s.lobe_amp = j.value("lobe_amp", s.lobe_amp);
}

void to_json(Json& j, const PhantomSpec& s) {
  j = Json{{"trachea", s.trachea}, {"tumor", s.tumor}, {"resolution", s.resolution}};
}

void from_json(const Json& j, PhantomSpec& s) {
  try {
    s.trachea = j.at("trachea").get<TracheaSpec>();
    s.tumor = j.at("tumor").get<TumorSpec>();
    s.resolution = j.value("resolution", kDefaultResolution);
  } catch (const Json::exception& e) {
    fail(ErrorKind::config, std::string("invalid phantom spec: ") + e.what());
  }
  s.trachea.validate();
  s.tumor.validate();
}

void to_json(Json& j, const PolySurface& s) {
  Json coeffs = Json::array();
  for (const auto& [i, k] : poly_basis(s.degree_x, s.degree_y, s.total_degree_cap))
    coeffs.push_back(Json{{"i", i}, {"j", k}, {"a", s.coefficients(i, k)}});
  j = Json{{"model_id", s.model_id()},
           {"degree_x", s.degree_x},
           {"degree_y", s.degree_y},
           {"total_degree_cap", s.total_degree_cap ? Json(*s.total_degree_cap) : Json(nullptr)},
           {"normalization",
            {{"center_x", s.normalization.center_x},
             {"scale_x", s.normalization.scale_x},
             {"center_y", s.normalization.center_y},
             {"scale_y", s.normalization.scale_y}}},
           {"domain",
            {{"x_min", s.domain.x_min}, {"x_max", s.domain.x_max}, {"y_min", s.domain.y_min}, {"y_max", s.domain.y_max}}},
           {"coefficients", coeffs}};
}

void from_json(const Json& j, PolySurface& s) {
  s.degree_x = j.at("degree_x").get<int>();
  s.degree_y = j.at("degree_y").get<int>();
  const auto& cap = j.at("total_degree_cap");
  s.total_degree_cap = cap.is_null() ? std::nullopt : std::optional<int>(cap.get<int>());
  const auto& n = j.at("normalization");
  s.normalization = {n.at("center_x").get<double>(), n.at("scale_x").get<double>(), n.at("center_y").get<double>(),
                     n.at("scale_y").get<double>()};
  const auto& d = j.at("domain");
  s.domain = {d.at("x_min").get<double>(), d.at("x_max").get<double>(), d.at("y_min").get<double>(),
              d.at("y_max").get<double>()};
  require(s.degree_x >= 0 && s.degree_x <= 10 && s.degree_y >= 0 && s.degree_y <= 10, "surface degrees out of range");
  s.coefficients = Eigen::MatrixXd::Zero(s.degree_x + 1, s.degree_y + 1);
  for (const auto& c : j.at("coefficients")) {
    const int i = c.at("i").get<int>();
    const int k = c.at("j").get<int>();
    require(i >= 0 && i <= s.degree_x && k >= 0 && k <= s.degree_y, "coefficient index out of range");
    s.coefficients(i, k) = c.at("a").get<double>();
  }
  s.validate();
}

void to_json(Json& j, const CutPlan& plan) {
  Json paths = Json::array();
  for (const auto& path : plan.paths) {
    Json p = Json::array();
    for (const auto& wp : path) {
      p.push_back(Json{{"x", wp.position.x()}, {"y", wp.position.y()}, {"z", wp.position.z()},
                       {"t_s", wp.t_s}, {"dir", to_string(wp.dir)}, {"pitch_deg", wp.pitch_deg}});
    }
    paths.push_back(std::move(p));
  }
  j = Json{{"clearance_mm", plan.clearance},
           {"pitch_deg", plan.pitch_deg},
           {"speed_mm_s", plan.speed},
           {"power_w", plan.power_w},
           {"L_mm", plan.frame.length},
           {"y_min_mm", plan.frame.y_min},
           {"x_min_mm", plan.frame.x_min},
           {"x_max_mm", plan.frame.x_max},
           {"stations_mm", plan.stations},
           {"paths", paths},
           {"home", point_to_json(plan.home)}};
}

void from_json(const Json& j, CutPlan& plan) {
  plan = CutPlan{};
  plan.clearance = j.at("clearance_mm").get<double>();
  plan.pitch_deg = j.at("pitch_deg").get<double>();
  plan.speed = j.at("speed_mm_s").get<double>();
  plan.power_w = j.value("power_w", 24.0);
  plan.frame.length = j.at("L_mm").get<double>();
  plan.frame.y_min = j.value("y_min_mm", 0.0);
  plan.frame.x_min = j.value("x_min_mm", 0.0);
  plan.frame.x_max = j.value("x_max_mm", 0.0);
  plan.stations = j.at("stations_mm").get<std::vector<double>>();
  for (const auto& p : j.at("paths")) {
    std::vector<Waypoint> path;
    for (const auto& w : p) {
      Waypoint wp;
      wp.position = Point3(w.at("x").get<double>(), w.at("y").get<double>(), w.at("z").get<double>());
      wp.t_s = w.at("t_s").get<double>();
      const auto dir = w.at("dir").get<std::string>();
      require(dir == "+x" || dir == "-x", "waypoint dir must be +x or -x");
      wp.dir = dir == "+x" ? TravelDir::pos_x : TravelDir::neg_x;
      wp.pitch_deg = w.value("pitch_deg", plan.pitch_deg);
      path.push_back(wp);
    }
    plan.paths.push_back(std::move(path));
  }
  plan.home = point_from_json(j.at("home"));
}

void to_json(Json& j, const PlanConfig& c) {
  j = Json{{"cut_count", c.cut_count},     {"clearance_mm", c.clearance},   {"pitch_deg", c.pitch_deg},
           {"speed_mm_s", c.speed},        {"lateral_margin_mm", c.lateral_margin},
           {"waypoint_spacing_mm", c.waypoint_spacing}, {"power_w", c.power_w}, {"home_lift_mm", c.home_lift}};
  if (!c.per_cut_pitch_deg.empty()) j["per_cut_pitch_deg"] = c.per_cut_pitch_deg;
}

void from_json(const Json& j, PlanConfig& c) {
  c = PlanConfig{};
  c.cut_count = j.value("cut_count", c.cut_count);
  c.clearance = j.value("clearance_mm", c.clearance);
  c.pitch_deg = j.value("pitch_deg", c.pitch_deg);
  c.speed = j.value("speed_mm_s", c.speed);
  c.lateral_margin = j.value("lateral_margin_mm", c.lateral_margin);
  c.waypoint_spacing = j.value("waypoint_spacing_mm", c.waypoint_spacing);
  c.power_w = j.value("power_w", c.power_w);
  c.home_lift = j.value("home_lift_mm", c.home_lift);
  c.per_cut_pitch_deg = j.value("per_cut_pitch_deg", std::vector<double>{});
}

void to_json(Json& j, const CutOutcome& c) {
  j = Json{{"removed_volume_mm3", c.removed_volume}, {"perforated", c.perforated},
           {"char_voxels_added", c.char_voxels_added}, {"detached", c.detached},
           {"detached_volume_mm3", c.detached_volume}};
}

void to_json(Json& j, const FitReport& r) {
  j = Json{{"model_id", r.model_id},   {"degree_x", r.degree_x},
           {"degree_y", r.degree_y},   {"cap", r.cap ? Json(*r.cap) : Json(nullptr)},
           {"coeff_count", r.coeff_count}, {"rmse_mm", finite_or_null(r.rmse)},
           {"fit_time_s", finite_or_null(r.fit_time_s)}, {"condition", finite_or_null(r.condition)}};
  if (r.error) j["error"] = *r.error;
}

void write_fit_csv(std::ostream& out, const std::vector<FitReport>& reports, bool pareto_column) {
  std::vector<bool> on_front(reports.size(), false);
  if (pareto_column && !reports.empty()) {
    const auto front = pareto_front(reports);
    for (std::size_t i = 0; i < reports.size(); ++i)
      for (const auto& f : front)
        if (f.model_id == reports[i].model_id) on_front[i] = true;
  }
  out << "model_id,degree_x,degree_y,coeff_count,rmse_mm,fit_time_s";
  if (pareto_column) out << ",pareto";
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out << r.model_id << ',' << r.degree_x << ',' << r.degree_y << ',' << r.coeff_count << ',';
    if (r.ok()) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g", r.rmse, r.fit_time_s);
      out << buf;
    } else {
      out << "nan,nan";
    }
    if (pareto_column) out << ',' << (on_front[i] ? 1 : 0);
    out << '\n';
  }
}

PhantomSpec load_phantom_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot open phantom spec " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    fail(ErrorKind::config, std::string("phantom spec is not valid JSON: ") + e.what());
  }
  return j.get<PhantomSpec>();
}

}  // namespace resectsim
