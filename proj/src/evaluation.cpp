#include "resectsim/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace resectsim {

double removal_percent(double initial_volume, double removed_volume) {
  require(initial_volume > 0.0, "initial volume must be positive");
  require(removed_volume >= 0.0, "removed volume must be non-negative");
  return 100.0 * removed_volume / initial_volume;
}

double postcut_rmse(const SceneState& scene, const PolySurface& goal, double clearance) {
  const auto& g = scene.tumor;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    if (!g.occupied(idx) || !g.charred(idx)) continue;
    const Point3 c = g.center(idx);
    const double r = c.z() - (evaluate(goal, c.x(), c.y()) + clearance);
    sum += r * r;
    ++n;
  }
  if (n == 0) fail(ErrorKind::metric_undefined, "post-cut RMSE is undefined without charred voxels");
  return std::sqrt(sum / static_cast<double>(n));
}

double lumen_reopening(const SceneState& scene, double nominal_diameter) {
  require(nominal_diameter > 0.0, "nominal diameter must be positive");
  const auto& g = scene.tumor;
  const auto [nx, ny, nz] = g.dims();
  const double res = g.resolution();
  double worst = 0.0;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      for (int k = nz - 1; k >= 0; --k) {
        if (!g.occupied(g.linear(i, j, k))) continue;
        const Point3 c = g.center(i, j, k);
        const double top = c.z() + 0.5 * res;
        worst = std::max(worst, top - scene.trachea.height(c.x(), c.y()));
        break;
      }
    }
  }
  const double aperture = nominal_diameter - worst;
  return std::clamp(100.0 * aperture / nominal_diameter, 0.0, 100.0);
}

ClassIou summarize_iou(const std::vector<double>& values) {
  ClassIou s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  s.std_defined = true;
  return s;
}

IouStats iou_stats(const std::vector<Event>& events) {
  std::vector<double> trachea, tumor;
  for (const auto& e : events) {
    if (e.kind != "detection") continue;
    const auto& iou = e.payload.at("iou");
    if (iou.contains("trachea") && iou["trachea"].is_number()) trachea.push_back(iou["trachea"].get<double>());
    if (iou.contains("tumor") && iou["tumor"].is_number()) tumor.push_back(iou["tumor"].get<double>());
  }
  return {summarize_iou(trachea), summarize_iou(tumor)};
}

namespace {

Json class_iou_json(const ClassIou& c) {
  return Json{{"mean", c.n ? Json(c.mean) : Json(nullptr)}, {"std", c.std}, {"n", c.n}, {"std_defined", c.std_defined}};
}

ClassIou class_iou_from(const Json& j) {
  ClassIou c;
  c.mean = j.at("mean").is_null() ? 0.0 : j.at("mean").get<double>();
  c.std = j.at("std").get<double>();
  c.n = j.value("n", std::size_t{0});
  c.std_defined = j.value("std_defined", c.n >= 2);
  return c;
}

}  // namespace

Json metrics_to_json(const ProcedureMetrics& m) {
  return Json{{"removal_pct", m.removal_pct},
              {"postcut_rmse_mm", m.postcut_rmse_mm ? Json(*m.postcut_rmse_mm) : Json(nullptr)},
              {"lumen_pct", m.lumen_pct},
              {"perforated", m.perforated},
              {"success", m.success},
              {"iou", {{"trachea", class_iou_json(m.iou.trachea)}, {"tumor", class_iou_json(m.iou.tumor)}}}};
}

ProcedureMetrics metrics_from_json(const Json& j) {
  ProcedureMetrics m;
  m.removal_pct = j.at("removal_pct").get<double>();
  const auto& rmse = j.at("postcut_rmse_mm");
  if (!rmse.is_null()) m.postcut_rmse_mm = rmse.get<double>();
  m.lumen_pct = j.at("lumen_pct").get<double>();
  m.perforated = j.at("perforated").get<bool>();
  m.success = j.at("success").get<bool>();
  m.iou.trachea = class_iou_from(j.at("iou").at("trachea"));
  m.iou.tumor = class_iou_from(j.at("iou").at("tumor"));
  return m;
}

void print_metrics_table(std::ostream& out, const ProcedureMetrics& m) {
  char buf[128];
  auto row = [&](const char* name, const std::string& value) {
    std::snprintf(buf, sizeof buf, "%-22s %s\n", name, value.c_str());
    out << buf;
  };
  auto num = [](double v, const char* unit) {
    char b[64];
    std::snprintf(b, sizeof b, "%.2f %s", v, unit);
    return std::string(b);
  };
  auto iou = [](const ClassIou& c) {
    if (c.n == 0) return std::string("n/a");
    char b[96];
    std::snprintf(b, sizeof b, "%.3f +- %.3f (n=%zu%s)", c.mean, c.std, c.n, c.std_defined ? "" : ", std undefined");
    return std::string(b);
  };
  row("removal", num(m.removal_pct, "%"));
  row("post-cut rmse", m.postcut_rmse_mm ? num(*m.postcut_rmse_mm, "mm") : "undefined");
  row("lumen reopening", num(m.lumen_pct, "%"));
  row("perforated", m.perforated ? "yes" : "no");
  row("success", m.success ? "yes" : "no");
  row("iou trachea", iou(m.iou.trachea));
  row("iou tumor", iou(m.iou.tumor));
}

}  // namespace resectsim
