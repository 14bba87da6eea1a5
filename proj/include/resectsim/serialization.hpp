#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "resectsim/geometry.hpp"
#include "resectsim/phantom.hpp"
#include "resectsim/planner.hpp"
#include "resectsim/surface.hpp"

namespace resectsim {

using Json = nlohmann::json;

// Points serialize as {x, y, z}; Eigen types are not found by ADL.
Json point_to_json(const Point3& p);
Point3 point_from_json(const Json& j);

void to_json(Json& j, const BoundingBox2D& b);
void from_json(const Json& j, BoundingBox2D& b);

void to_json(Json& j, const CameraIntrinsics& k);
void from_json(const Json& j, CameraIntrinsics& k);

void to_json(Json& j, const TracheaSpec& s);
void from_json(const Json& j, TracheaSpec& s);
void to_json(Json& j, const TumorSpec& s);
void from_json(const Json& j, TumorSpec& s);
void to_json(Json& j, const PhantomSpec& s);
void from_json(const Json& j, PhantomSpec& s);

void to_json(Json& j, const PolySurface& s);
void from_json(const Json& j, PolySurface& s);

void to_json(Json& j, const CutPlan& plan);
void from_json(const Json& j, CutPlan& plan);

void to_json(Json& j, const PlanConfig& c);
void from_json(const Json& j, PlanConfig& c);

void to_json(Json& j, const CutOutcome& c);

void to_json(Json& j, const FitReport& r);

// Non-finite doubles serialize as null.
Json finite_or_null(double v);

// model_id,degree_x,degree_y,coeff_count,rmse_mm,fit_time_s[,pareto]
void write_fit_csv(std::ostream& out, const std::vector<FitReport>& reports, bool pareto_column);

PhantomSpec load_phantom_spec(const std::string& path);

}  // namespace resectsim
