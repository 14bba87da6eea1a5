#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "resectsim/geometry.hpp"

namespace resectsim {

// Per-axis affine map to [-1, 1]: u = (x - center_x) / scale_x.
struct Normalization {
  double center_x = 0.0;
  double scale_x = 1.0;
  double center_y = 0.0;
  double scale_y = 1.0;
};

struct DomainBox {
  double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
};

// Monomial exponents (i, j) of the basis, in lexicographic order.
std::vector<std::pair<int, int>> poly_basis(int degree_x, int degree_y, std::optional<int> cap = std::nullopt);

// z = sum a_ij u^i v^j over the basis, in normalized coordinates (u, v).
struct PolySurface {
  int degree_x = 0;
  int degree_y = 0;
  std::optional<int> total_degree_cap;
  // (degree_x+1) x (degree_y+1); entries outside the basis are zero.
  Eigen::MatrixXd coefficients;
  Normalization normalization;
  DomainBox domain;

  std::size_t coefficient_count() const;
  std::string model_id() const;
  bool in_domain(double x, double y) const;
  void validate() const;
};

// Horner evaluation; extrapolation outside the domain is permitted.
double evaluate(const PolySurface& surface, double x, double y);

// Least-squares fit via column-pivoted Householder QR on normalized coordinates.
// Throws FitError when underdetermined or rank deficient.
PolySurface fit_poly(const PointCloud& cloud, int degree_x, int degree_y,
                     std::optional<int> cap = std::nullopt);

// The production trachea model: degree 5 with total-degree cap 5 (21 terms).
PolySurface fit_default_surface(const PointCloud& cloud);

double rmse(const PolySurface& surface, const PointCloud& cloud);

std::string model_id_for(int degree_x, int degree_y, std::optional<int> cap = std::nullopt);

struct FitReport {
  std::string model_id;
  int degree_x = 0;
  int degree_y = 0;
  std::optional<int> cap;
  std::size_t coeff_count = 0;
  double rmse = 0.0;
  double fit_time_s = 0.0;
  double condition = 0.0;
  // Set when the fit failed; rmse is then +inf and the report is ignored by
  // pareto_front and select_default.
  std::optional<std::string> error;

  bool ok() const noexcept { return !error.has_value(); }
};

// Fits and times one model; fit time is the median of `timing_runs` fits.
FitReport fit_report(const PointCloud& cloud, int degree_x, int degree_y, std::optional<int> cap = std::nullopt,
                     int timing_runs = 3);

// Uncapped grid 1 <= dx, dy <= max_degree, ordered by (dx, dy).
std::vector<FitReport> sweep_models(const PointCloud& cloud, int max_degree, int timing_runs = 3);

// Non-dominated subset under minimize(rmse, fit_time_s); input order kept.
std::vector<FitReport> pareto_front(const std::vector<FitReport>& reports);

inline constexpr double kDefaultRmseCeiling = 1.0;

// Cheapest Pareto-optimal model with rmse below the ceiling. Ties: fewer
// coefficients, then model id. Throws selection error if none qualifies.
std::string select_default(const std::vector<FitReport>& reports, double rmse_ceiling = kDefaultRmseCeiling);

}  // namespace resectsim
