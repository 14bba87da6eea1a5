#include "resectsim/surface.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <tuple>

#include <Eigen/QR>

namespace resectsim {

std::vector<std::pair<int, int>> poly_basis(int degree_x, int degree_y, std::optional<int> cap) {
  std::vector<std::pair<int, int>> basis;
  for (int i = 0; i <= degree_x; ++i)
    for (int j = 0; j <= degree_y; ++j)
      if (!cap || i + j <= *cap) basis.emplace_back(i, j);
  return basis;
}

std::string model_id_for(int degree_x, int degree_y, std::optional<int> cap) {
  std::string id = "poly" + std::to_string(degree_x) + std::to_string(degree_y);
  if (cap) id += "_cap" + std::to_string(*cap);
  return id;
}

std::size_t PolySurface::coefficient_count() const {
  return poly_basis(degree_x, degree_y, total_degree_cap).size();
}

std::string PolySurface::model_id() const { return model_id_for(degree_x, degree_y, total_degree_cap); }

bool PolySurface::in_domain(double x, double y) const {
  return x >= domain.x_min && x <= domain.x_max && y >= domain.y_min && y <= domain.y_max;
}

void PolySurface::validate() const {
  require(degree_x >= 0 && degree_y >= 0, "polynomial degrees must be non-negative");
  require(coefficients.rows() == degree_x + 1 && coefficients.cols() == degree_y + 1,
          "coefficient matrix shape does not match degrees");
  require(normalization.scale_x > 0.0 && normalization.scale_y > 0.0, "normalization scales must be positive");
  if (total_degree_cap) {
    for (int i = 0; i <= degree_x; ++i)
      for (int j = 0; j <= degree_y; ++j)
        if (i + j > *total_degree_cap) require(coefficients(i, j) == 0.0, "coefficient outside capped basis");
  }
}

double evaluate(const PolySurface& surface, double x, double y) {
  const auto& n = surface.normalization;
  const double u = (x - n.center_x) / n.scale_x;
  const double v = (y - n.center_y) / n.scale_y;
  const auto& a = surface.coefficients;
  double outer = 0.0;
  for (int i = surface.degree_x; i >= 0; --i) {
    double inner = 0.0;
    for (int j = surface.degree_y; j >= 0; --j) inner = inner * v + a(i, j);
    outer = outer * u + inner;
  }
  return outer;
}

namespace {

Normalization normalization_for(const PointCloud& cloud, DomainBox& domain) {
  domain.x_min = domain.y_min = std::numeric_limits<double>::infinity();
  domain.x_max = domain.y_max = -std::numeric_limits<double>::infinity();
  for (const auto& p : cloud.points) {
    domain.x_min = std::min(domain.x_min, p.x());
    domain.x_max = std::max(domain.x_max, p.x());
    domain.y_min = std::min(domain.y_min, p.y());
    domain.y_max = std::max(domain.y_max, p.y());
  }
  Normalization n;
  n.center_x = 0.5 * (domain.x_min + domain.x_max);
  n.center_y = 0.5 * (domain.y_min + domain.y_max);
  const double hx = 0.5 * (domain.x_max - domain.x_min);
  const double hy = 0.5 * (domain.y_max - domain.y_min);
  n.scale_x = hx > 0.0 ? hx : 1.0;
  n.scale_y = hy > 0.0 ? hy : 1.0;
  return n;
}

}  // namespace

PolySurface fit_poly(const PointCloud& cloud, int degree_x, int degree_y, std::optional<int> cap) {
  require(degree_x >= 1 && degree_x <= 10 && degree_y >= 1 && degree_y <= 10, "polynomial degrees must lie in [1, 10]");
  if (cap) require(*cap >= 1, "total degree cap must be >= 1");
  const auto basis = poly_basis(degree_x, degree_y, cap);
  const std::size_t m = basis.size();
  const std::size_t n = cloud.size();
  if (n < m) {
    throw FitError("underdetermined fit: " + std::to_string(n) + " points for " + std::to_string(m) + " coefficients",
                   m, n);
  }

  PolySurface surface;
  surface.degree_x = degree_x;
  surface.degree_y = degree_y;
  surface.total_degree_cap = cap;
  surface.normalization = normalization_for(cloud, surface.domain);
  const auto& norm = surface.normalization;

  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
  std::vector<double> upow(degree_x + 1), vpow(degree_y + 1);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& p = cloud.points[r];
    const double u = (p.x() - norm.center_x) / norm.scale_x;
    const double v = (p.y() - norm.center_y) / norm.scale_y;
    upow[0] = vpow[0] = 1.0;
    for (int i = 1; i <= degree_x; ++i) upow[i] = upow[i - 1] * u;
    for (int j = 1; j <= degree_y; ++j) vpow[j] = vpow[j - 1] * v;
    for (std::size_t c = 0; c < m; ++c)
      design(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = upow[basis[c].first] * vpow[basis[c].second];
    rhs(static_cast<Eigen::Index>(r)) = p.z();
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < static_cast<Eigen::Index>(m)) {
    throw FitError("rank-deficient fit: rank " + std::to_string(qr.rank()) + " for " + std::to_string(m) +
                       " coefficients over " + std::to_string(n) + " points",
                   m, n);
  }
  const Eigen::VectorXd sol = qr.solve(rhs);

  surface.coefficients = Eigen::MatrixXd::Zero(degree_x + 1, degree_y + 1);
  for (std::size_t c = 0; c < m; ++c) surface.coefficients(basis[c].first, basis[c].second) = sol(static_cast<Eigen::Index>(c));
  return surface;
}

PolySurface fit_default_surface(const PointCloud& cloud) { return fit_poly(cloud, 5, 5, 5); }

double rmse(const PolySurface& surface, const PointCloud& cloud) {
  require(!cloud.empty(), "rmse of an empty cloud is undefined");
  double sum = 0.0;
  for (const auto& p : cloud.points) {
    const double r = p.z() - evaluate(surface, p.x(), p.y());
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(cloud.size()));
}

namespace {

double condition_estimate(const PointCloud& cloud, const PolySurface& s) {
  // Ratio of extreme |R_ii| of a pivoted QR on the design matrix; cheap and
  // monotone with the true 2-norm condition number.
  const auto basis = poly_basis(s.degree_x, s.degree_y, s.total_degree_cap);
  const auto& norm = s.normalization;
  const std::size_t stride = std::max<std::size_t>(1, cloud.size() / 2000);
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < cloud.size(); r += stride) rows.push_back(r);
  if (rows.size() < basis.size()) return std::numeric_limits<double>::infinity();
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(basis.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& p = cloud.points[rows[r]];
    const double u = (p.x() - norm.center_x) / norm.scale_x;
    const double v = (p.y() - norm.center_y) / norm.scale_y;
    for (std::size_t c = 0; c < basis.size(); ++c)
      a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = std::pow(u, basis[c].first) * std::pow(v, basis[c].second);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  const auto diag = qr.matrixQR().diagonal().cwiseAbs();
  const double lo = diag.minCoeff();
  return lo > 0.0 ? diag.maxCoeff() / lo : std::numeric_limits<double>::infinity();
}

}  // namespace

FitReport fit_report(const PointCloud& cloud, int degree_x, int degree_y, std::optional<int> cap, int timing_runs) {
  FitReport report;
  report.model_id = model_id_for(degree_x, degree_y, cap);
  report.degree_x = degree_x;
  report.degree_y = degree_y;
  report.cap = cap;
  report.coeff_count = poly_basis(degree_x, degree_y, cap).size();
  timing_runs = std::max(1, timing_runs);
  try {
    std::vector<double> times;
    PolySurface surface;
    for (int run = 0; run < timing_runs; ++run) {
      const auto t0 = std::chrono::steady_clock::now();
      surface = fit_poly(cloud, degree_x, degree_y, cap);
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
    report.fit_time_s = std::max(times[times.size() / 2], 1e-9);
    report.rmse = rmse(surface, cloud);
    report.condition = condition_estimate(cloud, surface);
  } catch (const Error& e) {
    report.error = e.what();
    report.rmse = std::numeric_limits<double>::infinity();
    report.fit_time_s = std::numeric_limits<double>::infinity();
    report.condition = std::numeric_limits<double>::infinity();
  }
  return report;
}

std::vector<FitReport> sweep_models(const PointCloud& cloud, int max_degree, int timing_runs) {
  require(max_degree >= 1 && max_degree <= 10, "max degree must lie in [1, 10]");
  std::vector<FitReport> reports;
  for (int dx = 1; dx <= max_degree; ++dx)
    for (int dy = 1; dy <= max_degree; ++dy) reports.push_back(fit_report(cloud, dx, dy, std::nullopt, timing_runs));
  return reports;
}

std::vector<FitReport> pareto_front(const std::vector<FitReport>& reports) {
  require(!reports.empty(), "pareto front of an empty report list");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < reports.size(); ++i)
    if (reports[i].ok()) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (reports[a].rmse != reports[b].rmse) return reports[a].rmse < reports[b].rmse;
    return reports[a].fit_time_s < reports[b].fit_time_s;
  });

  // Sweep groups of equal rmse. A member survives iff it has the group's
  // minimum time and that time beats every strictly-more-accurate report.
  std::vector<bool> keep(reports.size(), false);
  double best_prev = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < order.size();) {
    std::size_t end = g;
    while (end < order.size() && reports[order[end]].rmse == reports[order[g]].rmse) ++end;
    const double group_min = reports[order[g]].fit_time_s;
    for (std::size_t k = g; k < end; ++k) {
      const auto& r = reports[order[k]];
      if (r.fit_time_s == group_min && r.fit_time_s < best_prev) keep[order[k]] = true;
    }
    best_prev = std::min(best_prev, group_min);
    g = end;
  }
  std::vector<FitReport> front;
  for (std::size_t i = 0; i < reports.size(); ++i)
    if (keep[i]) front.push_back(reports[i]);
  return front;
}

std::string select_default(const std::vector<FitReport>& reports, double rmse_ceiling) {
  if (reports.empty()) fail(ErrorKind::selection, "no fit reports to select from");
  const auto front = pareto_front(reports);
  const FitReport* best = nullptr;
  for (const auto& r : front) {
    if (!(r.rmse < rmse_ceiling)) continue;
    if (!best) {
      best = &r;
      continue;
    }
    const auto key = [](const FitReport& x) { return std::tie(x.fit_time_s, x.coeff_count, x.model_id); };
    if (key(r) < key(*best)) best = &r;
  }
  if (!best) fail(ErrorKind::selection, "no Pareto-optimal model below the RMSE ceiling; supervisor must choose");
  return best->model_id;
}

}  // namespace resectsim
