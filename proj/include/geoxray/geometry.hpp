/**
 * geometry.hpp — metric models, adapted boundary charts, geodesic tracing,
 * and foliation validation.
 *
 * Two coordinate systems per model:
 *  - ambient Cartesian coordinates z (tracing: closed-form Christoffels),
 *  - an adapted chart w = (x, y1, y2) near the working boundary patch, where
 *    x > 0 is the depth past the artificial boundary and y are tangential.
 *
 * Model families:
 *  - euclidean:  flat metric; linear foliation function (validator rejects).
 *  - conformal:  g = e^{2 phi} delta with closed-form Christoffels (oracle
 *                for the finite-difference path).
 *  - lens:       flat ambient metric; the domain boundary is the paraboloid
 *                z3 = kappa |z'|^2 / 2 (strictly convex; a flat boundary
 *                would violate the concavity the method requires); foliation
 *                xtilde = -rho - eps |z|^2 with eps < kappa/2.
 *  - shell:      radial sound speed c(r), metric c^{-2} delta; boundary
 *                sphere r = b; foliation xtilde = r - b. Layer charts sit at
 *                levels tau <= 0 with thickness c_depth.
 */
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "geoxray/common.hpp"
#include "geoxray/grid.hpp"

namespace geoxray {
namespace geometry {

// ============================ metric models ==============================

struct MetricModel {
  enum Family { kEuclidean, kConformal, kLens, kShell };
  enum ShellProfile { kConstantC, kHerglotzInv, kLinearC };

  Family family = kEuclidean;

  // lens parameters
  double kappa = 1.0;   // boundary curvature
  double eps = 0.14;    // foliation bending, must satisfy eps < kappa/2

  // shell parameters
  ShellProfile profile = kConstantC;
  double shell_b = 2.0;   // boundary sphere radius
  double c_lin0 = 1.0, c_slope = 0.0, c_rref = 1.4;  // linear profile

  // conformal parameters: phi = amp * sin(k . z)
  double conf_amp = 0.1;
  Vec3 conf_k{1.0, 2.0, 0.5};

  static MetricModel euclidean();
  static MetricModel conformal(double amp, const Vec3& k);
  static MetricModel lens(double kappa, double eps);
  static MetricModel shell(ShellProfile p, double b);

  bool is_flat() const { return family == kEuclidean || family == kLens; }

  /// Radial sound speed and derivative (shell family only).
  double sound_speed(double r) const;
  double sound_speed_deriv(double r) const;

  /// Conformal factor phi with g = e^{2 phi} delta (conformal/shell).
  double phi(const Vec3& z) const;
  Vec3 grad_phi(const Vec3& z) const;

  /// Ambient metric at z.
  SymMat3 metric(const Vec3& z) const;

  /// Closed-form ambient Christoffels: G[k] is the symmetric matrix
  /// Gamma^k_{ij}. Zero for flat families.
  void christoffel_closed(const Vec3& z, SymMat3 G[3]) const;

  /// Foliation function and boundary defining function (ambient coords).
  /// boundary_rho > 0 strictly inside the domain.
  double xtilde(const Vec3& z) const;
  Vec3 grad_xtilde(const Vec3& z) const;
  double boundary_rho(const Vec3& z) const;
};

/// Christoffel symbols of the ambient metric at z. kCentralDiff differences
/// the metric with step fd_h (default 1e-5); kClosedForm uses the family
/// formulas. Throws domain_error on singular metric.
enum class ChristoffelMethod { kClosedForm, kCentralDiff };
void christoffel(const MetricModel& m, const Vec3& z, SymMat3 G[3],
                 ChristoffelMethod method = ChristoffelMethod::kClosedForm,
                 double fd_h = 1e-5);

// ============================ geodesic traces ============================

struct Geodesic {
  // Samples ordered by parameter t; t is uniform except the two bisected
  // end entries. foot is the index of the launch point (t = 0).
  std::vector<double> t;
  std::vector<Vec3> z;
  std::vector<Vec3> zdot;
  int foot = 0;
  double h_t = 0.0;

  enum Exit { kExitNone = 0, kExitBoundary = 1, kExitSideways = -1 };
  Exit exit_lo = kExitNone;  // t decreasing end
  Exit exit_hi = kExitNone;  // t increasing end

  bool retained() const {
    return exit_lo == kExitBoundary && exit_hi == kExitBoundary;
  }
  int n() const { return (int)t.size(); }
};

struct TraceSpec {
  double h_t = 1e-2;
  double t_max = 60.0;
  double bisect_tol = 1e-8;  // parameter tolerance for the exit crossing
  // inside_level(z) > 0 strictly inside; crossing <= 0 is the good exit
  // surface (bisected). Empty means trace to t_max.
  std::function<double(const Vec3&)> inside_level;
  // hard_stop(z) true => sideways exit (chart box violation); not bisected.
  std::function<bool(const Vec3&)> hard_stop;
  bool both_directions = true;
};

/// RK4 integration of the geodesic equation z'' = -Gamma(z)(z', z') in
/// ambient coordinates, from (z0, v0), both parameter directions.
Geodesic trace_geodesic(const MetricModel& m, const Vec3& z0, const Vec3& v0,
                        const TraceSpec& spec);

/// Kinetic energy g_ij(z) zdot^i zdot^j at a sample (conservation oracle).
double geodesic_energy(const MetricModel& m, const Vec3& z, const Vec3& zdot);

/// Minimum centered second difference of f(z(t)) / h_t^2 over the uniform
/// interior samples. Throws if fewer than 3 uniform samples.
double concavity_margin(const Geodesic& g,
                        const std::function<double(const Vec3&)>& f);

// ============================== charts ===================================

/**
 * RegionChart — an adapted chart carrying the three nested working regions
 * Omega[0] in Omega[1] in Omega[2], realized as masks on one grid.
 * Regions share the artificial boundary {x = 0} and nest by pushing the
 * interior boundary outward: inside(level) <=> rho_region >= -offsets[level].
 *
 * For the lens chart, rho_region is the boundary defining function rho; for
 * shell charts it is (c_depth - x) capped by the tangential patch wall.
 */
struct RegionChart {
  MetricModel model;
  double c_depth = 0.1;    // foliation depth of the chart
  double tau = 0.0;        // shell level (<= 0); lens charts use 0
  std::array<double, 3> offsets{0.0, 0.0, 0.0};
  Grid3 grid;

  // shell patch wall: rho_cap = cap_slope * (cap_radius - |y|)
  double cap_radius = 1.0;
  double cap_slope = 0.4;

  // --- mapping ---
  Vec3 to_ambient(const Vec3& w) const;
  Vec3 to_chart(const Vec3& z) const;
  /// Chart velocity (dx/dt, dy/dt) of an ambient trajectory point.
  Vec3 chart_velocity(const Vec3& z, const Vec3& zdot) const;
  /// Ambient velocity of a chart-frame velocity at chart point w.
  Vec3 ambient_velocity(const Vec3& w, const Vec3& wdot) const;

  /// Pullback metric in chart coordinates (analytic).
  SymMat3 chart_metric(const Vec3& w) const;
  /// Chart-coordinate Christoffels by central differences of chart_metric.
  void chart_christoffel(const Vec3& w, SymMat3 G[3], double fd_h = 1e-5) const;

  // --- region functions ---
  double rho_region(const Vec3& w) const;
  double rho_region_ambient(const Vec3& z) const;
  bool chart_box_violated(const Vec3& z) const;

  // --- masks (built by build_masks) ---
  std::array<std::vector<std::uint8_t>, 3> inside;
  std::array<std::vector<std::uint8_t>, 3> dirichlet;
  std::array<std::vector<std::int64_t>, 3> nodes;  // ascending flat indices

  /// Populate masks; throws domain_error if any region touches the chart
  /// box rim (the box must enclose Omega[2] with one-cell margins).
  void build_masks();

  static RegionChart lens_chart(const MetricModel& m, double c_depth,
                                double b1, double b2, int nx, int ny,
                                double box_pad = 1.25);
  static RegionChart shell_chart(const MetricModel& m, double c_depth,
                                 double tau, double b1, double b2, int nx,
                                 int ny, double patch_halfwidth = 1.15);
};

// ============================ validation ================================

struct ValidationReport {
  bool ok = false;
  double min_margin = 0.0;       // tangential concavity margin over samples
  double herglotz_min = 0.0;     // min of c - r c' (shell family; else +inf)
  double cone_retention = 0.0;   // fraction of cone rays exiting cleanly
  std::string message;
};

/**
 * validate_foliation — checks that the chart supports the layer method:
 *  - tangential rays from region nodes have strictly convex depth profile
 *    (margin >= margin_min > 0),
 *  - shell models satisfy the Herglotz condition c - r c' > 0,
 *  - cone rays (|lambda_tilde| < cone) stay at x >= 0 and exit through the
 *    interior boundary.
 */
ValidationReport validate_foliation(const RegionChart& chart,
                                    double cone = 1.0,
                                    double margin_min = 1e-3,
                                    double h_t = 1e-2,
                                    int node_stride = 3);

/// Concavity normalization alpha: half the minimum (and median) second
/// derivative of x along tangential unit-omega rays from region nodes.
struct AlphaEstimate {
  double min_alpha = 0.0;
  double median_alpha = 0.0;
};
AlphaEstimate measure_alpha(const RegionChart& chart, double h_t = 1e-2,
                            int node_stride = 2);

}  // namespace geometry
}  // namespace geoxray
