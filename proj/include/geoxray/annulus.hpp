/**
 * annulus.hpp — local left inversion on the annulus between two nesting
 * levels from fundamental-theorem line integrals.
 *
 * If h = d_F v with v vanishing on the deeper interior boundary of the outer
 * level, then along any unit of an affinely parametrized geodesic
 *
 *   d/dt [ e^{F/x} <v_F, gammadot^{m-1}> ] = e^{F/x} <h_F, gammadot^m>,
 *
 * so shooting a ray from an annulus node down to the exit surface (where the
 * anchor value vanishes) and integrating the right-hand side recovers the
 * pairing of v at the node with the launch direction:
 *
 *   <v_F(node), D^{m-1}> = - int_0^T e^{F (1/x(t) - 1/x0)} <h_F, gd^m> dt.
 *
 * Depth increases monotonically along every family ray, so the exponential
 * weights never exceed one.  Launch chart velocities (beta_k x0, cos phi_k,
 * sin phi_k) make the frame direction matrix (beta_k, cos phi_k, sin phi_k)
 * / x0 a fixed, well-conditioned matrix independent of the node depth; with
 * more directions than unknowns the least-squares residual doubles as a
 * per-node consistency diagnostic (it vanishes when h really is a conjugated
 * potential derivative).
 */
#pragma once

#include <cstdint>
#include <vector>

#include "geoxray/fields.hpp"
#include "geoxray/geometry.hpp"

namespace geoxray::annulus {

/// One quadrature sample of a traced family ray (chart coordinates).
struct RaySample {
  Vec3 w;       // chart point
  Vec3 wdot;    // chart velocity
  double t;     // trace parameter (0 at the node)
  double qw;    // closed quadrature weight
};

/// One ray of the family: node at samples.front(), exit at samples.back().
struct NodeRay {
  Vec3 launch;                     // chart launch velocity at the node
  std::vector<RaySample> samples;  // ordered by t, depth strictly increasing
};

struct FamilyOptions {
  int n_dirs = 4;        // directions per node (>= 3, redundancy welcome)
  double beta0 = 0.4;    // depth slope of the first launch, xdot = beta * x0
  double dbeta = 0.4;    // depth slope increment between directions
  double phase = 0.0;    // angular offset of the tangential fan
  double h_t = 5e-3;     // trace step
  double t_max = 10.0;   // trace budget per ray
  double bisect_tol = 1e-10;  // exit-crossing bisection tolerance
  double cond_cap = 50.0;     // direction-matrix condition number cap
};

/// Traced rays from every annulus node of a chart.  The annulus of
/// exit_level consists of the nodes inside level exit_level but outside
/// level exit_level - 1; rays run from the node to the interior boundary of
/// the outer level.
struct GeodesicFamily {
  const geometry::RegionChart* chart = nullptr;
  int exit_level = 1;
  FamilyOptions opt;
  std::vector<std::int64_t> nodes;  // ascending full-grid annulus indices
  std::vector<NodeRay> rays;        // node slot i, direction k at i*n_dirs+k

  std::int64_t nnodes() const { return (std::int64_t)nodes.size(); }
  const NodeRay& ray(std::int64_t slot, int dir) const {
    return rays[(size_t)(slot * opt.n_dirs + dir)];
  }
  /// Chart depth of the node in a slot.
  double node_x(std::int64_t slot) const {
    return rays[(size_t)(slot * opt.n_dirs)].samples.front().w[0];
  }
};

/// Closed quadrature weights for samples uniform in t except a final
/// bisected entry: composite Simpson on the uniform core, a quadratic
/// interpolant through the last three points on the remainder.  Fourth-order
/// accurate; exact for quadratics on any admissible spacing.
std::vector<double> simpson_tail_weights(const std::vector<double>& t);

/// Trace the family.  Throws config_error for unusable options or an
/// ill-conditioned direction system, domain_error (naming the node) if a ray
/// fails to reach the exit surface or loses depth monotonicity.
GeodesicFamily build_family(const geometry::RegionChart& rc, int exit_level,
                            const FamilyOptions& opt = {});

/// Same trace for an explicit ascending node list instead of the level
/// difference.  Used when the recovered potential is needed on the closure of
/// the annulus -- e.g. on the inner-rim nodes where a Poisson extension takes
/// its boundary trace -- which the strict between-levels set excludes.  Every
/// node must launch rays that reach the exit surface of exit_level.
GeodesicFamily build_family(const geometry::RegionChart& rc, int exit_level,
                            const std::vector<std::int64_t>& nodes,
                            const FamilyOptions& opt = {});

/// The fundamental-theorem integral of one family ray against a conjugated
/// rank-m callable (m in {1,2}): returns the estimate of
/// <v_F(node), D^{m-1}> for the ray's launch direction D.
double integrate_fundamental(const GeodesicFamily& fam,
                             const fields::FieldCallable& h, double F,
                             std::int64_t slot, int dir);

struct LeftInverseResult {
  fields::TensorField v;       // rank m-1; zero off the annulus nodes
  fields::TensorField spread;  // rank 0 per-node consistency residual
};

/// Recover v_F on the annulus nodes from h_F = (d_F v)_F.  Rank 1 input
/// averages the per-direction scalar estimates (spread = max deviation);
/// rank 2 solves the shared least-squares direction system per node
/// (spread = residual norm).  The result is meaningful exactly when h is a
/// conjugated potential derivative; spread quantifies the failure otherwise.
LeftInverseResult left_inverse(const GeodesicFamily& fam,
                               const fields::FieldCallable& h, double F);

/// Grid-field convenience overload (trilinear interpolation; note the
/// interpolation error does not telescope, so quadrature-order studies need
/// the callable overload).
LeftInverseResult left_inverse(const GeodesicFamily& fam,
                               const fields::TensorField& h, double F);

}  // namespace geoxray::annulus
