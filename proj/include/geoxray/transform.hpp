#pragma once
// Geodesic ray families over a region chart and the (conjugated) ray
// transform along them.
//
// A family is the product of the chart's deepest-level nodes with a grid of
// rescaled slopes lambda (d x / dt = x * lambda at the base point, which is
// the parameterization that keeps conjugation weights bounded along retained
// rays) and a uniform circle of tangential directions.  Each ray is traced in
// ambient space, then resampled into the chart: per sample we cache the
// trilinear interpolation cell, the chart velocity, the depth coordinate x,
// and a quadrature weight (composite Simpson on the uniform interior,
// trapezoid on the partial end panels).
//
// The slope grid uses interior-uniform nodes -M + 2M i/(N+1), i = 1..N, so
// that refining N -> 2N+1 reproduces the coarse nodes exactly.

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "geoxray/fields.hpp"
#include "geoxray/geometry.hpp"

namespace geoxray::transform {

using VecX = Eigen::VectorXd;

struct SetSpec {
  int foot_level = 2;    // nesting level whose nodes anchor the rays
  int exit_level = 2;    // rays end on rho_region = -offset[exit_level]
  double lambda_max = 0.7;
  int n_lambda = 8;
  int n_omega = 8;
  double h_t = 1e-2;
  int foot_stride = 1;  // anchor every k-th node (thinned families for tests)
};

struct Sample {
  std::int64_t corner = 0;  // grid node of the interpolation cell corner
  double f[3] = {0, 0, 0};  // trilinear fractions in the cell
  double wdot[3] = {0, 0, 0};  // chart velocity at the sample
  double x = 0.0;              // depth coordinate at the sample
};

struct Ray {
  std::int32_t foot = -1;  // compact foot-node index
  std::int16_t il = 0, iw = 0;
  std::uint8_t status = 0;  // 0 retained, 1 dropped sideways, 2 degenerate
  std::int64_t off = 0;     // first sample in the pool
  std::int32_t ns = 0;

  bool retained() const { return status == 0; }
};

struct GeodesicSet {
  const geometry::RegionChart* chart = nullptr;
  SetSpec spec;
  fields::RegionIndex feet;  // compact indexing of all foot-level nodes
  std::vector<std::int64_t> foot_ids;  // compact indices actually anchored
  std::vector<double> lambdas, omegas;
  std::vector<Ray> rays;  // (((anchor * n_lambda) + il) * n_omega) + iw
  std::vector<Sample> pool;
  std::vector<double> qw;  // quadrature weights, parallel to pool
  std::int64_t n_retained = 0, n_dropped = 0, n_degenerate = 0;

  std::int64_t nrays() const { return (std::int64_t)rays.size(); }
  std::int64_t ray_id(std::int64_t anchor, int il, int iw) const {
    return ((anchor * spec.n_lambda) + il) * spec.n_omega + iw;
  }
  double foot_x(const Ray& r) const { return feet.x_of(r.foot); }
  // chart position of a sample, reconstructed from its cell
  Vec3 sample_point(const Sample& s) const;
};

// Interior-uniform slope grid; refining n -> 2n+1 nests exactly.
std::vector<double> slope_grid(double lambda_max, int n);

// Quadrature weights for samples at times t: composite Simpson on the
// uniform interior, trapezoid on the (possibly partial) end panels.  Weights
// sum exactly to t.back() - t.front().
std::vector<double> simpson_weights(const std::vector<double>& t);

GeodesicSet build_set(const geometry::RegionChart& rc, const SetSpec& spec);

// Conjugated ray transform of a grid field (adapted-frame components,
// rank = f.rank).  Entry r is the integral along ray r with weight
// exp(F (1/x(t) - 1/x_foot)); dropped rays yield 0.
VecX forward_grid(const GeodesicSet& gs, const fields::TensorField& f,
                  double F);

// Same transform, but the field is evaluated pointwise at sample positions
// (no interpolation): the path used for exact annihilation checks.
VecX forward_callable(const GeodesicSet& gs, const fields::FieldCallable& f,
                      double F);

// L1 scale of the transform of |integrand| -- the natural normalization for
// relative cancellation statements.  Returns max over retained rays of
// int |<f, V^m>| weighted as in forward_callable.
double forward_callable_scale(const GeodesicSet& gs,
                              const fields::FieldCallable& f, double F);

// Plain (unconjugated) ray transform of one ambient-frame tensor callable
// along a single geodesic of the model; the workhorse for closed-form
// oracles.  `amb` fills ncomp(rank) ambient components at an ambient point.
double xray_single(const geometry::MetricModel& m, int rank,
                   const std::function<void(const Vec3&, double*)>& amb,
                   const Vec3& z0, const Vec3& v0,
                   const geometry::TraceSpec& spec);

}  // namespace geoxray::transform
