#include "geoxray/transform.hpp"

#include <cmath>

namespace geoxray::transform {

std::vector<double> slope_grid(double lambda_max, int n) {
  GEOXRAY_REQUIRE(n >= 1 && lambda_max > 0.0, "slope grid: bad parameters");
  std::vector<double> v((size_t)n);
  for (int i = 1; i <= n; ++i)
    v[(size_t)(i - 1)] = -lambda_max + 2.0 * lambda_max * i / (n + 1.0);
  return v;
}

std::vector<double> simpson_weights(const std::vector<double>& t) {
  const int n = (int)t.size();
  std::vector<double> w((size_t)n, 0.0);
  if (n < 2) return w;
  auto trap = [&](int i, int j) {
    const double d = 0.5 * (t[(size_t)j] - t[(size_t)i]);
    w[(size_t)i] += d;
    w[(size_t)j] += d;
  };
  if (n < 4) {
    for (int i = 0; i + 1 < n; ++i) trap(i, i + 1);
    return w;
  }
  // partial end panels (bisected exits), trapezoid
  trap(0, 1);
  trap(n - 2, n - 1);
  // uniform core, composite Simpson with a trapezoid leftover if odd
  const int a = 1, b = n - 2;
  int i = a;
  while (i + 2 <= b) {
    const double d = (t[(size_t)(i + 2)] - t[(size_t)i]) / 6.0;
    w[(size_t)i] += d;
    w[(size_t)(i + 1)] += 4.0 * d;
    w[(size_t)(i + 2)] += d;
    i += 2;
  }
  if (i < b) trap(i, b);
  return w;
}

Vec3 GeodesicSet::sample_point(const Sample& s) const {
  // x comes from the cached exact value: cell fractions are hull-clamped, and
  // the few samples dipping below the first x-layer would otherwise evaluate
  // callables at a point inconsistent with the conjugation weight's x
  const Grid3& g = chart->grid;
  const auto ijk = g.unidx(s.corner);
  return {s.x, g.coord(1, ijk[1]) + s.f[1] * g.h[1],
          g.coord(2, ijk[2]) + s.f[2] * g.h[2]};
}

namespace {

void cell_of(const Grid3& g, const Vec3& w, std::int64_t* corner, double* f) {
  int ijk[3];
  for (int a = 0; a < 3; ++a) {
    double s = (w[a] - g.origin[a]) / g.h[a];
    int i = (int)std::floor(s);
    if (i < 0) i = 0;
    if (i > g.n[a] - 2) i = g.n[a] - 2;
    double fr = s - i;
    if (fr < 0.0) fr = 0.0;
    if (fr > 1.0) fr = 1.0;
    ijk[a] = i;
    f[a] = fr;
  }
  *corner = g.idx(ijk[0], ijk[1], ijk[2]);
}

}  // namespace

GeodesicSet build_set(const geometry::RegionChart& rc, const SetSpec& spec) {
  GEOXRAY_REQUIRE(spec.n_lambda >= 1 && spec.n_omega >= 1,
                  "geodesic set: empty direction grid");
  GeodesicSet gs;
  gs.chart = &rc;
  gs.spec = spec;
  gs.feet = fields::RegionIndex(rc, spec.foot_level);
  gs.lambdas = slope_grid(spec.lambda_max, spec.n_lambda);
  gs.omegas.resize((size_t)spec.n_omega);
  for (int j = 0; j < spec.n_omega; ++j)
    gs.omegas[(size_t)j] = 2.0 * M_PI * j / spec.n_omega;

  const double exit_off = rc.offsets[(size_t)spec.exit_level];
  geometry::TraceSpec ts;
  ts.h_t = spec.h_t;
  ts.inside_level = [&rc, exit_off](const Vec3& z) {
    return rc.rho_region_ambient(z) + exit_off;
  };
  ts.hard_stop = [&rc](const Vec3& z) { return rc.chart_box_violated(z); };

  const int stride = std::max(1, spec.foot_stride);
  for (std::int64_t foot = 0; foot < gs.feet.count; foot += stride)
    gs.foot_ids.push_back(foot);
  gs.rays.resize(gs.foot_ids.size() * (size_t)(spec.n_lambda * spec.n_omega));

  for (std::int64_t k = 0; k < (std::int64_t)gs.foot_ids.size(); ++k) {
    const std::int64_t foot = gs.foot_ids[(size_t)k];
    const Vec3 w = rc.grid.node(gs.feet.node_of[(size_t)foot]);
    const Vec3 z0 = rc.to_ambient(w);
    for (int il = 0; il < spec.n_lambda; ++il)
      for (int iw = 0; iw < spec.n_omega; ++iw) {
        Ray& r = gs.rays[(size_t)gs.ray_id(k, il, iw)];
        r.foot = (std::int32_t)foot;
        r.il = (std::int16_t)il;
        r.iw = (std::int16_t)iw;
        const double lam = gs.lambdas[(size_t)il];
        const double om = gs.omegas[(size_t)iw];
        const Vec3 wdot0{w[0] * lam, std::cos(om), std::sin(om)};
        const Vec3 v0 = rc.ambient_velocity(w, wdot0);
        const geometry::Geodesic g =
            geometry::trace_geodesic(rc.model, z0, v0, ts);
        if (g.n() <= 1) {
          r.status = 2;
          r.off = (std::int64_t)gs.pool.size();
          ++gs.n_degenerate;
          continue;
        }
        if (!g.retained()) {
          r.status = 1;
          r.off = (std::int64_t)gs.pool.size();
          ++gs.n_dropped;
          continue;
        }
        r.status = 0;
        r.off = (std::int64_t)gs.pool.size();
        r.ns = (std::int32_t)g.n();
        const std::vector<double> qw = simpson_weights(g.t);
        for (int i = 0; i < g.n(); ++i) {
          Sample s;
          const Vec3 wc = rc.to_chart(g.z[(size_t)i]);
          const Vec3 wd = rc.chart_velocity(g.z[(size_t)i], g.zdot[(size_t)i]);
          cell_of(rc.grid, wc, &s.corner, s.f);
          s.wdot[0] = wd[0];
          s.wdot[1] = wd[1];
          s.wdot[2] = wd[2];
          s.x = wc[0];
          gs.pool.push_back(s);
          gs.qw.push_back(qw[(size_t)i]);
        }
        ++gs.n_retained;
      }
  }
  return gs;
}

namespace {

// shared per-sample integrand machinery
template <class CompsFn>
double accumulate_ray(const GeodesicSet& gs, const Ray& r, int rank, double F,
                      bool absolute, const CompsFn& comps_at) {
  const double invxf = 1.0 / gs.foot_x(r);
  const int nc = fields::ncomp(rank);
  double acc = 0.0;
  double comps[6], mono[6];
  for (std::int64_t s = r.off; s < r.off + r.ns; ++s) {
    const Sample& sp = gs.pool[(size_t)s];
    comps_at(sp, comps, nc);
    const double V[3] = {sp.wdot[0] / (sp.x * sp.x), sp.wdot[1] / sp.x,
                         sp.wdot[2] / sp.x};
    fields::velocity_monomials(rank, V, mono);
    const double pr = fields::pair_components(rank, comps, mono);
    const double wt = gs.qw[(size_t)s] * std::exp(F * (1.0 / sp.x - invxf));
    acc += wt * (absolute ? std::fabs(pr) : pr);
  }
  return acc;
}

}  // namespace

VecX forward_grid(const GeodesicSet& gs, const fields::TensorField& f,
                  double F) {
  GEOXRAY_REQUIRE(f.grid.size() == gs.chart->grid.size(),
                  "forward: field grid does not match the chart grid");
  const int nc = fields::ncomp(f.rank);
  const Grid3& g = gs.chart->grid;
  const std::int64_t dy = g.n[0], dz = (std::int64_t)g.n[0] * g.n[1];
  VecX out = VecX::Zero(gs.nrays());
  parallel_for(gs.nrays(), [&](std::int64_t ri) {
    const Ray& r = gs.rays[(size_t)ri];
    if (!r.retained() || r.ns == 0) return;
    out[ri] = accumulate_ray(
        gs, r, f.rank, F,
        /*absolute=*/false, [&](const Sample& sp, double* comps, int ncc) {
          const double fx = sp.f[0], fy = sp.f[1], fz = sp.f[2];
          const double w000 = (1 - fx) * (1 - fy) * (1 - fz);
          const double w100 = fx * (1 - fy) * (1 - fz);
          const double w010 = (1 - fx) * fy * (1 - fz);
          const double w110 = fx * fy * (1 - fz);
          const double w001 = (1 - fx) * (1 - fy) * fz;
          const double w101 = fx * (1 - fy) * fz;
          const double w011 = (1 - fx) * fy * fz;
          const double w111 = fx * fy * fz;
          const std::int64_t c0 = sp.corner;
          for (int c = 0; c < ncc; ++c) {
            comps[c] = w000 * f.at(c0, c) + w100 * f.at(c0 + 1, c) +
                       w010 * f.at(c0 + dy, c) + w110 * f.at(c0 + 1 + dy, c) +
                       w001 * f.at(c0 + dz, c) + w101 * f.at(c0 + 1 + dz, c) +
                       w011 * f.at(c0 + dy + dz, c) +
                       w111 * f.at(c0 + 1 + dy + dz, c);
          }
        });
  });
  return out;
}

VecX forward_callable(const GeodesicSet& gs, const fields::FieldCallable& f,
                      double F) {
  VecX out = VecX::Zero(gs.nrays());
  parallel_for(gs.nrays(), [&](std::int64_t ri) {
    const Ray& r = gs.rays[(size_t)ri];
    if (!r.retained() || r.ns == 0) return;
    out[ri] = accumulate_ray(gs, r, f.rank, F, /*absolute=*/false,
                             [&](const Sample& sp, double* comps, int) {
                               f.eval(gs.sample_point(sp), comps);
                             });
  });
  return out;
}

double forward_callable_scale(const GeodesicSet& gs,
                              const fields::FieldCallable& f, double F) {
  const std::int64_t n = gs.nrays();
  std::vector<double> per((size_t)n, 0.0);
  parallel_for(n, [&](std::int64_t ri) {
    const Ray& r = gs.rays[(size_t)ri];
    if (!r.retained() || r.ns == 0) return;
    per[(size_t)ri] = accumulate_ray(gs, r, f.rank, F, /*absolute=*/true,
                                     [&](const Sample& sp, double* comps, int) {
                                       f.eval(gs.sample_point(sp), comps);
                                     });
  });
  double m = 0.0;
  for (double v : per) m = std::max(m, v);
  return m;
}

double xray_single(const geometry::MetricModel& m, int rank,
                   const std::function<void(const Vec3&, double*)>& amb,
                   const Vec3& z0, const Vec3& v0,
                   const geometry::TraceSpec& spec) {
  const geometry::Geodesic g = geometry::trace_geodesic(m, z0, v0, spec);
  GEOXRAY_REQUIRE(g.n() >= 2, "single-ray transform: degenerate geodesic");
  const std::vector<double> w = simpson_weights(g.t);
  double acc = 0.0;
  double comps[6], mono[6];
  for (int i = 0; i < g.n(); ++i) {
    amb(g.z[(size_t)i], comps);
    const double V[3] = {g.zdot[(size_t)i][0], g.zdot[(size_t)i][1],
                         g.zdot[(size_t)i][2]};
    fields::velocity_monomials(rank, V, mono);
    acc += w[(size_t)i] * fields::pair_components(rank, comps, mono);
  }
  return acc;
}

}  // namespace geoxray::transform
