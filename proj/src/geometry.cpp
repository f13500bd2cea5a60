#include "geoxray/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace geoxray {
namespace geometry {

// ============================ metric models ==============================

MetricModel MetricModel::euclidean() {
  MetricModel m;
  m.family = kEuclidean;
  return m;
}

MetricModel MetricModel::conformal(double amp, const Vec3& k) {
  MetricModel m;
  m.family = kConformal;
  m.conf_amp = amp;
  m.conf_k = k;
  return m;
}

MetricModel MetricModel::lens(double kappa, double eps) {
  GEOXRAY_REQUIRE(kappa > 0 && eps > 0 && eps < 0.5 * kappa,
                  "lens model: need 0 < eps < kappa/2 for layer concavity");
  MetricModel m;
  m.family = kLens;
  m.kappa = kappa;
  m.eps = eps;
  return m;
}

MetricModel MetricModel::shell(ShellProfile p, double b) {
  GEOXRAY_REQUIRE(b > 0, "shell model: boundary radius must be positive");
  MetricModel m;
  m.family = kShell;
  m.profile = p;
  m.shell_b = b;
  return m;
}

double MetricModel::sound_speed(double r) const {
  double c;
  switch (profile) {
    case kConstantC: c = 1.0; break;
    case kHerglotzInv: c = 1.0 / (1.0 + r); break;
    case kLinearC: c = c_lin0 + c_slope * (r - c_rref); break;
    default: c = 1.0;
  }
  GEOXRAY_REQUIRE(c > 1e-12, "shell model: sound speed vanished");
  return c;
}

double MetricModel::sound_speed_deriv(double r) const {
  switch (profile) {
    case kConstantC: return 0.0;
    case kHerglotzInv: return -1.0 / sqr(1.0 + r);
    case kLinearC: return c_slope;
  }
  return 0.0;
}

double MetricModel::phi(const Vec3& z) const {
  switch (family) {
    case kConformal:
      return conf_amp * std::sin(dot(conf_k, z));
    case kShell:
      return -std::log(sound_speed(norm(z)));
    default:
      return 0.0;
  }
}

Vec3 MetricModel::grad_phi(const Vec3& z) const {
  switch (family) {
    case kConformal: {
      const double c = conf_amp * std::cos(dot(conf_k, z));
      return {c * conf_k[0], c * conf_k[1], c * conf_k[2]};
    }
    case kShell: {
      const double r = norm(z);
      GEOXRAY_REQUIRE(r > 1e-12, "shell model: gradient at the origin");
      const double s = -sound_speed_deriv(r) / (sound_speed(r) * r);
      return {s * z[0], s * z[1], s * z[2]};
    }
    default:
      return {0.0, 0.0, 0.0};
  }
}

SymMat3 MetricModel::metric(const Vec3& z) const {
  if (is_flat()) return {1, 0, 0, 1, 0, 1};
  const double e = std::exp(2.0 * phi(z));
  return {e, 0, 0, e, 0, e};
}

void MetricModel::christoffel_closed(const Vec3& z, SymMat3 G[3]) const {
  if (is_flat()) {
    for (int k = 0; k < 3; ++k) G[k] = {0, 0, 0, 0, 0, 0};
    return;
  }
  // Conformal metric g = e^{2 phi} delta:
  //   Gamma^k_{ij} = d_i phi delta^k_j + d_j phi delta^k_i - d_k phi delta_ij
  const Vec3 p = grad_phi(z);
  for (int k = 0; k < 3; ++k) {
    SymMat3 g{0, 0, 0, 0, 0, 0};
    auto at = [&](int i, int j) -> double {
      double v = 0.0;
      if (j == k) v += p[i];
      if (i == k) v += p[j];
      if (i == j) v -= p[k];
      return v;
    };
    g[0] = at(0, 0); g[1] = at(0, 1); g[2] = at(0, 2);
    g[3] = at(1, 1); g[4] = at(1, 2); g[5] = at(2, 2);
    G[k] = g;
  }
}

double MetricModel::xtilde(const Vec3& z) const {
  switch (family) {
    case kLens:
      // xtilde = -rho - eps |z|^2 with rho = z3 - kappa |z'|^2 / 2
      return -z[2] + 0.5 * kappa * (z[0] * z[0] + z[1] * z[1]) -
             eps * dot(z, z);
    case kShell:
      return norm(z) - shell_b;
    default:
      return z[2];  // linear foliation: validator must reject it
  }
}

Vec3 MetricModel::grad_xtilde(const Vec3& z) const {
  switch (family) {
    case kLens:
      return {kappa * z[0] - 2 * eps * z[0], kappa * z[1] - 2 * eps * z[1],
              -1.0 - 2 * eps * z[2]};
    case kShell: {
      const double r = norm(z);
      GEOXRAY_REQUIRE(r > 1e-12, "xtilde gradient at origin");
      return {z[0] / r, z[1] / r, z[2] / r};
    }
    default:
      return {0.0, 0.0, 1.0};
  }
}

double MetricModel::boundary_rho(const Vec3& z) const {
  switch (family) {
    case kLens:
      return z[2] - 0.5 * kappa * (z[0] * z[0] + z[1] * z[1]);
    case kShell:
      return shell_b - norm(z);
    default:
      return 1.0 - z[2];
  }
}

// =========================== christoffel =================================

void christoffel(const MetricModel& m, const Vec3& z, SymMat3 G[3],
                 ChristoffelMethod method, double fd_h) {
  if (method == ChristoffelMethod::kClosedForm) {
    m.christoffel_closed(z, G);
    return;
  }
  // Central differences of the ambient metric:
  //   Gamma^k_{ij} = (1/2) g^{kl} (d_i g_{lj} + d_j g_{li} - d_l g_{ij})
  GEOXRAY_REQUIRE(fd_h > 0, "christoffel: bad step");
  SymMat3 dg[3];
  for (int a = 0; a < 3; ++a) {
    Vec3 zp = z, zm = z;
    zp[a] += fd_h;
    zm[a] -= fd_h;
    const SymMat3 gp = m.metric(zp), gm = m.metric(zm);
    for (int t = 0; t < 6; ++t) dg[a][t] = (gp[t] - gm[t]) / (2 * fd_h);
  }
  const SymMat3 ginv = sym_inverse(m.metric(z));
  auto gat = [](const SymMat3& g, int i, int j) -> double {
    static const int map[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
    return g[map[i][j]];
  };
  for (int k = 0; k < 3; ++k) {
    SymMat3 out{0, 0, 0, 0, 0, 0};
    auto fill = [&](int i, int j) -> double {
      double s = 0.0;
      for (int l = 0; l < 3; ++l) {
        const double term =
            gat(dg[i], l, j) + gat(dg[j], l, i) - gat(dg[l], i, j);
        s += 0.5 * gat(ginv, k, l) * term;
      }
      return s;
    };
    out[0] = fill(0, 0); out[1] = fill(0, 1); out[2] = fill(0, 2);
    out[3] = fill(1, 1); out[4] = fill(1, 2); out[5] = fill(2, 2);
    G[k] = out;
  }
}

// ========================== geodesic tracing =============================

namespace {

struct State {
  Vec3 z, v;
};

State deriv(const MetricModel& m, const State& s) {
  State d;
  d.z = s.v;
  if (m.is_flat()) {
    d.v = {0, 0, 0};
  } else {
    SymMat3 G[3];
    m.christoffel_closed(s.z, G);
    d.v = {-sym_quad(G[0], s.v), -sym_quad(G[1], s.v), -sym_quad(G[2], s.v)};
  }
  return d;
}

State rk4_step(const MetricModel& m, const State& s, double h) {
  const State k1 = deriv(m, s);
  State s2{s.z + (0.5 * h) * k1.z, s.v + (0.5 * h) * k1.v};
  const State k2 = deriv(m, s2);
  State s3{s.z + (0.5 * h) * k2.z, s.v + (0.5 * h) * k2.v};
  const State k3 = deriv(m, s3);
  State s4{s.z + h * k3.z, s.v + h * k3.v};
  const State k4 = deriv(m, s4);
  State out;
  out.z = s.z + (h / 6.0) * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z);
  out.v = s.v + (h / 6.0) * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v);
  return out;
}

struct HalfTrace {
  std::vector<double> t;
  std::vector<Vec3> z, zdot;
  Geodesic::Exit exit = Geodesic::kExitNone;
};

// Trace one parameter direction from (z0,v0); samples exclude the foot.
HalfTrace trace_half(const MetricModel& m, const Vec3& z0, const Vec3& v0,
                     const TraceSpec& spec) {
  HalfTrace out;
  State cur{z0, v0};
  double t = 0.0;
  const int max_steps = (int)std::ceil(spec.t_max / spec.h_t) + 2;
  for (int step = 0; step < max_steps; ++step) {
    const State nxt = rk4_step(m, cur, spec.h_t);
    const double tn = t + spec.h_t;
    const bool crossed =
        spec.inside_level && spec.inside_level(nxt.z) <= 0.0;
    if (crossed) {
      // Bisect the step length to the crossing of inside_level = 0.
      double lo = 0.0, hi = spec.h_t;
      State hit = nxt;
      while (hi - lo > spec.bisect_tol) {
        const double mid = 0.5 * (lo + hi);
        const State sm = rk4_step(m, cur, mid);
        if (spec.inside_level(sm.z) <= 0.0) {
          hi = mid;
          hit = sm;
        } else {
          lo = mid;
        }
      }
      out.t.push_back(t + hi);
      out.z.push_back(hit.z);
      out.zdot.push_back(hit.v);
      out.exit = Geodesic::kExitBoundary;
      return out;
    }
    if (spec.hard_stop && spec.hard_stop(nxt.z)) {
      out.exit = Geodesic::kExitSideways;
      return out;
    }
    out.t.push_back(tn);
    out.z.push_back(nxt.z);
    out.zdot.push_back(nxt.v);
    cur = nxt;
    t = tn;
    if (t >= spec.t_max) {
      out.exit = spec.inside_level ? Geodesic::kExitSideways
                                   : Geodesic::kExitNone;
      return out;
    }
  }
  out.exit = Geodesic::kExitSideways;
  return out;
}

}  // namespace

Geodesic trace_geodesic(const MetricModel& m, const Vec3& z0, const Vec3& v0,
                        const TraceSpec& spec) {
  GEOXRAY_REQUIRE(spec.h_t > 0 && spec.t_max > 0, "trace_geodesic: bad spec");
  Geodesic g;
  g.h_t = spec.h_t;

  if (spec.inside_level && spec.inside_level(z0) <= 0.0) {
    // Launch point already outside: degenerate single-sample trace.
    g.t = {0.0};
    g.z = {z0};
    g.zdot = {v0};
    g.foot = 0;
    g.exit_lo = g.exit_hi = Geodesic::kExitNone;
    return g;
  }

  const HalfTrace fwd = trace_half(m, z0, v0, spec);
  HalfTrace bwd;
  if (spec.both_directions) {
    bwd = trace_half(m, z0, {-v0[0], -v0[1], -v0[2]}, spec);
  }

  // Backward samples describe z(-s) with velocity -zdot(-s): flip both.
  const int nb = (int)bwd.t.size();
  g.t.reserve(nb + 1 + fwd.t.size());
  g.z.reserve(nb + 1 + fwd.z.size());
  g.zdot.reserve(nb + 1 + fwd.z.size());
  for (int i = nb - 1; i >= 0; --i) {
    g.t.push_back(-bwd.t[i]);
    g.z.push_back(bwd.z[i]);
    g.zdot.push_back(-1.0 * bwd.zdot[i]);
  }
  g.t.push_back(0.0);
  g.z.push_back(z0);
  g.zdot.push_back(v0);
  g.foot = nb;
  for (size_t i = 0; i < fwd.t.size(); ++i) {
    g.t.push_back(fwd.t[i]);
    g.z.push_back(fwd.z[i]);
    g.zdot.push_back(fwd.zdot[i]);
  }
  g.exit_lo = spec.both_directions ? bwd.exit : Geodesic::kExitNone;
  g.exit_hi = fwd.exit;
  return g;
}

double geodesic_energy(const MetricModel& m, const Vec3& z, const Vec3& zdot) {
  return sym_quad(m.metric(z), zdot);
}

double concavity_margin(const Geodesic& g,
                        const std::function<double(const Vec3&)>& f) {
  const int n = g.n();
  double best = 1e300;
  int used = 0;
  for (int i = 1; i + 1 < n; ++i) {
    const double dl = g.t[i] - g.t[i - 1];
    const double dr = g.t[i + 1] - g.t[i];
    // centered second difference requires uniform spacing on both sides
    if (std::fabs(dl - g.h_t) > 1e-12 * std::max(1.0, g.h_t)) continue;
    if (std::fabs(dr - g.h_t) > 1e-12 * std::max(1.0, g.h_t)) continue;
    const double s =
        (f(g.z[i + 1]) - 2.0 * f(g.z[i]) + f(g.z[i - 1])) / sqr(g.h_t);
    best = std::min(best, s);
    ++used;
  }
  GEOXRAY_REQUIRE(used >= 1,
                  "concavity_margin: too few uniform samples on the trace");
  return best;
}

// ============================== charts ===================================

namespace {

// Lens chart depth solve: eps Z^2 + Z + (x - c + (eps - kappa/2)|y|^2) = 0.
double lens_Z(const MetricModel& m, double c_depth, const Vec3& w,
              double* dZdx = nullptr, Vec3* dZdy = nullptr) {
  const double yy = w[1] * w[1] + w[2] * w[2];
  const double S = w[0] - c_depth + (m.eps - 0.5 * m.kappa) * yy;
  const double disc = 1.0 - 4.0 * m.eps * S;
  GEOXRAY_REQUIRE(disc > 1e-12, "lens chart: point outside chart domain");
  const double Z = (-1.0 + std::sqrt(disc)) / (2.0 * m.eps);
  const double denom = 1.0 + 2.0 * m.eps * Z;  // = sqrt(disc)
  if (dZdx) *dZdx = -1.0 / denom;
  if (dZdy) {
    const double f = (m.kappa - 2.0 * m.eps) / denom;
    *dZdy = {0.0, f * w[1], f * w[2]};
  }
  return Z;
}

Vec3 shell_dir(double theta, double phi) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
          std::cos(theta)};
}

}  // namespace

Vec3 RegionChart::to_ambient(const Vec3& w) const {
  switch (model.family) {
    case MetricModel::kLens: {
      const double Z = lens_Z(model, c_depth, w);
      return {w[1], w[2], Z};
    }
    case MetricModel::kShell: {
      const double r_in = model.shell_b + tau - c_depth;
      const double r = r_in + w[0];
      GEOXRAY_REQUIRE(r > 1e-9, "shell chart: radius collapsed");
      const double theta = 0.5 * M_PI + w[1] / model.shell_b;
      const double phi = w[2] / model.shell_b;
      return r * shell_dir(theta, phi);
    }
    default:
      // euclidean / conformal box chart: z = (y1, y2, x - c)
      return {w[1], w[2], w[0] - c_depth};
  }
}

Vec3 RegionChart::to_chart(const Vec3& z) const {
  switch (model.family) {
    case MetricModel::kLens: {
      const double x = model.xtilde(z) + c_depth;
      return {x, z[0], z[1]};
    }
    case MetricModel::kShell: {
      const double r = norm(z);
      GEOXRAY_REQUIRE(r > 1e-9, "shell chart: point at origin");
      const double r_in = model.shell_b + tau - c_depth;
      const double theta = std::acos(std::clamp(z[2] / r, -1.0, 1.0));
      const double phi = std::atan2(z[1], z[0]);
      return {r - r_in, model.shell_b * (theta - 0.5 * M_PI),
              model.shell_b * phi};
    }
    default:
      return {z[2] + c_depth, z[0], z[1]};
  }
}

Vec3 RegionChart::chart_velocity(const Vec3& z, const Vec3& zdot) const {
  switch (model.family) {
    case MetricModel::kLens: {
      // lambda = d/dt (xtilde + c) = grad xtilde . zdot
      const Vec3 gx = model.grad_xtilde(z);
      return {dot(gx, zdot), zdot[0], zdot[1]};
    }
    case MetricModel::kShell: {
      const double r = norm(z);
      const double theta = std::acos(std::clamp(z[2] / r, -1.0, 1.0));
      const double phi = std::atan2(z[1], z[0]);
      const Vec3 u = shell_dir(theta, phi);
      const Vec3 ut = {std::cos(theta) * std::cos(phi),
                       std::cos(theta) * std::sin(phi), -std::sin(theta)};
      const Vec3 up = {-std::sin(theta) * std::sin(phi),
                       std::sin(theta) * std::cos(phi), 0.0};
      const double st = std::sin(theta);
      GEOXRAY_REQUIRE(std::fabs(st) > 1e-9, "shell chart: polar degeneracy");
      // Columns of dz/dw are u, (r/b) u_theta, (r/b) u_phi (orthogonal).
      const double rdot = dot(u, zdot);
      const double w1dot = model.shell_b / r * dot(ut, zdot);
      const double w2dot = model.shell_b / (r * st * st) * dot(up, zdot);
      return {rdot, w1dot, w2dot};
    }
    default:
      return {zdot[2], zdot[0], zdot[1]};
  }
}

Vec3 RegionChart::ambient_velocity(const Vec3& w, const Vec3& wdot) const {
  switch (model.family) {
    case MetricModel::kLens: {
      double Zx;
      Vec3 Zy;
      (void)lens_Z(model, c_depth, w, &Zx, &Zy);
      return {wdot[1], wdot[2],
              Zx * wdot[0] + Zy[1] * wdot[1] + Zy[2] * wdot[2]};
    }
    case MetricModel::kShell: {
      const double r_in = model.shell_b + tau - c_depth;
      const double r = r_in + w[0];
      const double theta = 0.5 * M_PI + w[1] / model.shell_b;
      const double phi = w[2] / model.shell_b;
      const Vec3 u = shell_dir(theta, phi);
      const Vec3 ut = {std::cos(theta) * std::cos(phi),
                       std::cos(theta) * std::sin(phi), -std::sin(theta)};
      const Vec3 up = {-std::sin(theta) * std::sin(phi),
                       std::sin(theta) * std::cos(phi), 0.0};
      const double s1 = r / model.shell_b;
      return wdot[0] * u + (wdot[1] * s1) * ut + (wdot[2] * s1) * up;
    }
    default:
      return {wdot[1], wdot[2], wdot[0]};
  }
}

SymMat3 RegionChart::chart_metric(const Vec3& w) const {
  switch (model.family) {
    case MetricModel::kLens: {
      double Zx;
      Vec3 Zy;
      (void)lens_Z(model, c_depth, w, &Zx, &Zy);
      // g = J^T J with ambient flat metric, J columns (dz/dx, dz/dy).
      return {Zx * Zx,          Zx * Zy[1],          Zx * Zy[2],
              1 + Zy[1] * Zy[1], Zy[1] * Zy[2],      1 + Zy[2] * Zy[2]};
    }
    case MetricModel::kShell: {
      const double r_in = model.shell_b + tau - c_depth;
      const double r = r_in + w[0];
      const double theta = 0.5 * M_PI + w[1] / model.shell_b;
      const double c = model.sound_speed(r);
      const double ic2 = 1.0 / (c * c);
      const double s1 = r / model.shell_b;
      const double s2 = r * std::sin(theta) / model.shell_b;
      return {ic2, 0, 0, ic2 * s1 * s1, 0, ic2 * s2 * s2};
    }
    default: {
      const Vec3 z = to_ambient(w);
      const double e =
          model.family == MetricModel::kConformal ? std::exp(2 * model.phi(z))
                                                  : 1.0;
      return {e, 0, 0, e, 0, e};
    }
  }
}

void RegionChart::chart_christoffel(const Vec3& w, SymMat3 G[3],
                                    double fd_h) const {
  SymMat3 dg[3];
  for (int a = 0; a < 3; ++a) {
    Vec3 wp = w, wm = w;
    wp[a] += fd_h;
    wm[a] -= fd_h;
    const SymMat3 gp = chart_metric(wp), gm = chart_metric(wm);
    for (int t = 0; t < 6; ++t) dg[a][t] = (gp[t] - gm[t]) / (2 * fd_h);
  }
  const SymMat3 ginv = sym_inverse(chart_metric(w));
  auto gat = [](const SymMat3& g, int i, int j) -> double {
    static const int map[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
    return g[map[i][j]];
  };
  for (int k = 0; k < 3; ++k) {
    SymMat3 out{0, 0, 0, 0, 0, 0};
    auto fill = [&](int i, int j) -> double {
      double s = 0.0;
      for (int l = 0; l < 3; ++l)
        s += 0.5 * gat(ginv, k, l) *
             (gat(dg[i], l, j) + gat(dg[j], l, i) - gat(dg[l], i, j));
      return s;
    };
    out[0] = fill(0, 0); out[1] = fill(0, 1); out[2] = fill(0, 2);
    out[3] = fill(1, 1); out[4] = fill(1, 2); out[5] = fill(2, 2);
    G[k] = out;
  }
}

double RegionChart::rho_region(const Vec3& w) const {
  switch (model.family) {
    case MetricModel::kLens: {
      const double Z = lens_Z(model, c_depth, w);
      return Z - 0.5 * model.kappa * (w[1] * w[1] + w[2] * w[2]);
    }
    default: {
      // shell / euclidean: interior boundary at x = c, tangential patch cap
      const double rho_top = c_depth - w[0];
      const double yn = std::sqrt(w[1] * w[1] + w[2] * w[2]);
      const double rho_cap = cap_slope * (cap_radius - yn);
      return std::min(rho_top, rho_cap);
    }
  }
}

double RegionChart::rho_region_ambient(const Vec3& z) const {
  switch (model.family) {
    case MetricModel::kLens:
      return model.boundary_rho(z);
    default:
      return rho_region(to_chart(z));
  }
}

bool RegionChart::chart_box_violated(const Vec3& z) const {
  Vec3 w;
  try {
    w = to_chart(z);
  } catch (const domain_error&) {
    return true;
  }
  // Half-cell slack: interpolation stencils clamp at the hull anyway.
  for (int a = 0; a < 3; ++a) {
    const double lo = grid.origin[a] - 0.5 * grid.h[a];
    const double hi = grid.coord(a, grid.n[a] - 1) + 0.5 * grid.h[a];
    if (w[a] < lo || w[a] > hi) return true;
  }
  return false;
}

void RegionChart::build_masks() {
  const std::int64_t N = grid.size();
  for (int lvl = 0; lvl < 3; ++lvl) {
    inside[lvl].assign((size_t)N, 0);
    dirichlet[lvl].assign((size_t)N, 0);
    nodes[lvl].clear();
  }
  for (std::int64_t f = 0; f < N; ++f) {
    const Vec3 w = grid.node(f);
    const double rho = rho_region(w);
    const auto u = grid.unidx(f);
    for (int lvl = 0; lvl < 3; ++lvl) {
      if (rho >= -offsets[lvl]) {
        // Region nodes must stay clear of the chart box rim (except the
        // artificial-boundary side i = 0 where the chart legitimately ends).
        GEOXRAY_REQUIRE(u[0] != grid.n[0] - 1,
                        "region touches the chart box top; enlarge x extent");
        GEOXRAY_REQUIRE(u[1] != 0 && u[1] != grid.n[1] - 1 && u[2] != 0 &&
                            u[2] != grid.n[2] - 1,
                        "region touches the chart box rim; enlarge y extent");
        inside[lvl][(size_t)f] = 1;
        nodes[lvl].push_back(f);
      }
    }
  }
  // Interior (Dirichlet) boundary: inside nodes with a neighbor that failed
  // the rho condition. The artificial side (x decreasing out of the grid)
  // carries no boundary condition.
  const int dx[6] = {1, -1, 0, 0, 0, 0};
  const int dy[6] = {0, 0, 1, -1, 0, 0};
  const int dz[6] = {0, 0, 0, 0, 1, -1};
  for (int lvl = 0; lvl < 3; ++lvl) {
    for (std::int64_t f : nodes[lvl]) {
      const auto u = grid.unidx(f);
      bool bdry = false;
      for (int d = 0; d < 6 && !bdry; ++d) {
        const int i = u[0] + dx[d], j = u[1] + dy[d], k = u[2] + dz[d];
        if (i < 0) continue;  // artificial boundary side
        if (i >= grid.n[0] || j < 0 || j >= grid.n[1] || k < 0 ||
            k >= grid.n[2]) {
          bdry = true;  // defensive: should be unreachable given the asserts
        } else if (!inside[lvl][(size_t)grid.idx(i, j, k)]) {
          bdry = true;
        }
      }
      if (bdry) dirichlet[lvl][(size_t)f] = 1;
    }
  }
}

RegionChart RegionChart::lens_chart(const MetricModel& m, double c_depth,
                                    double b1, double b2, int nx, int ny,
                                    double box_pad) {
  GEOXRAY_REQUIRE(m.family == MetricModel::kLens, "lens_chart: wrong family");
  GEOXRAY_REQUIRE(0 <= b1 && b1 <= b2, "lens_chart: offsets must nest");
  RegionChart rc;
  rc.model = m;
  rc.c_depth = c_depth;
  rc.tau = 0.0;
  rc.offsets = {0.0, b1, b2};
  const double ly = box_pad * std::sqrt((c_depth + 1.5 * b2 + 1e-12) / m.eps);
  const double x_hi = (c_depth + b2) * (1.0 + 3.0 / nx);
  rc.grid = Grid3::chart_box(nx, ny, ny, x_hi, ly, ly);
  rc.build_masks();
  return rc;
}

RegionChart RegionChart::shell_chart(const MetricModel& m, double c_depth,
                                     double tau, double b1, double b2, int nx,
                                     int ny, double patch_halfwidth) {
  GEOXRAY_REQUIRE(m.family == MetricModel::kShell ||
                      m.family == MetricModel::kEuclidean ||
                      m.family == MetricModel::kConformal,
                  "shell_chart: wrong family");
  GEOXRAY_REQUIRE(0 <= b1 && b1 <= b2, "shell_chart: offsets must nest");
  RegionChart rc;
  rc.model = m;
  rc.c_depth = c_depth;
  rc.tau = tau;
  rc.offsets = {0.0, b1, b2};
  rc.cap_radius = 0.8 * patch_halfwidth;
  const double rim = patch_halfwidth - rc.cap_radius;
  rc.cap_slope = (3.0 * b2 + 0.05) / rim;
  const double x_hi = (c_depth + b2) * (1.0 + 3.0 / nx);
  rc.grid = Grid3::chart_box(nx, ny, ny, x_hi, patch_halfwidth,
                             patch_halfwidth);
  rc.build_masks();
  return rc;
}

// ============================ validation ================================

ValidationReport validate_foliation(const RegionChart& chart, double cone,
                                    double margin_min, double h_t,
                                    int node_stride) {
  ValidationReport rep;
  const auto& model = chart.model;
  std::ostringstream msg;

  // --- Herglotz condition for radial models: c - r c' > 0 on the chart ---
  rep.herglotz_min = 1e300;
  if (model.family == MetricModel::kShell) {
    const double r_in = model.shell_b + chart.tau - chart.c_depth;
    const double r_hi =
        r_in + chart.grid.coord(0, chart.grid.n[0] - 1) + 0.05;
    for (int i = 0; i <= 200; ++i) {
      const double r = r_in + (r_hi - r_in) * i / 200.0;
      if (r <= 1e-6) continue;
      const double v =
          model.sound_speed(r) - r * model.sound_speed_deriv(r);
      rep.herglotz_min = std::min(rep.herglotz_min, v);
    }
    if (rep.herglotz_min <= 0) msg << "Herglotz condition fails; ";
  }

  // --- tangential concavity margin over sampled region nodes ---
  rep.min_margin = 1e300;
  const auto& xfun = [&](const Vec3& z) { return model.xtilde(z); };
  TraceSpec short_spec;
  short_spec.h_t = h_t;
  short_spec.t_max = 10 * h_t;
  const auto& region_nodes = chart.nodes[2];
  int tested = 0;
  for (size_t qi = 0; qi < region_nodes.size();
       qi += (size_t)std::max(1, node_stride)) {
    const Vec3 w = chart.grid.node(region_nodes[qi]);
    for (int a = 0; a < 4; ++a) {
      const double ang = a * M_PI / 4.0;
      const Vec3 wdot{0.0, std::cos(ang), std::sin(ang)};
      Vec3 z0, v0;
      try {
        z0 = chart.to_ambient(w);
        v0 = chart.ambient_velocity(w, wdot);
      } catch (const domain_error&) {
        continue;
      }
      const Geodesic g = trace_geodesic(model, z0, v0, short_spec);
      try {
        rep.min_margin = std::min(rep.min_margin, concavity_margin(g, xfun));
        ++tested;
      } catch (const domain_error&) {
      }
    }
  }
  if (tested == 0) {
    rep.min_margin = 0.0;
    msg << "no tangential rays tested; ";
  }
  if (rep.min_margin < margin_min) msg << "concavity margin too small; ";

  // --- cone safety and exit retention ---
  TraceSpec exit_spec;
  exit_spec.h_t = h_t;
  exit_spec.t_max = 60.0;
  const double b2 = chart.offsets[2];
  exit_spec.inside_level = [&](const Vec3& z) {
    return chart.rho_region_ambient(z) + b2;
  };
  exit_spec.hard_stop = [&](const Vec3& z) {
    return chart.chart_box_violated(z);
  };
  int total = 0, retained = 0;
  bool x_ok = true;
  const double lam_grid[3] = {0.0, 0.6 * cone, -0.6 * cone};
  for (size_t qi = 0; qi < region_nodes.size();
       qi += (size_t)std::max(1, 2 * node_stride)) {
    const Vec3 w = chart.grid.node(region_nodes[qi]);
    for (double lt : lam_grid) {
      for (int a = 0; a < 2; ++a) {
        const double ang = a * M_PI / 2.0;
        const Vec3 wdot{lt * w[0], std::cos(ang), std::sin(ang)};
        Vec3 z0, v0;
        try {
          z0 = chart.to_ambient(w);
          v0 = chart.ambient_velocity(w, wdot);
        } catch (const domain_error&) {
          continue;
        }
        const Geodesic g = trace_geodesic(model, z0, v0, exit_spec);
        ++total;
        if (g.retained()) {
          ++retained;
          for (const Vec3& z : g.z) {
            if (model.xtilde(z) + chart.c_depth - chart.tau < -1e-9)
              x_ok = false;
          }
        }
      }
    }
  }
  rep.cone_retention = total > 0 ? (double)retained / total : 0.0;
  if (!x_ok) msg << "cone ray dipped below the artificial boundary; ";
  if (rep.cone_retention < 0.85) msg << "cone exit retention below 0.85; ";

  rep.ok = (rep.herglotz_min > 0) && (rep.min_margin >= margin_min) &&
           x_ok && (rep.cone_retention >= 0.85);
  rep.message = msg.str().empty() ? "ok" : msg.str();
  return rep;
}

AlphaEstimate measure_alpha(const RegionChart& chart, double h_t,
                            int node_stride) {
  std::vector<double> alphas;
  TraceSpec spec;
  spec.h_t = h_t;
  spec.t_max = 10 * h_t;
  const auto& xfun = [&](const Vec3& z) { return chart.model.xtilde(z); };
  const auto& region_nodes = chart.nodes[2];
  for (size_t qi = 0; qi < region_nodes.size();
       qi += (size_t)std::max(1, node_stride)) {
    const Vec3 w = chart.grid.node(region_nodes[qi]);
    for (int a = 0; a < 4; ++a) {
      const double ang = a * M_PI / 4.0;
      const Vec3 wdot{0.0, std::cos(ang), std::sin(ang)};
      try {
        const Vec3 z0 = chart.to_ambient(w);
        const Vec3 v0 = chart.ambient_velocity(w, wdot);
        const Geodesic g = trace_geodesic(chart.model, z0, v0, spec);
        alphas.push_back(0.5 * concavity_margin(g, xfun));
      } catch (const domain_error&) {
      }
    }
  }
  GEOXRAY_REQUIRE(!alphas.empty(), "measure_alpha: no rays sampled");
  std::sort(alphas.begin(), alphas.end());
  AlphaEstimate est;
  est.min_alpha = alphas.front();
  est.median_alpha = alphas[alphas.size() / 2];
  return est;
}

}  // namespace geometry
}  // namespace geoxray
