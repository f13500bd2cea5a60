#include "geoxray/annulus.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "geoxray/common.hpp"

namespace geoxray::annulus {

namespace {

// integral over [A, B] of (tau - a)(tau - b), evaluated in coordinates
// shifted to A (all factors are O(step), so no cancellation at large tau)
double int_pair(double A, double B, double a, double b) {
  const double al = A - a, be = A - b, L = B - A;
  return L * (L * L / 3.0 + 0.5 * (al + be) * L + al * be);
}

// add to w the integral over [A, B] of the quadratic interpolant through
// (t[i0], t[i1], t[i2])
void quad3(std::vector<double>& w, const std::vector<double>& t, int i0,
           int i1, int i2, double A, double B) {
  const double t0 = t[(size_t)i0], t1 = t[(size_t)i1], t2 = t[(size_t)i2];
  w[(size_t)i0] += int_pair(A, B, t1, t2) / ((t0 - t1) * (t0 - t2));
  w[(size_t)i1] += int_pair(A, B, t0, t2) / ((t1 - t0) * (t1 - t2));
  w[(size_t)i2] += int_pair(A, B, t0, t1) / ((t2 - t0) * (t2 - t1));
}

void trap(std::vector<double>& w, const std::vector<double>& t, int i,
          int j) {
  const double d = 0.5 * (t[(size_t)j] - t[(size_t)i]);
  w[(size_t)i] += d;
  w[(size_t)j] += d;
}

// composite rule over the uniformly spaced inclusive index range [lo, hi]:
// Simpson pairs, a quadratic through the last three points on a leftover gap
void uniform_rule(std::vector<double>& w, const std::vector<double>& t,
                  int lo, int hi) {
  const int gaps = hi - lo;
  if (gaps <= 0) return;
  if (gaps == 1) {
    trap(w, t, lo, hi);
    return;
  }
  int i = lo;
  while (i + 2 <= hi) {
    const double d = (t[(size_t)(i + 2)] - t[(size_t)i]) / 6.0;
    w[(size_t)i] += d;
    w[(size_t)(i + 1)] += 4.0 * d;
    w[(size_t)(i + 2)] += d;
    i += 2;
  }
  if (i < hi) quad3(w, t, hi - 2, hi - 1, hi, t[(size_t)(hi - 1)],
                    t[(size_t)hi]);
}

}  // namespace

std::vector<double> simpson_tail_weights(const std::vector<double>& t) {
  const int n = (int)t.size();
  std::vector<double> w((size_t)n, 0.0);
  if (n < 2) return w;
  if (n == 2) {
    trap(w, t, 0, 1);
    return w;
  }
  const double h = t[1] - t[0];
  const double d = t[(size_t)(n - 1)] - t[(size_t)(n - 2)];
  GEOXRAY_REQUIRE(h > 0.0 && d >= 0.0, "quadrature: samples not ascending");
  if (d < 1e-9 * h) {
    // final entry duplicates the last uniform sample (a crossing bisected to
    // the node itself): zero weight, plain rule on the uniform prefix
    uniform_rule(w, t, 0, n - 2);
    return w;
  }
  if (n == 3) {
    quad3(w, t, 0, 1, 2, t[0], t[2]);
    return w;
  }
  if ((n - 2) % 2 == 0) {
    uniform_rule(w, t, 0, n - 2);
    quad3(w, t, n - 3, n - 2, n - 1, t[(size_t)(n - 2)], t[(size_t)(n - 1)]);
  } else {
    uniform_rule(w, t, 0, n - 3);
    quad3(w, t, n - 3, n - 2, n - 1, t[(size_t)(n - 3)], t[(size_t)(n - 1)]);
  }
  return w;
}

namespace {

// frame direction rows (beta_k, cos phi_k, sin phi_k); x-independent
Eigen::MatrixXd direction_rows(const FamilyOptions& opt) {
  Eigen::MatrixXd A(opt.n_dirs, 3);
  for (int k = 0; k < opt.n_dirs; ++k) {
    const double phi = opt.phase + 2.0 * M_PI * k / opt.n_dirs;
    A(k, 0) = opt.beta0 + k * opt.dbeta;
    A(k, 1) = std::cos(phi);
    A(k, 2) = std::sin(phi);
  }
  return A;
}

}  // namespace

GeodesicFamily build_family(const geometry::RegionChart& rc, int exit_level,
                            const std::vector<std::int64_t>& nodes,
                            const FamilyOptions& opt) {
  GEOXRAY_REQUIRE(exit_level == 1 || exit_level == 2,
                  "annulus: exit level must be 1 or 2");
  const std::int64_t nfull = rc.grid.size();
  if ((std::int64_t)rc.inside[(size_t)exit_level].size() != nfull ||
      (std::int64_t)rc.inside[(size_t)(exit_level - 1)].size() != nfull) {
    throw config_error("annulus: chart masks not built");
  }
  GEOXRAY_REQUIRE(opt.n_dirs >= 3,
                  "annulus: need at least 3 directions for the one-form "
                  "system (redundancy recommended)");
  GEOXRAY_REQUIRE(opt.beta0 > 0.0 && opt.dbeta >= 0.0,
                  "annulus: launch depth slopes must be positive");
  GEOXRAY_REQUIRE(opt.h_t > 0.0 && opt.t_max > opt.h_t,
                  "annulus: unusable trace steps");

  const Eigen::MatrixXd A = direction_rows(opt);
  {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (!(smin > 0.0) || smax / smin > opt.cond_cap) {
      std::ostringstream os;
      os << "annulus: direction system is rank-deficient for every node "
            "(condition number "
         << (smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity())
         << " exceeds cap " << opt.cond_cap << ")";
      throw config_error(os.str());
    }
  }

  GeodesicFamily fam;
  fam.chart = &rc;
  fam.exit_level = exit_level;
  fam.opt = opt;
  fam.nodes = nodes;
  GEOXRAY_REQUIRE(!fam.nodes.empty(), "annulus: annulus between the levels "
                                      "holds no grid nodes");
  for (std::int64_t f : fam.nodes)
    GEOXRAY_REQUIRE(f >= 0 && f < nfull,
                    "annulus: node index outside the chart grid");

  const int K = opt.n_dirs;
  fam.rays.resize((size_t)fam.nodes.size() * (size_t)K);
  const double offset = rc.offsets[(size_t)exit_level];

  // trace in parallel; diagnose failures after the loop (one message wins)
  std::vector<std::string> fail(fam.nodes.size());
  parallel_for((std::int64_t)fam.nodes.size(), [&](std::int64_t i) {
    const std::int64_t f = fam.nodes[(size_t)i];
    const auto u3 = rc.grid.unidx(f);
    const Vec3 w0 = rc.grid.node(u3[0], u3[1], u3[2]);
    const double x0 = w0[0];
    const Vec3 z0 = rc.to_ambient(w0);

    geometry::TraceSpec spec;
    spec.h_t = opt.h_t;
    spec.t_max = opt.t_max;
    spec.bisect_tol = opt.bisect_tol;
    spec.both_directions = false;
    spec.inside_level = [&rc, offset](const Vec3& z) {
      return rc.rho_region_ambient(z) + offset;
    };
    spec.hard_stop = [&rc](const Vec3& z) { return rc.chart_box_violated(z); };

    for (int k = 0; k < K; ++k) {
      const Vec3 u{A(k, 0) * x0, A(k, 1), A(k, 2)};
      const Vec3 v0 = rc.ambient_velocity(w0, u);
      const geometry::Geodesic g = trace_geodesic(rc.model, z0, v0, spec);
      if (g.exit_hi != geometry::Geodesic::kExitBoundary) {
        std::ostringstream os;
        os << "annulus: ray from node " << f << " direction " << k
           << " failed to reach the interior exit boundary (coverage hole)";
        fail[(size_t)i] = os.str();
        return;
      }
      NodeRay& r = fam.rays[(size_t)(i * K + k)];
      r.launch = u;
      r.samples.resize((size_t)g.n());
      const std::vector<double> qw = simpson_tail_weights(g.t);
      for (int s = 0; s < g.n(); ++s) {
        RaySample& rs = r.samples[(size_t)s];
        rs.w = rc.to_chart(g.z[(size_t)s]);
        rs.wdot = rc.chart_velocity(g.z[(size_t)s], g.zdot[(size_t)s]);
        rs.t = g.t[(size_t)s];
        rs.qw = qw[(size_t)s];
        if (!(rs.wdot[0] > 0.0)) {
          std::ostringstream os;
          os << "annulus: depth not strictly increasing along ray from node "
             << f << " direction " << k;
          fail[(size_t)i] = os.str();
          return;
        }
      }
    }
  });
  for (const std::string& msg : fail)
    if (!msg.empty()) throw domain_error(msg);
  return fam;
}

GeodesicFamily build_family(const geometry::RegionChart& rc, int exit_level,
                            const FamilyOptions& opt) {
  GEOXRAY_REQUIRE(exit_level == 1 || exit_level == 2,
                  "annulus: exit level must be 1 or 2");
  const std::int64_t nfull = rc.grid.size();
  if ((std::int64_t)rc.inside[(size_t)exit_level].size() != nfull ||
      (std::int64_t)rc.inside[(size_t)(exit_level - 1)].size() != nfull) {
    throw config_error("annulus: chart masks not built");
  }
  const auto& in_out = rc.inside[(size_t)exit_level];
  const auto& in_in = rc.inside[(size_t)(exit_level - 1)];
  std::vector<std::int64_t> nodes;
  for (std::int64_t f = 0; f < nfull; ++f)
    if (in_out[(size_t)f] && !in_in[(size_t)f]) nodes.push_back(f);
  return build_family(rc, exit_level, nodes, opt);
}

double integrate_fundamental(const GeodesicFamily& fam,
                             const fields::FieldCallable& h, double F,
                             std::int64_t slot, int dir) {
  GEOXRAY_REQUIRE(h.rank == 1 || h.rank == 2,
                  "annulus: integrand must be a one-form or 2-tensor");
  GEOXRAY_REQUIRE(slot >= 0 && slot < fam.nnodes() && dir >= 0 &&
                      dir < fam.opt.n_dirs,
                  "annulus: ray index out of range");
  const NodeRay& r = fam.ray(slot, dir);
  const double invx0 = 1.0 / r.samples.front().w[0];
  double comps[6], mono[6];
  double acc = 0.0;
  for (const RaySample& s : r.samples) {
    if (s.qw == 0.0) continue;
    const double x = s.w[0];
    const double V[3] = {s.wdot[0] / (x * x), s.wdot[1] / x, s.wdot[2] / x};
    h.eval(s.w, comps);
    fields::velocity_monomials(h.rank, V, mono);
    const double pr = fields::pair_components(h.rank, comps, mono);
    acc += s.qw * std::exp(F * (1.0 / x - invx0)) * pr;
  }
  return -acc;
}

LeftInverseResult left_inverse(const GeodesicFamily& fam,
                               const fields::FieldCallable& h, double F) {
  GEOXRAY_REQUIRE(fam.chart != nullptr, "annulus: family not built");
  GEOXRAY_REQUIRE(h.rank == 1 || h.rank == 2,
                  "annulus: input must be a one-form or 2-tensor");
  const int K = fam.opt.n_dirs;
  LeftInverseResult out;
  out.v = fields::TensorField::zeros(h.rank - 1, fam.chart->grid);
  out.spread = fields::TensorField::zeros(0, fam.chart->grid);

  // shared per-node direction system; pseudo-inverse precomputed once
  const Eigen::MatrixXd A = direction_rows(fam.opt);
  const Eigen::MatrixXd P =
      (A.transpose() * A).ldlt().solve(A.transpose());  // 3 x K

  parallel_for(fam.nnodes(), [&](std::int64_t i) {
    const std::int64_t f = fam.nodes[(size_t)i];
    Eigen::VectorXd R(K);
    for (int k = 0; k < K; ++k) R[k] = integrate_fundamental(fam, h, F, i, k);
    if (h.rank == 1) {
      const double mean = R.mean();
      out.v.at(f, 0) = mean;
      out.spread.at(f, 0) = (R.array() - mean).abs().maxCoeff();
    } else {
      // <v, D_k> = R_k with D_k = row_k / x0, so rows * v = x0 R
      const Eigen::VectorXd b = fam.node_x(i) * R;
      const Eigen::Vector3d v = P * b;
      for (int c = 0; c < 3; ++c) out.v.at(f, c) = v[c];
      out.spread.at(f, 0) = (A * v - b).norm();
    }
  });
  return out;
}

LeftInverseResult left_inverse(const GeodesicFamily& fam,
                               const fields::TensorField& h, double F) {
  GEOXRAY_REQUIRE(fam.chart != nullptr &&
                      h.grid.size() == fam.chart->grid.size(),
                  "annulus: field grid does not match the chart grid");
  return left_inverse(fam, fields::interpolant(h), F);
}

}  // namespace geoxray::annulus
