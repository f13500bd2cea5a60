#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "geoxray/annulus.hpp"
#include "geoxray/fields.hpp"
#include "geoxray/geometry.hpp"

using namespace geoxray;
using annulus::FamilyOptions;
using annulus::GeodesicFamily;
using annulus::LeftInverseResult;
using fields::FieldCallable;
using fields::RegionIndex;
using fields::TensorField;
using geometry::MetricModel;
using geometry::RegionChart;

namespace {

RegionChart lens12() {
  RegionChart rc =
      RegionChart::lens_chart(MetricModel::lens(1.0, 0.14), 0.10, 0.03, 0.06,
                              12, 12);
  rc.build_masks();
  return rc;
}

// Chart-coordinate boundary defining function of the lens chart with its
// analytic gradient; cross-checked against rho_region below before use.
struct LensRho {
  double c, eps, kappa;
  double val(const Vec3& w, Vec3* grad = nullptr) const {
    const double yy = w[1] * w[1] + w[2] * w[2];
    const double S = w[0] - c + (eps - 0.5 * kappa) * yy;
    const double disc = std::sqrt(1.0 - 4.0 * eps * S);
    const double Z = (-1.0 + disc) / (2.0 * eps);
    if (grad) {
      (*grad)[0] = -1.0 / disc;
      (*grad)[1] = -(2.0 * eps - kappa) * w[1] / disc - kappa * w[1];
      (*grad)[2] = -(2.0 * eps - kappa) * w[2] / disc - kappa * w[2];
    }
    return Z - 0.5 * kappa * yy;
  }
};

// Scalar potential u = (rho + b1)^2 E (1 + 0.4 sin th): vanishes
// quadratically on the interior exit boundary rho = -b1, so the anchor value
// at every family exit point is zero and the recovery is exact up to
// quadrature error.
fields::ScalarPotential ring_scalar(const RegionChart& rc) {
  const LensRho rho{rc.c_depth, rc.model.eps, rc.model.kappa};
  const double b1 = rc.offsets[1];
  fields::ScalarPotential sp;
  sp.v = [rho, b1](const Vec3& w) {
    const double q = rho.val(w) + b1;
    const double E = std::exp(-(w[1] * w[1] + w[2] * w[2]) / 0.32);
    return q * q * E * (1 + 0.4 * std::sin(3 * w[0] + 2 * w[1] - w[2]));
  };
  sp.grad = [rho, b1](const Vec3& w) {
    Vec3 g;
    const double q = rho.val(w, &g) + b1;
    const double E = std::exp(-(w[1] * w[1] + w[2] * w[2]) / 0.32);
    const double th = 3 * w[0] + 2 * w[1] - w[2];
    const double M = E * (1 + 0.4 * std::sin(th));
    const double Mx = E * 1.2 * std::cos(th);
    const double My1 =
        E * (-(2 * w[1] / 0.32) * (1 + 0.4 * std::sin(th)) + 0.8 * std::cos(th));
    const double My2 =
        E * (-(2 * w[2] / 0.32) * (1 + 0.4 * std::sin(th)) - 0.4 * std::cos(th));
    return Vec3{2 * q * g[0] * M + q * q * Mx, 2 * q * g[1] * M + q * q * My1,
                2 * q * g[2] * M + q * q * My2};
  };
  return sp;
}

// One-form potential with frame components (rho + b1)^2 g_c, same vanishing
// structure.
fields::OneFormPotential ring_oneform(const RegionChart& rc) {
  const LensRho rho{rc.c_depth, rc.model.eps, rc.model.kappa};
  const double b1 = rc.offsets[1];
  fields::OneFormPotential op;
  op.w = [rho, b1](const Vec3& w, double* out) {
    const double q = rho.val(w) + b1;
    out[0] = q * q * (0.8 + 0.3 * std::sin(2 * w[0] + w[1]));
    out[1] = q * q * (0.5 * std::cos(w[0] - w[2]));
    out[2] = q * q * (0.6 + 0.4 * std::sin(w[1] + 2 * w[2]));
  };
  op.jac = [rho, b1](const Vec3& w, double* J) {
    Vec3 g;
    const double q = rho.val(w, &g) + b1;
    const double s0 = std::sin(2 * w[0] + w[1]), c0 = std::cos(2 * w[0] + w[1]);
    const double s1 = std::sin(w[0] - w[2]), c1 = std::cos(w[0] - w[2]);
    const double s2 = std::sin(w[1] + 2 * w[2]), c2 = std::cos(w[1] + 2 * w[2]);
    const double G[3] = {0.8 + 0.3 * s0, 0.5 * c1, 0.6 + 0.4 * s2};
    const double dG[3][3] = {{0.6 * c0, 0.3 * c0, 0.0},
                             {-0.5 * s1, 0.0, 0.5 * s1},
                             {0.0, 0.4 * c2, 0.8 * c2}};
    for (int c = 0; c < 3; ++c)
      for (int j = 0; j < 3; ++j)
        J[c * 3 + j] = 2 * q * g[j] * G[c] + q * q * dG[c][j];
  };
  return op;
}

Vec3 node_point(const RegionChart& rc, std::int64_t f) {
  const auto u = rc.grid.unidx(f);
  return rc.grid.node(u[0], u[1], u[2]);
}

// relative L2 error of a recovered field against exact component values,
// over the annulus nodes of a family
template <class Exact>
double annulus_rel_err(const GeodesicFamily& fam, const TensorField& v,
                       int rank, const Exact& exact) {
  double num = 0, den = 0;
  const int nc = fields::ncomp(rank);
  for (std::int64_t i = 0; i < fam.nnodes(); ++i) {
    const std::int64_t f = fam.nodes[(size_t)i];
    double ex[3];
    exact(node_point(*fam.chart, f), ex);
    for (int c = 0; c < nc; ++c) {
      num += sqr(v.at(f, c) - ex[c]);
      den += sqr(ex[c]);
    }
  }
  REQUIRE(den > 0);
  return std::sqrt(num / den);
}

double max_spread(const GeodesicFamily& fam, const TensorField& spread) {
  double m = 0;
  for (std::int64_t i = 0; i < fam.nnodes(); ++i)
    m = std::max(m, spread.at(fam.nodes[(size_t)i], 0));
  return m;
}

}  // namespace

TEST_CASE("quadrature weights: exact for quadratics on bisected-tail grids") {
  auto exact_int = [](double a, double b) {
    // integral of 3 tau^2 - 2 tau + 1
    auto prim = [](double t) { return t * t * t - t * t + t; };
    return prim(b) - prim(a);
  };
  auto apply = [](const std::vector<double>& t, const std::vector<double>& w) {
    double s = 0;
    for (size_t i = 0; i < t.size(); ++i)
      s += w[i] * (3 * t[i] * t[i] - 2 * t[i] + 1);
    return s;
  };
  const double h = 0.05;
  for (int nuni : {1, 2, 3, 4, 5, 9, 10}) {
    for (double frac : {0.3, 1.0}) {
      std::vector<double> t;
      for (int i = 0; i <= nuni; ++i) t.push_back(h * i);
      t.push_back(h * nuni + frac * h);
      const std::vector<double> w = annulus::simpson_tail_weights(t);
      double wsum = 0;
      for (double x : w) wsum += x;
      CHECK(wsum == doctest::Approx(t.back() - t.front()).epsilon(1e-13));
      CHECK(apply(t, w) ==
            doctest::Approx(exact_int(t.front(), t.back())).epsilon(1e-12));
    }
  }
  // two-point fallback integrates the span (trapezoid)
  {
    const std::vector<double> t{0.0, 0.02};
    const std::vector<double> w = annulus::simpson_tail_weights(t);
    CHECK(w[0] == doctest::Approx(0.01));
    CHECK(w[1] == doctest::Approx(0.01));
  }
  // degenerate tail (crossing bisected back to the last uniform sample):
  // the duplicate gets zero weight, no division blow-up
  {
    std::vector<double> t{0.0, h, 2 * h, 3 * h, 4 * h, 4 * h + 1e-16};
    const std::vector<double> w = annulus::simpson_tail_weights(t);
    CHECK(w.back() == 0.0);
    CHECK(apply(t, w) == doctest::Approx(exact_int(0.0, 4 * h)).epsilon(1e-12));
  }
}

TEST_CASE("quadrature weights: fourth-order on a smooth integrand") {
  auto err_at = [](int nuni) {
    const double span = 1.0;
    const double h = span / (nuni + 0.37);  // irregular 0.37 h tail
    std::vector<double> t;
    for (int i = 0; i <= nuni; ++i) t.push_back(h * i);
    t.push_back(span);
    const std::vector<double> w = annulus::simpson_tail_weights(t);
    double s = 0;
    for (size_t i = 0; i < t.size(); ++i) s += w[i] * std::cos(3 * t[i]);
    return std::fabs(s - std::sin(3.0) / 3.0);
  };
  const double e1 = err_at(40), e2 = err_at(80), e3 = err_at(160);
  CHECK(e1 / e2 > 12.0);
  CHECK(e2 / e3 > 12.0);
}

TEST_CASE("family: annulus nodes, launches, monotone depth, clean exits") {
  const RegionChart rc = lens12();
  const FamilyOptions opt;
  const GeodesicFamily fam = annulus::build_family(rc, 1, opt);

  // node set is exactly inside(1) minus inside(0)
  std::int64_t expect = 0;
  for (std::int64_t f = 0; f < rc.grid.size(); ++f)
    if (rc.inside[1][(size_t)f] && !rc.inside[0][(size_t)f]) ++expect;
  REQUIRE(fam.nnodes() == expect);
  REQUIRE((std::int64_t)fam.rays.size() == expect * opt.n_dirs);

  const double b1 = rc.offsets[1];
  for (std::int64_t i = 0; i < fam.nnodes(); ++i) {
    const Vec3 wn = node_point(rc, fam.nodes[(size_t)i]);
    for (int k = 0; k < opt.n_dirs; ++k) {
      const annulus::NodeRay& r = fam.ray(i, k);
      REQUIRE(r.samples.size() >= 2);
      // starts at the node with the beta-scaled fan launch
      for (int a = 0; a < 3; ++a)
        CHECK(r.samples.front().w[a] == doctest::Approx(wn[a]).epsilon(1e-12));
      const double phi = 2.0 * M_PI * k / opt.n_dirs;
      CHECK(r.launch[0] ==
            doctest::Approx((opt.beta0 + k * opt.dbeta) * wn[0]));
      CHECK(r.launch[1] == doctest::Approx(std::cos(phi)));
      CHECK(r.launch[2] == doctest::Approx(std::sin(phi)));
      // depth strictly increases, so the fundamental-theorem weights
      // exp(F (1/x - 1/x0)) never exceed one
      double qwsum = 0;
      for (size_t s = 0; s < r.samples.size(); ++s) {
        CHECK(r.samples[s].wdot[0] > 0.0);
        if (s > 0) CHECK(r.samples[s].w[0] >= r.samples[s - 1].w[0]);
        CHECK(1.0 / r.samples[s].w[0] - 1.0 / r.samples.front().w[0] <=
              1e-12);
        qwsum += r.samples[s].qw;
      }
      CHECK(qwsum == doctest::Approx(r.samples.back().t).epsilon(1e-11));
      // the bisected endpoint sits on the interior exit surface rho = -b1
      CHECK(std::fabs(rc.rho_region(r.samples.back().w) + b1) < 1e-8);
    }
  }
}

TEST_CASE("fundamental integrals: zero input and linearity") {
  const RegionChart rc = lens12();
  const GeodesicFamily fam = annulus::build_family(rc, 1, {});

  const FieldCallable zero{2, [](const Vec3&, double* c) {
                             for (int j = 0; j < 6; ++j) c[j] = 0.0;
                           }};
  for (std::int64_t i = 0; i < fam.nnodes(); i += 7)
    CHECK(annulus::integrate_fundamental(fam, zero, 1.0, i, 1) == 0.0);
  const LeftInverseResult rz = annulus::left_inverse(fam, zero, 1.0);
  for (double x : rz.v.data) CHECK(x == 0.0);
  for (double x : rz.spread.data) CHECK(x == 0.0);

  const FieldCallable h1{2, [](const Vec3& w, double* c) {
                           for (int j = 0; j < 6; ++j)
                             c[j] = std::sin(w[0] * (j + 1) + w[1]) + 0.2 * j;
                         }};
  const FieldCallable h2{2, [](const Vec3& w, double* c) {
                           for (int j = 0; j < 6; ++j)
                             c[j] = std::cos(w[2] * (j + 2)) - 0.1 * w[0];
                         }};
  const FieldCallable combo{2, [&](const Vec3& w, double* c) {
                              double a[6], b[6];
                              h1.eval(w, a);
                              h2.eval(w, b);
                              for (int j = 0; j < 6; ++j)
                                c[j] = 0.7 * a[j] - 1.3 * b[j];
                            }};
  const double F = 0.8;
  const LeftInverseResult r1 = annulus::left_inverse(fam, h1, F);
  const LeftInverseResult r2 = annulus::left_inverse(fam, h2, F);
  const LeftInverseResult rc12 = annulus::left_inverse(fam, combo, F);
  double scale = 0;
  for (double x : rc12.v.data) scale = std::max(scale, std::fabs(x));
  for (size_t j = 0; j < rc12.v.data.size(); ++j)
    CHECK(std::fabs(rc12.v.data[j] -
                    (0.7 * r1.v.data[j] - 1.3 * r2.v.data[j])) <=
          1e-13 * scale);
}

TEST_CASE("left inverse: scalar potential round trip") {
  const RegionChart rc = lens12();
  const GeodesicFamily fam = annulus::build_family(rc, 1, {});
  const fields::ScalarPotential sp = ring_scalar(rc);

  // the hand analytic region function must match the chart's
  const LensRho rho{rc.c_depth, rc.model.eps, rc.model.kappa};
  for (const Vec3& w :
       {Vec3{0.05, 0.2, -0.3}, Vec3{0.11, -0.4, 0.1}, Vec3{0.02, 0.0, 0.55}})
    CHECK(rho.val(w) == doctest::Approx(rc.rho_region(w)).epsilon(1e-13));

  const double F = 1.1;
  const FieldCallable h = fields::potential_derivative(rc, F, sp);
  const LeftInverseResult r = annulus::left_inverse(fam, h, F);
  const double err = annulus_rel_err(
      fam, r.v, 0, [&](const Vec3& w, double* ex) { ex[0] = sp.v(w); });
  CHECK(err < 5e-3);   // budget; measures 2.0e-4 at the default step
  CHECK(max_spread(fam, r.spread) < 1e-6);  // measures 2.9e-7
}

TEST_CASE("left inverse: one-form potential round trip beats the grid route") {
  const RegionChart rc = lens12();
  const GeodesicFamily fam = annulus::build_family(rc, 1, {});
  const fields::OneFormPotential op = ring_oneform(rc);
  const double F = 0.9;
  const FieldCallable h = fields::potential_derivative(rc, F, op);

  const LeftInverseResult r = annulus::left_inverse(fam, h, F);
  auto exact = [&](const Vec3& w, double* ex) { op.w(w, ex); };
  const double err = annulus_rel_err(fam, r.v, 1, exact);
  CHECK(err < 5e-3);  // budget; measures 1.5e-3 at the default step
  CHECK(max_spread(fam, r.spread) < 1e-5);  // measures 2.4e-6

  // grid-sampled input goes through trilinear interpolation, whose error
  // does not telescope along rays; the callable route must win by far
  const TensorField hg = fields::sample_callable(h, rc.grid);
  const LeftInverseResult rg = annulus::left_inverse(fam, hg, F);
  const double err_g = annulus_rel_err(fam, rg.v, 1, exact);
  CHECK(err < 0.05 * err_g);
}

TEST_CASE("left inverse: fourth-order step convergence on both ranks") {
  const RegionChart rc = lens12();
  const fields::ScalarPotential sp = ring_scalar(rc);
  const fields::OneFormPotential op = ring_oneform(rc);
  const double F = 1.1;
  const FieldCallable h1 = fields::potential_derivative(rc, F, sp);
  const FieldCallable h2 = fields::potential_derivative(rc, F, op);

  std::vector<double> e1, e2;
  for (double ht : {1e-2, 5e-3, 2.5e-3}) {
    FamilyOptions o;
    o.h_t = ht;
    const GeodesicFamily fam = annulus::build_family(rc, 1, o);
    const LeftInverseResult r1 = annulus::left_inverse(fam, h1, F);
    const LeftInverseResult r2 = annulus::left_inverse(fam, h2, F);
    e1.push_back(annulus_rel_err(
        fam, r1.v, 0, [&](const Vec3& w, double* ex) { ex[0] = sp.v(w); }));
    e2.push_back(annulus_rel_err(
        fam, r2.v, 1, [&](const Vec3& w, double* ex) { op.w(w, ex); }));
  }
  // asymptotic ratio is 16 per halving; measures 17.1/16.6 and 16.5/17.9
  for (size_t j = 0; j + 1 < e1.size(); ++j) {
    CHECK(e1[j] / e1[j + 1] > 10.0);
    CHECK(e2[j] / e2[j + 1] > 10.0);
  }
}

TEST_CASE("spread: scales linearly with consistency-breaking noise") {
  const RegionChart rc = lens12();
  const GeodesicFamily fam = annulus::build_family(rc, 1, {});
  const fields::OneFormPotential op = ring_oneform(rc);
  const double F = 0.9;
  const FieldCallable h = fields::potential_derivative(rc, F, op);

  auto noisy = [&](double delta) {
    return FieldCallable{2, [h, delta](const Vec3& w, double* c) {
                           h.eval(w, c);
                           const double n = std::sin(7 * w[0] + 3 * w[1]) *
                                            std::cos(2 * w[2] + 1.0);
                           for (int j = 0; j < 6; ++j)
                             c[j] += delta * n * (1.0 + 0.3 * j);
                         }};
  };
  const double s0 = max_spread(fam, annulus::left_inverse(fam, h, F).spread);
  const double s1 =
      max_spread(fam, annulus::left_inverse(fam, noisy(1e-3), F).spread);
  const double s2 =
      max_spread(fam, annulus::left_inverse(fam, noisy(1e-2), F).spread);
  CHECK(s1 > 100.0 * s0);  // noise dominates the quadrature floor
  CHECK(s2 / s1 == doctest::Approx(10.0).epsilon(0.05));
  CHECK(s1 > 0.1 * 1e-3);  // the diagnostic actually sees the perturbation
  CHECK(s1 < 5.0 * 1e-3);
}

TEST_CASE("errors: bad options, missing masks, unreachable exits") {
  const RegionChart rc = lens12();

  {
    FamilyOptions o;
    o.n_dirs = 2;  // cannot determine a one-form from two directions
    CHECK_THROWS_AS((void)annulus::build_family(rc, 1, o), domain_error);
  }
  {
    FamilyOptions o;
    o.cond_cap = 1.0;  // no fan is perfectly conditioned
    CHECK_THROWS_AS((void)annulus::build_family(rc, 1, o), config_error);
  }
  {
    RegionChart bare = lens12();
    bare.inside[1].clear();  // chart factories build masks; strip them
    CHECK_THROWS_AS((void)annulus::build_family(bare, 1, {}), config_error);
  }
  CHECK_THROWS_AS((void)annulus::build_family(rc, 0, {}), domain_error);
  {
    FamilyOptions o;
    o.t_max = 0.02;  // too short to reach the exit surface
    try {
      (void)annulus::build_family(rc, 1, o);
      FAIL("unreachable exit not diagnosed");
    } catch (const domain_error& e) {
      CHECK(std::string(e.what()).find("node") != std::string::npos);
    }
  }
}

TEST_CASE("depth-weighted gain envelope (recorded, not asserted)") {
  const RegionChart rc = lens12();
  const GeodesicFamily fam = annulus::build_family(rc, 1, {});
  const RegionIndex R(rc, 1);
  const fields::OneFormPotential op = ring_oneform(rc);
  const double F = 0.9;
  const FieldCallable h = fields::potential_derivative(rc, F, op);
  const TensorField hg = fields::sample_callable(h, rc.grid);
  const LeftInverseResult r = annulus::left_inverse(fam, h, F);

  // gain between x^{2r}-weighted L2 norms (weight exponent 4 + 2r includes
  // the plain volume): the loss of depth powers between input and output
  // stays bounded for small r and is recorded for the record
  for (double rpow : {0.0, 1.0, 2.0}) {
    const std::vector<double> w_in = fields::weight_vector(R, 2, 4 + 2 * rpow);
    const std::vector<double> w_out =
        fields::weight_vector(R, 1, 4 + 2 * rpow);
    double nin = 0, nout = 0;
    for (std::int64_t i = 0; i < R.count; ++i) {
      const std::int64_t f = R.node_of[(size_t)i];
      for (int c = 0; c < 6; ++c)
        nin += w_in[(size_t)(i * 6 + c)] * sqr(hg.at(f, c));
      for (int c = 0; c < 3; ++c)
        nout += w_out[(size_t)(i * 3 + c)] * sqr(r.v.at(f, c));
    }
    const double gain = std::sqrt(nout) / std::sqrt(nin);
    CHECK(std::isfinite(gain));
    MESSAGE("x^", rpow, "-weighted gain |v|/|h| = ", gain);
  }
}
