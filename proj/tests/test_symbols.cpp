#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <complex>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "geoxray/common.hpp"
#include "geoxray/symbols.hpp"

using namespace geoxray;
using symbols::CMat;
using symbols::Cplx;
using symbols::CVec;
using symbols::ScanOptions;
using symbols::ScanResult;
using symbols::SymbolPoint;

namespace {

constexpr double kPi = 3.14159265358979323846;
const Cplx kImag{0.0, 1.0};

SymbolPoint point(double xi, double e1, double e2, double F, double alpha = 1.0,
                  std::array<double, 3> a = {0.0, 0.0, 0.0}) {
  SymbolPoint p;
  p.xi = xi;
  p.eta = {e1, e2};
  p.F = F;
  p.alpha = alpha;
  p.a = a;
  return p;
}

double max_abs(const CMat& m) { return m.cwiseAbs().maxCoeff(); }

double min_eig(const CMat& m) {
  Eigen::SelfAdjointEigenSolver<CMat> es(m);
  REQUIRE(es.info() == Eigen::Success);
  return es.eigenvalues()(0);
}

double max_eig(const CMat& m) {
  Eigen::SelfAdjointEigenSolver<CMat> es(m);
  REQUIRE(es.info() == Eigen::Success);
  return es.eigenvalues()(m.rows() - 1);
}

// Smallest restricted eigenvalue over the largest full eigenvalue -- the
// normalization threshold_scan uses internally.
double rel_margin(const SymbolPoint& p, int rank) {
  const CMat M = symbols::finite_point_form(p, rank);
  const CMat B = symbols::delta_kernel_basis(p, rank, false);
  return min_eig(CMat(B.adjoint() * M * B)) / max_eig(M);
}

// Independent assembly of the one-form composite symbol: the derivative
// symbol on functions is the plain column (xi + iF, eta1, eta2), so the
// composite divergence-of-derivative symbol is its rank-one outer product.
CMat oneform_outer_oracle(const SymbolPoint& p) {
  CVec col(3);
  col << Cplx(p.xi, p.F), Cplx(p.eta[0], 0.0), Cplx(p.eta[1], 0.0);
  return col * col.adjoint();
}

// Independent assembly of the 2-tensor composite symbol through the full
// 3x3-matrix representation: write the symmetrized derivative symbol with
// all nine entries spelled out (no pairing weights anywhere -- duplicated
// entries carry the multiplicity implicitly), take the plain adjoint there,
// and read the composite back into packed (NN, N1, N2, 11, 12, 22) storage.
CMat
twotensor_fullrep_oracle(const SymbolPoint& p) {
  const Cplx z(p.xi, p.F);
  const Cplx e1(p.eta[0], 0.0), e2(p.eta[1], 0.0);
  // Rows: (N,N),(N,1),(N,2),(1,N),(2,N),(1,1),(1,2),(2,1),(2,2).
  CMat D9 = CMat::Zero(9, 3);
  D9(0, 0) = z;
  D9(1, 0) = 0.5 * e1;
  D9(1, 1) = 0.5 * z;
  D9(2, 0) = 0.5 * e2;
  D9(2, 2) = 0.5 * z;
  D9.row(3) = D9.row(1);
  D9.row(4) = D9.row(2);
  D9(5, 0) = p.a[0];
  D9(5, 1) = e1;
  D9(6, 0) = p.a[1];
  D9(6, 1) = 0.5 * e2;
  D9(6, 2) = 0.5 * e1;
  D9.row(7) = D9.row(6);
  D9(8, 0) = p.a[2];
  D9(8, 2) = e2;
  const CMat P9 = D9 * D9.adjoint();

  // Embed each packed basis tensor as a genuine symmetric matrix (duplicated
  // off-diagonal entries), push it through the full-representation composite,
  // and read representative rows back into packed storage.
  CMat embed = CMat::Zero(9, 6);
  embed(0, 0) = 1.0;
  embed(1, 1) = embed(3, 1) = 1.0;
  embed(2, 2) = embed(4, 2) = 1.0;
  embed(5, 3) = 1.0;
  embed(6, 4) = embed(7, 4) = 1.0;
  embed(8, 5) = 1.0;
  const CMat P9E = P9 * embed;
  const std::array<int, 6> rep_row{0, 1, 2, 5, 6, 8};
  CMat packed(6, 6);
  for (int r = 0; r < 6; ++r) packed.row(r) = P9E.row(rep_row[r]);
  return packed;
}

// Positive roots w of (1+w)^2 = 2 (alpha/F) w; the 2-tensor form with a = 0
// touches zero exactly at xi = 0, |eta| = F sqrt(w).  Real roots exist iff
// F <= alpha/2.
std::pair<double, double> touching_ws(double alpha, double F) {
  const double b = 2.0 - 2.0 * alpha / F;
  const double disc = b * b - 4.0;
  REQUIRE(disc >= 0.0);
  const double s = std::sqrt(disc);
  return {0.5 * (-b - s), 0.5 * (-b + s)};
}

}  // namespace

// ===========================================================================
// Symbol factors
// ===========================================================================

TEST_CASE("function-to-one-form composite at zero frequency is diag(F^2,0,0)") {
  const SymbolPoint p = point(0.0, 0.0, 0.0, 1.7);
  const CMat P = symbols::sigma_ds_delta(p, 1);
  CMat expect = CMat::Zero(3, 3);
  expect(0, 0) = Cplx(1.7 * 1.7, 0.0);
  CHECK(max_abs(P - expect) <= 1e-15);
}

TEST_CASE("composite symbol is Hermitian in the multiplicity-weighted pairing") {
  for (int rank : {1, 2}) {
    const SymbolPoint p =
        point(0.63, -1.21, 0.44, 0.85, 1.3, {0.21, -0.34, 0.55});
    const CMat P = symbols::sigma_ds_delta(p, rank);
    const Eigen::VectorXd w = symbols::fiber_weights(rank);
    const CMat WP = w.asDiagonal() * P;
    CHECK(max_abs(WP - WP.adjoint()) <= 1e-14);
  }
}

TEST_CASE("divergence symbol rows are exactly the kernel conditions") {
  const double xi = -0.37, e1 = 0.91, e2 = -0.52, F = 1.15;
  const std::array<double, 3> a{0.33, -0.18, 0.47};
  const SymbolPoint p = point(xi, e1, e2, F, 1.0, a);
  const Cplx zb(xi, -F);

  const CMat S1 = symbols::sigma_delta(p, 1);
  CMat expect1(1, 3);
  expect1 << zb, Cplx(e1, 0.0), Cplx(e2, 0.0);
  CHECK(max_abs(S1 - expect1) <= 1e-15);

  const CMat S2 = symbols::sigma_delta(p, 2);
  CMat expect2 = CMat::Zero(3, 6);
  expect2.row(0) << zb, Cplx(e1), Cplx(e2), Cplx(a[0]), Cplx(2.0 * a[1]),
      Cplx(a[2]);
  expect2.row(1) << Cplx(0), zb, Cplx(0), Cplx(e1), Cplx(e2), Cplx(0);
  expect2.row(2) << Cplx(0), Cplx(0), zb, Cplx(0), Cplx(e1), Cplx(e2);
  CHECK(max_abs(S2 - expect2) <= 1e-15);
}

TEST_CASE("composite symbol matches two independent assembly routes") {
  const std::vector<SymbolPoint> pts{
      point(0.63, -1.21, 0.44, 0.85, 1.3, {0.21, -0.34, 0.55}),
      point(-2.10, 0.05, 1.90, 0.40, 0.7, {0.0, 0.0, 0.0}),
      point(0.0, 3.0, -4.0, 2.50, 1.0, {1.2, 0.8, -0.5}),
  };
  for (const auto& p : pts) {
    CHECK(max_abs(symbols::sigma_ds_delta(p, 1) - oneform_outer_oracle(p)) <=
          1e-14);
    const CMat P = symbols::sigma_ds_delta(p, 2);
    CHECK(max_abs(P - twotensor_fullrep_oracle(p)) <=
          1e-14 * std::max(1.0, max_abs(P)));
  }
}

TEST_CASE("divergence-kernel bases have the right dimension and are W-unitary") {
  const SymbolPoint p = point(0.2, -0.9, 0.4, 1.1, 1.0, {0.3, 0.1, -0.2});
  for (int rank : {1, 2}) {
    const int nc = symbols::ncomp(rank);
    const int kdim = nc - symbols::ncomp(rank - 1);
    for (bool at_inf : {false, true}) {
      const CMat B = symbols::delta_kernel_basis(p, rank, at_inf);
      CHECK(B.rows() == nc);
      CHECK(B.cols() == kdim);
      const Eigen::VectorXd w = symbols::fiber_weights(rank);
      CHECK(max_abs(CMat(B.adjoint() * w.asDiagonal() * B) -
                    CMat::Identity(kdim, kdim)) <= 1e-13);
      // Rows of the divergence symbol annihilate the basis.
      SymbolPoint q = p;
      if (at_inf) {
        q.F = 0.0;
        q.a = {0.0, 0.0, 0.0};
      }
      CHECK(max_abs(symbols::sigma_delta(q, rank) * B) <= 1e-13);
    }
  }
  // Degenerate frequency point at fiber infinity: zero covector.
  CHECK_THROWS_AS(symbols::delta_kernel_basis(point(0, 0, 0, 1.0), 2, true),
                  domain_error);
}

// ===========================================================================
// Fiber-infinity form
// ===========================================================================

TEST_CASE("fiber-infinity margins at the normal covector are pi and pi/2") {
  // At (xi, eta) = (1, 0) the ray circle is the equator: the normal slope
  // vanishes identically, the default cutoff is 1 there, and the integrals
  // reduce to exact circle averages.
  CHECK(symbols::fiber_infinity_check(1.0, {0.0, 0.0}, 1) ==
        doctest::Approx(kPi).epsilon(1e-10));
  CHECK(symbols::fiber_infinity_check(1.0, {0.0, 0.0}, 2) ==
        doctest::Approx(0.5 * kPi).epsilon(1e-10));
}

TEST_CASE("fiber-infinity margins at tangential and mixed covectors") {
  CHECK(symbols::fiber_infinity_check(0.0, {1.0, 0.0}, 1) ==
        doctest::Approx(1.726167).epsilon(5e-6));
  // Regression pin, converged to 1e-10 by 64 angles (default is 256).
  CHECK(symbols::fiber_infinity_check(0.6, {-0.7, 0.2}, 2) ==
        doctest::Approx(2.299963310140).epsilon(1e-9));
  // Trapezoid convergence: doubling the angle count changes nothing.
  const double c64 = symbols::fiber_infinity_check(0.6, {-0.7, 0.2}, 2, {}, 64);
  const double c256 =
      symbols::fiber_infinity_check(0.6, {-0.7, 0.2}, 2, {}, 256);
  CHECK(std::abs(c64 - c256) <= 1e-9);
}

TEST_CASE("fiber-infinity form is projectively invariant and PSD") {
  const double base = symbols::fiber_infinity_check(0.6, {-0.7, 0.2}, 2);
  for (double s : {0.01, 7.0, 1234.5}) {
    const double v =
        symbols::fiber_infinity_check(0.6 * s, {-0.7 * s, 0.2 * s}, 2);
    CHECK(std::abs(v - base) <= 1e-12 * std::max(1.0, std::abs(base)));
  }
  for (int rank : {1, 2}) {
    const CMat M = symbols::fiber_infinity_form(0.31, {0.87, -0.64}, rank);
    CHECK(min_eig(M) >= -1e-12 * max_eig(M));
  }
}

TEST_CASE("zero cutoff makes the fiber-infinity form vanish") {
  const auto zero = [](double) { return 0.0; };
  const CMat M = symbols::fiber_infinity_form(0.3, {0.8, -0.5}, 2, zero);
  CHECK(max_abs(M) == 0.0);
}

// ===========================================================================
// Finite-point form
// ===========================================================================

TEST_CASE("one-form finite-point margins are positive at every weight") {
  double worst = 1e30;
  for (double F : {0.25, 1.0, 4.0, 16.0})
    for (double xi : {-3.0, -0.5, 0.0, 0.7, 3.0})
      for (double en : {0.0, 0.5, 2.0, 10.0, 40.0}) {
        const double m = symbols::finite_point_check(point(xi, en, 0.0, F), 1);
        worst = std::min(worst, m);
        CHECK(m > 0.0);
      }
  CHECK(worst > 1e-6);
}

TEST_CASE("2-tensor finite-point margins are positive at vanishing eta") {
  for (double F : {0.25, 1.0, 4.0}) {
    const SymbolPoint p = point(0.0, 0.0, 0.0, F);
    CHECK(symbols::finite_point_check(p, 2) > 0.0);
    CHECK(rel_margin(p, 2) > 1e-4);
  }
}

TEST_CASE("windowed and uniform circle rules agree at large eta") {
  for (int rank : {1, 2}) {
    const SymbolPoint p = point(0.6, 40.0, -9.0, 1.0, 1.0, {0.2, 0.1, 0.3});
    const CMat Mw =
        symbols::finite_point_form(p, rank, 256, symbols::CircleRule::kWindowed);
    const CMat Mu = symbols::finite_point_form(p, rank, 16384,
                                               symbols::CircleRule::kUniform);
    CHECK(max_abs(Mw - Mu) <= 1e-11 * std::max(1.0, max_abs(Mu)));
  }
}

TEST_CASE("2-tensor form touches zero exactly on the closed-form circle") {
  // With a = 0 the restricted form degenerates exactly at xi = 0,
  // |eta| = F sqrt(w), (1+w)^2 = 2 (alpha/F) w -- possible iff F <= alpha/2.
  for (double F : {0.125, 0.25, 0.4}) {
    const auto [wlo, whi] = touching_ws(1.0, F);
    for (double w : {wlo, whi}) {
      const SymbolPoint p = point(0.0, F * std::sqrt(w), 0.0, F);
      CHECK(std::abs(rel_margin(p, 2)) <= 1e-10);
      // The full form stays far from zero: only the restriction degenerates.
      const CMat M = symbols::finite_point_form(p, 2);
      CHECK(max_eig(M) > 1e-3);
    }
  }
  // At the threshold weight the double root sits at |eta| = F exactly.
  {
    const SymbolPoint p = point(0.0, 0.5, 0.0, 0.5);
    CHECK(std::abs(rel_margin(p, 2)) <= 1e-10);
  }
  // Above the threshold there is no real root and the margin lifts off.
  {
    double worst = 1e30;
    for (double en = 0.05; en <= 1.4; en += 0.02)
      worst = std::min(worst, rel_margin(point(0.0, en, 0.0, 0.65), 2));
    CHECK(worst >= 1e-3);
  }
}

TEST_CASE("finite-point form rejects unbalanced cutoffs and F <= 0") {
  SymbolPoint p = point(0.3, 0.7, 0.0, 1.0);
  p.nu = 2.0;  // balanced would be alpha/F = 1
  CHECK_THROWS_AS(symbols::finite_point_form(p, 2), domain_error);
  CHECK_THROWS_AS(symbols::finite_point_form(point(0.3, 0.7, 0.0, 0.0), 1),
                  domain_error);
}

// ===========================================================================
// Gaussian Fourier certification of the coefficient tables
// ===========================================================================

TEST_CASE("frequency-side tables match the numeric Gaussian transform") {
  const std::vector<SymbolPoint> pts{
      point(0.80, 0.3, -0.1, 1.00, 1.00),  point(-0.45, 1.2, 0.6, 0.70, 0.90),
      point(0.15, -0.8, 0.9, 1.50, 1.20),  point(1.30, 0.0, 0.4, 0.55, 0.70),
      point(-0.90, -0.6, -0.7, 1.10, 1.40),
  };
  for (const auto& p : pts) {
    const auto dev = symbols::gaussian_ft_consistency(p);
    CHECK(dev.gaussian_dev <= 1e-8);
    CHECK(dev.table_dev <= 1e-6);
    CHECK(dev.realness_dev <= 1e-10);
  }
}

TEST_CASE("coefficient tables have the exact zero-argument values") {
  const SymbolPoint p = point(0.62, 0.9, -0.3, 0.85, 1.1);
  const double nu = p.nu_value();
  const Cplx z(p.xi, p.F);
  const Cplx phi = p.phi();

  const auto B = symbols::b_table(p, 0.0);
  CHECK(std::abs(B[0][0] - 1.0) <= 1e-15);
  CHECK(std::abs(B[1][0]) <= 1e-15);
  CHECK(std::abs(B[0][1]) <= 1e-15);
  CHECK(std::abs(B[1][1] - nu) <= 1e-14);
  CHECK(std::abs(B[2][0] - nu) <= 1e-14);
  CHECK(std::abs(B[2][1]) <= 1e-15);
  CHECK(std::abs(B[2][2] - 3.0 * nu * nu) <= 1e-14);

  const auto C = symbols::c_table(p, 0.0);
  CHECK(std::abs(C[0][0] - 1.0) <= 1e-15);
  CHECK(std::abs(C[1][0]) <= 1e-15);
  CHECK(std::abs(C[1][1]) <= 1e-15);
  CHECK(std::abs(C[2][0] - (-2.0 * kImag * p.alpha * nu * z / phi)) <=
        1e-14);
  CHECK(std::abs(C[2][2] - 4.0 * p.alpha * p.alpha * nu / phi) <= 1e-14);
}

// ===========================================================================
// Threshold sweep
// ===========================================================================

TEST_CASE("threshold scan: one-forms resolve at the ladder bottom") {
  const std::vector<double> ladder{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  const ScanResult r = symbols::threshold_scan(1.0, {0, 0, 0}, 1, ladder);
  REQUIRE(r.rows.size() == ladder.size());
  CHECK(r.found);
  CHECK(r.f0_index == 0);
  CHECK(r.f0() == doctest::Approx(0.125));
  for (const auto& row : r.rows) CHECK(row.margin > 1e-2);
}

TEST_CASE("threshold scan: flat 2-tensors fail exactly through alpha/2") {
  const std::vector<double> ladder{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  const ScanResult r = symbols::threshold_scan(1.0, {0, 0, 0}, 2, ladder);
  REQUIRE(r.rows.size() == ladder.size());
  CHECK(r.found);
  CHECK(r.f0() == doctest::Approx(1.0));  // first rung above alpha/2 = 0.5

  // Rungs at or below alpha/2 are machine-zero touchings; the descent lands
  // on the closed-form circle |eta| = F sqrt(w) with xi = 0.
  for (int i = 0; i < 3; ++i) {
    const auto& row = r.rows[i];
    CHECK(std::abs(row.margin) <= 1e-10);
    CHECK(row.refined);
    CHECK(!row.at_infinity);
    CHECK(std::abs(row.xi) <= 1e-3);
    const auto [wlo, whi] = touching_ws(1.0, row.F);
    const double en = std::hypot(row.eta[0], row.eta[1]);
    const double dlo = std::abs(en - row.F * std::sqrt(wlo));
    const double dhi = std::abs(en - row.F * std::sqrt(whi));
    CHECK(std::min(dlo, dhi) <= 1e-2);
  }
  // Above the threshold every rung clears the floor with real room.
  for (size_t i = 3; i < r.rows.size(); ++i) CHECK(r.rows[i].margin > 1e-2);
  // The first two rungs past the threshold grow; the top rungs are capped
  // by the fiber-infinity margin, which narrows with the matched cutoff.
  CHECK(r.rows[3].margin < r.rows[4].margin);
  CHECK(r.rows[4].at_infinity);
}

TEST_CASE("threshold scan: the 2-tensor threshold tracks alpha/2") {
  const std::vector<double> ladder{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  const ScanResult r = symbols::threshold_scan(2.0, {0, 0, 0}, 2, ladder);
  CHECK(r.found);
  CHECK(r.f0() == doctest::Approx(2.0));  // first rung above alpha/2 = 1.0
  CHECK(std::abs(r.rows[3].margin) <= 1e-10);  // F = 1.0 still touches
}

TEST_CASE("threshold scan: curvature lifts the flat degeneracy") {
  // Margins of the F = alpha/2 rung grow with the curvature scale and
  // saturate once the curvature dominates (the binding kernel directions
  // then satisfy a . v_TT = 0), so the measured threshold is non-increasing
  // in |a|.  Scale 1 is the magnitude range produced by the lens model.
  const std::vector<double> rung{0.5};
  const std::array<double, 3> base{0.4, 0.15, 0.55};
  const auto scan_margin = [&](double s) {
    const std::array<double, 3> a{s * base[0], s * base[1], s * base[2]};
    const ScanResult r = symbols::threshold_scan(1.0, a, 2, rung);
    REQUIRE(r.rows.size() == 1);
    return r.rows[0].margin;
  };
  const double m0 = scan_margin(0.0);
  const double m01 = scan_margin(0.1);
  const double m1 = scan_margin(1.0);
  const double m2 = scan_margin(2.0);
  CHECK(std::abs(m0) <= 1e-10);
  CHECK(m01 > 1e-5);
  CHECK(m01 < 1e-3);
  CHECK(m1 > 3e-3);
  CHECK(m1 > 10.0 * m01);
  CHECK(std::abs(m2 - m1) <= 0.05 * m1);

  // On the full ladder the measured f0 therefore drops to the bottom rung.
  const std::vector<double> ladder{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  const ScanResult r1 = symbols::threshold_scan(1.0, base, 2, ladder);
  CHECK(r1.found);
  CHECK(r1.f0_index == 0);
}

TEST_CASE("threshold scan validates its arguments") {
  CHECK_THROWS_AS(symbols::threshold_scan(1.0, {0, 0, 0}, 0, {1.0}),
                  domain_error);
  CHECK_THROWS_AS(symbols::threshold_scan(0.0, {0, 0, 0}, 2, {1.0}),
                  domain_error);
  CHECK_THROWS_AS(symbols::threshold_scan(1.0, {0, 0, 0}, 2, {}), domain_error);
  CHECK_THROWS_AS(symbols::threshold_scan(1.0, {0, 0, 0}, 2, {1.0, 0.5}),
                  domain_error);
  ScanOptions bad;
  bad.margin_floor = 0.0;
  CHECK_THROWS_AS(symbols::threshold_scan(1.0, {0, 0, 0}, 2, {1.0}, bad),
                  domain_error);
}
