// Frequency-side ellipticity checks: exact symbol matrices of the conjugated
// derivative pair, rank-one projector integrals over ray directions at fiber
// infinity and at finite frequency points, Fourier certification of the
// closed-form coefficient tables, and the joint threshold sweep.
//
// Conventions (shared with the grid-side operators):
//   * component storage: one-forms (N, T1, T2); symmetric 2-tensors
//     (NN, N1, N2, 11, 12, 22) with pairing multiplicities (1,2,2,1,2,1);
//   * sigma_delta is the weighted conjugate transpose of sigma_d, so the
//     symbol-level adjoint identity is exact by construction;
//   * all direction integrals are over the unit circle (n = 3), trapezoid
//     rule, which is spectrally accurate for smooth periodic integrands.

#include "geoxray/symbols.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace geoxray::symbols {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

const Cplx kI{0.0, 1.0};

// Hermitian-symmetrized smallest eigenvalue of a small matrix.
double min_eig(const CMat& R) {
  Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (R + R.adjoint()));
  GEOXRAY_REQUIRE(es.info() == Eigen::Success,
                  "symbols: eigenvalue solve failed");
  return es.eigenvalues()(0);
}

double default_chi(double s) { return std::exp(-0.5 * s * s); }

}  // namespace

Eigen::VectorXd fiber_weights(int rank) {
  GEOXRAY_REQUIRE(rank == 1 || rank == 2, "symbols: rank must be 1 or 2");
  Eigen::VectorXd w(ncomp(rank));
  if (rank == 1) {
    w << 1, 1, 1;
  } else {
    w << 1, 2, 2, 1, 2, 1;
  }
  return w;
}

// ============================ symbol matrices =============================

CMat sigma_d(const SymbolPoint& p, int rank) {
  GEOXRAY_REQUIRE(rank == 1 || rank == 2, "symbols: rank must be 1 or 2");
  const Cplx z = p.xi_up();
  const double e1 = p.eta[0], e2 = p.eta[1];
  CMat D = CMat::Zero(ncomp(rank), ncomp(rank - 1));
  if (rank == 1) {
    D(0, 0) = z;
    D(1, 0) = e1;
    D(2, 0) = e2;
    return D;
  }
  // Output rows (NN, N1, N2, 11, 12, 22), input one-form (vN, v1, v2).
  D(0, 0) = z;
  D(1, 0) = 0.5 * e1;
  D(1, 1) = 0.5 * z;
  D(2, 0) = 0.5 * e2;
  D(2, 2) = 0.5 * z;
  D(3, 0) = p.a[0];
  D(3, 1) = e1;
  D(4, 0) = p.a[1];
  D(4, 1) = 0.5 * e2;
  D(4, 2) = 0.5 * e1;
  D(5, 0) = p.a[2];
  D(5, 2) = e2;
  return D;
}

CMat sigma_delta(const SymbolPoint& p, int rank) {
  const CMat D = sigma_d(p, rank);
  const Eigen::VectorXd w_out = fiber_weights(rank);
  // Scalar and one-form input weights are all ones, so the weighted adjoint
  // is D^H W_out.
  return D.adjoint() * w_out.asDiagonal();
}

CMat sigma_ds_delta(const SymbolPoint& p, int rank) {
  return sigma_d(p, rank) * sigma_delta(p, rank);
}

CMat delta_kernel_basis(const SymbolPoint& p, int rank,
                        bool at_fiber_infinity) {
  GEOXRAY_REQUIRE(rank == 1 || rank == 2, "symbols: rank must be 1 or 2");
  SymbolPoint q = p;
  if (at_fiber_infinity) {
    // Leading order in (xi, eta): the conjugation weight and the zero-order
    // coupling both drop.
    q.F = 0.0;
    q.a = {0.0, 0.0, 0.0};
  }
  const CMat K = sigma_delta(q, rank);
  Eigen::JacobiSVD<CMat> svd(K, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  const double tol =
      static_cast<double>(std::max(K.rows(), K.cols())) * 1e-14 * smax;
  int rk = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol) ++rk;
  const int expected = (rank == 1) ? 2 : 3;  // n-1 resp. n(n+1)/2 - n
  const int dim = ncomp(rank) - rk;
  GEOXRAY_REQUIRE(
      dim == expected,
      "symbols: divergence-symbol kernel dimension " + std::to_string(dim) +
          " != " + std::to_string(expected) +
          " (degenerate frequency point, e.g. (xi, eta) = 0 at fiber "
          "infinity)");
  CMat B = svd.matrixV().rightCols(expected);
  // Re-orthonormalize in the multiplicity-weighted inner product so that
  // restricted eigenvalues are Rayleigh quotients against the same norm the
  // grid operators use.
  const Eigen::VectorXd w = fiber_weights(rank);
  const CMat G = B.adjoint() * w.asDiagonal() * B;
  Eigen::LLT<CMat> llt(G);
  GEOXRAY_REQUIRE(llt.info() == Eigen::Success,
                  "symbols: kernel Gram factorization failed");
  return llt.matrixU().solve<Eigen::OnTheRight>(B);
}

// ======================== fiber-infinity ellipticity ======================

CMat fiber_infinity_form(double xi, const std::array<double, 2>& eta, int rank,
                         const std::function<double(double)>& chi,
                         int n_angles) {
  GEOXRAY_REQUIRE(rank == 1 || rank == 2, "symbols: rank must be 1 or 2");
  GEOXRAY_REQUIRE(n_angles >= 1, "symbols: need at least one angle");
  const double zeta_norm =
      std::sqrt(xi * xi + eta[0] * eta[0] + eta[1] * eta[1]);
  GEOXRAY_REQUIRE(zeta_norm > 0.0,
                  "symbols: fiber-infinity check needs a nonzero frequency "
                  "direction");
  const std::function<double(double)>& cut = chi ? chi : default_chi;

  // Orthonormal basis {b1, b2} of the plane conormal to (xi, eta).
  const Vec3 zeta{xi / zeta_norm, eta[0] / zeta_norm, eta[1] / zeta_norm};
  int ax = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(zeta[i]) < std::abs(zeta[ax])) ax = i;
  Vec3 b1{0, 0, 0};
  b1[ax] = 1.0;
  const double proj = dot(b1, zeta);
  b1 = b1 - proj * zeta;
  b1 = (1.0 / norm(b1)) * b1;
  const Vec3 b2{zeta[1] * b1[2] - zeta[2] * b1[1],
                zeta[2] * b1[0] - zeta[0] * b1[2],
                zeta[0] * b1[1] - zeta[1] * b1[0]};

  const int nc = ncomp(rank);
  const Eigen::VectorXd w = fiber_weights(rank);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(nc, nc);
  const double dpsi = kTwoPi / n_angles;
  Eigen::VectorXd u(nc);
  for (int k = 0; k < n_angles; ++k) {
    const double c = std::cos(dpsi * k), s = std::sin(dpsi * k);
    const Vec3 Z = c * b1 + s * b2;
    const double r = std::sqrt(Z[1] * Z[1] + Z[2] * Z[2]);
    // At the poles the projectivized slope S -> inf and every admissible
    // cutoff vanishes faster than the polynomial entries grow.
    if (r < 1e-13) continue;
    const double S = Z[0] / r;
    const double y1 = Z[1] / r, y2 = Z[2] / r;
    const double cw = cut(S);
    if (cw == 0.0) continue;
    if (rank == 1) {
      u << S, y1, y2;
    } else {
      u << S * S, S * y1, S * y2, y1 * y1, y1 * y2, y2 * y2;
    }
    const Eigen::VectorXd wu = w.cwiseProduct(u);
    M.noalias() += (cw * dpsi) * (wu * wu.transpose());
  }
  return M.cast<Cplx>();
}

double fiber_infinity_check(double xi, const std::array<double, 2>& eta,
                            int rank, const std::function<double(double)>& chi,
                            int n_angles) {
  const CMat M = fiber_infinity_form(xi, eta, rank, chi, n_angles);
  SymbolPoint q;
  q.xi = xi;
  q.eta = eta;
  const CMat B = delta_kernel_basis(q, rank, /*at_fiber_infinity=*/true);
  return min_eig(B.adjoint() * M * B);
}

// ======================== finite-point ellipticity ========================

namespace {

// Shared accumulation of one circle sample into the finite-point form.
struct FinitePointIntegrand {
  const SymbolPoint* p;
  int rank;
  double phi;  // real (balanced cutoff)
  Eigen::VectorXd w;

  void accumulate(double theta, double weight, CMat* M) const {
    const double y1 = std::cos(theta), y2 = std::sin(theta);
    const double rho = y1 * p->eta[0] + y2 * p->eta[1];
    const double wt =
        weight * std::exp(-rho * rho / (2.0 * phi)) / std::sqrt(phi);
    if (wt == 0.0) return;
    const double nu = p->nu_value();
    const Cplx z = p->xi_up();
    const Cplx c10 = -nu * z * rho / phi;
    CVec u(ncomp(rank));
    if (rank == 1) {
      u << c10, Cplx(y1), Cplx(y2);
    } else {
      const Cplx c20 = nu * nu * z * z * rho * rho / (phi * phi) -
                       2.0 * kI * p->alpha * nu * z / phi;
      u << c20, c10 * y1, c10 * y2, Cplx(y1 * y1), Cplx(y1 * y2),
          Cplx(y2 * y2);
    }
    const CVec wu = w.asDiagonal() * u;
    M->noalias() += wt * (wu * wu.adjoint());
  }
};

}  // namespace

CMat finite_point_form(const SymbolPoint& p, int rank, int n_angles,
                       CircleRule rule) {
  GEOXRAY_REQUIRE(rank == 1 || rank == 2, "symbols: rank must be 1 or 2");
  GEOXRAY_REQUIRE(n_angles >= 4, "symbols: need at least four angles");
  GEOXRAY_REQUIRE(p.F > 0.0 && p.alpha > 0.0,
                  "symbols: finite-point check needs F > 0 and alpha > 0");
  const double nu = p.nu_value();
  const double balanced = p.alpha / p.F;
  GEOXRAY_REQUIRE(
      std::abs(nu - balanced) <= 1e-12 * (nu + balanced),
      "symbols: finite-point closed forms need the balanced cutoff nu = "
      "alpha/F");
  const double phi = nu * (p.xi * p.xi + p.F * p.F);

  FinitePointIntegrand itg;
  itg.p = &p;
  itg.rank = rank;
  itg.phi = phi;
  itg.w = fiber_weights(rank);

  const int nc = ncomp(rank);
  CMat M = CMat::Zero(nc, nc);

  const double enorm = std::hypot(p.eta[0], p.eta[1]);
  // The Gaussian factor is negligible past |rho| = 8 sqrt(phi); when that
  // band is a thin slice of the circle, resolve it directly in rho.
  const double rho_cut = 8.0 * std::sqrt(phi);
  bool windowed = false;
  switch (rule) {
    case CircleRule::kUniform:
      windowed = false;
      break;
    case CircleRule::kWindowed:
      windowed = true;
      break;
    case CircleRule::kAuto:
      windowed = enorm > 0.0 && rho_cut / enorm < 0.392699;  // pi/8
      break;
  }
  if (!windowed) {
    const double dth = kTwoPi / n_angles;
    for (int k = 0; k < n_angles; ++k) itg.accumulate(dth * k, dth, &M);
    return M;
  }

  GEOXRAY_REQUIRE(enorm > 0.0,
                  "symbols: windowed circle rule needs a nonzero tangential "
                  "frequency");
  const double theta_eta = std::atan2(p.eta[1], p.eta[0]);
  const double rc = std::min(rho_cut, 0.999 * enorm);
  const int m = std::max(n_angles, 64);
  const double drho = 2.0 * rc / (m - 1);
  for (int sgn = -1; sgn <= 1; sgn += 2) {
    for (int j = 0; j < m; ++j) {
      const double rho = -rc + drho * j;
      const double delta = sgn * std::acos(rho / enorm);
      const double jac = 1.0 / std::sqrt(enorm * enorm - rho * rho);
      const double tw = (j == 0 || j == m - 1) ? 0.5 : 1.0;
      itg.accumulate(theta_eta + delta, tw * drho * jac, &M);
    }
  }
  return M;
}

double finite_point_check(const SymbolPoint& p, int rank, int n_angles,
                          CircleRule rule) {
  const CMat M = finite_point_form(p, rank, n_angles, rule);
  const CMat B = delta_kernel_basis(p, rank, /*at_fiber_infinity=*/false);
  return min_eig(B.adjoint() * M * B);
}

// ======================== coefficient tables ==============================

std::array<std::array<Cplx, 3>, 3> b_table(const SymbolPoint& p, double t) {
  const double nu = p.nu_value(), al = p.alpha;
  const Cplx z = p.xi_up();
  const Cplx mp = nu * z;             // slope factor
  const Cplx mm = nu * z - 2.0 * kI * al;  // concavity-shifted slope factor
  const double t2 = t * t, t3 = t2 * t, t4 = t2 * t2;
  std::array<std::array<Cplx, 3>, 3> B;
  B[0][0] = 1.0;
  B[1][0] = kI * mp * t;
  B[0][1] = kI * mm * t;
  B[2][0] = -mp * mp * t2 + nu;
  B[1][1] = -mp * mm * t2 + nu;
  B[0][2] = -mm * mm * t2 + nu;
  B[2][1] = -kI * mp * mp * mm * t3 + (3.0 * kI * nu * nu * z + 2.0 * al * nu) * t;
  // The t-linear term below is forced by the Gaussian Fourier calculus
  // (apply i d/dsigma once and the shifted operator twice to the Gaussian);
  // it transforms onto the rho-linear term of the frequency-side (1,2)
  // coefficient.
  B[1][2] = -kI * mp * mm * mm * t3 + (3.0 * kI * nu * nu * z + 4.0 * al * nu) * t;
  B[2][2] = mp * mp * mm * mm * t4 +
            nu * (-6.0 * nu * nu * z * z + 12.0 * kI * nu * al * z +
                  4.0 * al * al) *
                t2 +
            3.0 * nu * nu;
  return B;
}

std::array<std::array<Cplx, 3>, 3> c_table(const SymbolPoint& p, double rho) {
  const double nu = p.nu_value(), al = p.alpha;
  const Cplx z = p.xi_up();
  const Cplx mp = nu * z;
  const Cplx mm = nu * z - 2.0 * kI * al;
  const Cplx phi = p.phi();
  const Cplx r1 = rho / phi;
  const Cplx r2 = rho * rho / (phi * phi);
  const Cplx r3 = rho * rho * rho / (phi * phi * phi);
  const Cplx r4 = r2 * r2;
  std::array<std::array<Cplx, 3>, 3> C;
  C[0][0] = 1.0;
  C[1][0] = -mp * r1;
  C[0][1] = -mm * r1;
  C[2][0] = mp * mp * r2 - 2.0 * kI * al * nu * z / phi;
  C[1][1] = mp * mm * r2;
  C[0][2] = mm * mm * r2 + 2.0 * kI * al * mm / phi;
  C[2][1] = -mp * mp * mm * r3 + 2.0 * kI * al * nu * r1;
  C[1][2] = -mp * mm * mm * r3 - 2.0 * kI * al * nu * r1;
  C[2][2] = mp * mp * mm * mm * r4 - 4.0 * al * al * nu * r2 +
            4.0 * al * al * nu / phi;
  return C;
}

// ======================== Fourier certification ===========================

namespace {

// Trapezoid Fourier transform  H(rho) = int e^{i rho t} f(t) e^{-phi t^2/2} dt
// with f given as the (j,k) table entry; N large enough that the quadrature
// is spectrally converged for the decay/oscillation scales involved.
struct GaussianFt {
  const SymbolPoint* p;
  Cplx phi;
  double T;
  int N;

  Cplx transform(int j, int k, double rho) const {
    const double dt = 2.0 * T / (N - 1);
    Cplx acc = 0.0;
    for (int i = 0; i < N; ++i) {
      const double t = -T + dt * i;
      const Cplx f = (j < 0) ? Cplx(1.0) : b_table(*p, t)[j][k];
      const Cplx val =
          f * std::exp(Cplx(0.0, rho * t) - 0.5 * phi * t * t);
      acc += (i == 0 || i == N - 1) ? 0.5 * val : val;
    }
    return acc * dt;
  }
};

}  // namespace

FtConsistency gaussian_ft_consistency(const SymbolPoint& p) {
  FtConsistency out;

  // --- (a) scalar transform against the closed Gaussian, (xi, rho) grid ---
  for (int g = -2; g <= 2; ++g) {
    SymbolPoint q = p;
    q.nu = p.nu_value();  // freeze the width while xi moves
    q.xi = p.xi + static_cast<double>(g);
    const Cplx phi = q.phi();
    GEOXRAY_REQUIRE(phi.real() > 0.0,
                    "symbols: Fourier check needs Re(phi) > 0 (cutoff too "
                    "wide: nu >= 2 alpha/F)");
    GaussianFt ft{&q, phi, 14.0 / std::sqrt(phi.real()), 4096};
    const Cplx closed0 = 1.0 / std::sqrt(phi);
    const Cplx fitted = ft.transform(-1, 0, 0.0) / closed0;
    const double sig_rho = std::sqrt(1.0 / (phi.real() /
                                            std::norm(phi)));  // decay scale
    const double peak = std::abs(fitted * closed0);
    for (double rr : {-4.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 4.0}) {
      const double rho = rr * sig_rho;
      const Cplx closed =
          fitted * std::exp(-rho * rho / (2.0 * phi)) / std::sqrt(phi);
      const double dev = std::abs(ft.transform(-1, 0, rho) - closed) / peak;
      out.gaussian_dev = std::max(out.gaussian_dev, dev);
    }
  }

  // --- (b) all nine table entries at the point itself ---
  {
    SymbolPoint q = p;
    q.nu = p.nu_value();
    const Cplx phi = q.phi();
    GEOXRAY_REQUIRE(phi.real() > 0.0,
                    "symbols: Fourier check needs Re(phi) > 0 (cutoff too "
                    "wide: nu >= 2 alpha/F)");
    GaussianFt ft{&q, phi, 14.0 / std::sqrt(phi.real()), 8192};
    const Cplx fitted = ft.transform(0, 0, 0.0) * std::sqrt(phi);
    const double sig_rho = std::sqrt(std::norm(phi) / phi.real());
    const std::array<double, 5> rhos{0.0, 0.5 * sig_rho, -sig_rho,
                                     1.5 * sig_rho, -2.0 * sig_rho};
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) {
        double scale = 0.0;
        std::array<Cplx, 5> closed;
        for (size_t r = 0; r < rhos.size(); ++r) {
          closed[r] = fitted * c_table(q, rhos[r])[j][k] *
                      std::exp(-rhos[r] * rhos[r] / (2.0 * phi)) /
                      std::sqrt(phi);
          scale = std::max(scale, std::abs(closed[r]));
        }
        scale = std::max(scale, 1e-3 * std::abs(fitted / std::sqrt(phi)));
        for (size_t r = 0; r < rhos.size(); ++r) {
          const double dev =
              std::abs(ft.transform(j, k, rhos[r]) - closed[r]) / scale;
          out.table_dev = std::max(out.table_dev, dev);
        }
      }
    }
  }

  // --- (c) balanced cutoff forces the diagonal entries real ---
  {
    SymbolPoint q = p;
    q.nu = 0.0;  // balanced: nu = alpha/F
    for (double rho : {0.0, 0.3, 1.1, 2.7}) {
      const auto C = c_table(q, rho);
      for (int j = 0; j < 3; ++j) {
        const double dev =
            std::abs(C[j][j].imag()) / (1.0 + std::abs(C[j][j]));
        out.realness_dev = std::max(out.realness_dev, dev);
      }
    }
  }
  return out;
}

// ============================ threshold sweep =============================
//
// Both forms are PSD superpositions (see the header): ellipticity failures
// are zero-touchings of the restricted spectrum at isolated frequency
// points, so the sweep normalizes margins to be dimensionless, refines the
// worst grid points by coordinate descent, and compares against a small
// positive floor rather than against zero.

namespace {

std::vector<Vec3> fibonacci_directions(int n) {
  std::vector<Vec3> dirs(n);
  const double ga = 2.399963229728653;  // golden angle
  for (int i = 0; i < n; ++i) {
    const double xi = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - xi * xi));
    dirs[i] = {xi, r * std::cos(ga * i), r * std::sin(ga * i)};
  }
  return dirs;
}

// lambda_min of the form restricted to range(basis) over lambda_max of the
// full form; 0 if the full form has no positive part at all.
double relative_margin(const CMat& form, const CMat& basis) {
  Eigen::SelfAdjointEigenSolver<CMat> full(form);
  GEOXRAY_REQUIRE(full.info() == Eigen::Success,
                  "symbols: eigensolver failed on the full form");
  const double top = full.eigenvalues()(form.rows() - 1);
  if (!(top > 0.0)) return 0.0;
  const CMat restricted = basis.adjoint() * form * basis;
  Eigen::SelfAdjointEigenSolver<CMat> res(restricted);
  GEOXRAY_REQUIRE(res.info() == Eigen::Success,
                  "symbols: eigensolver failed on the restricted form");
  return res.eigenvalues()(0) / top;
}

double finite_relative_margin(const SymbolPoint& p, int rank, int n_angles) {
  return relative_margin(finite_point_form(p, rank, n_angles),
                         delta_kernel_basis(p, rank, false));
}

// Coordinate descent over (xi, log|eta|, arg eta) from one grid seed;
// returns the refined margin and leaves the minimizer in (sx_io, se_io).
double refine_minimum(const SymbolPoint& base, int rank, int n_angles,
                      int rounds, double* xi_io, std::array<double, 2>* eta_io) {
  double bx = *xi_io;
  double be = std::hypot((*eta_io)[0], (*eta_io)[1]);
  double bt = std::atan2((*eta_io)[1], (*eta_io)[0]);
  if (be < 1e-12 * (1.0 + std::abs(bx))) {
    // Polar seed: give the magnitude leg room so log steps can move it.
    be = 0.05 * base.F;
    bt = 0.0;
  }
  const auto eval = [&](double x, double e, double t) {
    SymbolPoint p = base;
    p.xi = x;
    p.eta = {e * std::cos(t), e * std::sin(t)};
    return finite_relative_margin(p, rank, n_angles);
  };
  double best = eval(bx, be, bt);
  double step_xi = 0.25 * base.F;  // the relevant xi scale is ~F
  double step_le = 0.35;           // multiplicative step on |eta|
  double step_th = 0.40;
  for (int round = 0; round < rounds; ++round) {
    bool improved = false;
    for (int coord = 0; coord < 3; ++coord) {
      for (double sgn : {1.0, -1.0}) {
        double x = bx, e = be, t = bt;
        if (coord == 0) x += sgn * step_xi;
        if (coord == 1) e *= std::exp(sgn * step_le);
        if (coord == 2) t += sgn * step_th;
        const double v = eval(x, e, t);
        if (v < best) {
          best = v;
          bx = x;
          be = e;
          bt = t;
          improved = true;
        }
      }
    }
    if (!improved) {
      step_xi *= 0.5;
      step_le *= 0.5;
      step_th *= 0.5;
      if (step_xi < 1e-7 * base.F) break;
    }
  }
  *xi_io = bx;
  (*eta_io) = {be * std::cos(bt), be * std::sin(bt)};
  return best;
}

}  // namespace

ScanResult threshold_scan(double alpha, const std::array<double, 3>& a,
                          int rank, const std::vector<double>& F_ladder,
                          const ScanOptions& opt) {
  GEOXRAY_REQUIRE(rank == 1 || rank == 2, "symbols: rank must be 1 or 2");
  GEOXRAY_REQUIRE(alpha > 0.0, "symbols: scan needs alpha > 0");
  GEOXRAY_REQUIRE(!F_ladder.empty(), "symbols: scan needs a nonempty F ladder");
  for (size_t i = 0; i < F_ladder.size(); ++i) {
    GEOXRAY_REQUIRE(F_ladder[i] > 0.0, "symbols: scan F values must be > 0");
    GEOXRAY_REQUIRE(i == 0 || F_ladder[i] > F_ladder[i - 1],
                    "symbols: scan F ladder must be ascending");
  }
  GEOXRAY_REQUIRE(opt.n_dirs >= 6, "symbols: scan needs at least 6 directions");
  GEOXRAY_REQUIRE(opt.margin_floor > 0.0,
                  "symbols: margin_floor must be > 0 (the forms are PSD, so "
                  "failures touch zero from above and never go negative)");

  const std::vector<Vec3> dirs = fibonacci_directions(opt.n_dirs);
  const bool default_mags = opt.magnitudes.empty();
  std::vector<double> base_mags = opt.magnitudes;
  if (default_mags)
    for (int i = 0; i <= 10; ++i)
      base_mags.push_back(std::pow(10.0, -1.0 + 0.5 * i));

  ScanResult res;
  res.rows.reserve(F_ladder.size());

  for (double F : F_ladder) {
    std::vector<double> mags = base_mags;
    if (default_mags) {
      // Touching points live at |(xi,eta)| ~ F; seed the descent nearby.
      for (double s : {0.35, 0.5, 0.7, 1.0, 1.4, 2.0, 2.8})
        mags.push_back(s * F);
      std::sort(mags.begin(), mags.end());
      mags.erase(std::unique(mags.begin(), mags.end()), mags.end());
    }
    const std::int64_t npts = static_cast<std::int64_t>(dirs.size()) *
                              static_cast<std::int64_t>(mags.size());
    const std::int64_t ntot = npts + static_cast<std::int64_t>(dirs.size());

    std::vector<double> margin(ntot, 0.0);
    std::vector<std::string> fail(ntot);
    const double nu = alpha / F;
    const auto chi = [nu](double s) { return std::exp(-s * s / (2.0 * nu)); };
    parallel_for(ntot, [&](std::int64_t idx) {
      try {
        if (idx < npts) {
          const Vec3& d = dirs[idx % dirs.size()];
          const double m = mags[idx / dirs.size()];
          SymbolPoint pt;
          pt.xi = m * d[0];
          pt.eta = {m * d[1], m * d[2]};
          pt.F = F;
          pt.alpha = alpha;
          pt.a = a;
          margin[idx] = finite_relative_margin(pt, rank, opt.n_angles);
        } else {
          const Vec3& d = dirs[idx - npts];
          SymbolPoint q;  // direction only: basis at fiber infinity
          q.xi = d[0];
          q.eta = {d[1], d[2]};
          margin[idx] = relative_margin(
              fiber_infinity_form(d[0], {d[1], d[2]}, rank, chi, opt.n_angles),
              delta_kernel_basis(q, rank, true));
        }
      } catch (const std::exception& e) {
        fail[idx] = e.what();
      }
    });
    for (const auto& f : fail)
      if (!f.empty()) throw domain_error("symbols: scan point failed: " + f);

    ScanRow row;
    row.F = F;
    row.margin = margin[0];
    std::int64_t arg = 0;
    for (std::int64_t i = 1; i < ntot; ++i)
      if (margin[i] < row.margin) {
        row.margin = margin[i];
        arg = i;
      }
    if (arg < npts) {
      const Vec3& d = dirs[arg % dirs.size()];
      const double m = mags[arg / dirs.size()];
      row.xi = m * d[0];
      row.eta = {m * d[1], m * d[2]};
      row.at_infinity = false;
    } else {
      const Vec3& d = dirs[arg - npts];
      row.xi = d[0];
      row.eta = {d[1], d[2]};
      row.at_infinity = true;
    }

    // Descent from the worst finite-frequency grid points: zero-touchings
    // sit in narrow valleys that the grid itself almost surely misses.
    if (opt.refine_seeds > 0 && opt.refine_rounds > 0) {
      std::vector<std::int64_t> order(static_cast<size_t>(npts));
      std::iota(order.begin(), order.end(), 0);
      const int nseed =
          static_cast<int>(std::min<std::int64_t>(opt.refine_seeds, npts));
      std::partial_sort(order.begin(), order.begin() + nseed, order.end(),
                        [&](std::int64_t i, std::int64_t j) {
                          return margin[i] < margin[j];
                        });
      SymbolPoint base;
      base.F = F;
      base.alpha = alpha;
      base.a = a;
      for (int s = 0; s < nseed; ++s) {
        const Vec3& d = dirs[order[s] % dirs.size()];
        const double m = mags[order[s] / dirs.size()];
        double xi = m * d[0];
        std::array<double, 2> eta{m * d[1], m * d[2]};
        const double refined = refine_minimum(base, rank, opt.n_angles,
                                              opt.refine_rounds, &xi, &eta);
        if (refined < row.margin) {
          row.margin = refined;
          row.xi = xi;
          row.eta = eta;
          row.at_infinity = false;
          row.refined = true;
        }
      }
    }
    res.rows.push_back(row);
  }

  // f0 = least ladder F from which every rung clears the floor to the top.
  int last_bad = -1;
  for (int i = static_cast<int>(res.rows.size()) - 1; i >= 0; --i) {
    if (res.rows[i].margin <= opt.margin_floor) {
      last_bad = i;
      break;
    }
  }
  if (last_bad + 1 < static_cast<int>(res.rows.size())) {
    res.f0_index = last_bad + 1;
    res.found = true;
  }
  return res;
}

}  // namespace geoxray::symbols
