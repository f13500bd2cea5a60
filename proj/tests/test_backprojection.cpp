#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "geoxray/backprojection.hpp"

using namespace geoxray;
using namespace geoxray::transform;
using namespace geoxray::backprojection;

namespace {

geometry::RegionChart lens_chart_n(int n) {
  static auto m = geometry::MetricModel::lens(1.0, 0.14);
  return geometry::RegionChart::lens_chart(m, 0.10, 0.03, 0.06, n, n);
}

double bump(double s) { return s < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - s)) : 0.0; }
double bump_ds(double s) {
  if (s >= 1.0) return 0.0;
  const double d = 1.0 - s;
  return -std::exp(1.0 - 1.0 / d) / (d * d);
}

constexpr double kCx = 0.05, kRx = 0.035, kRy = 0.7;
double ell(const Vec3& w) {
  return sqr((w[0] - kCx) / kRx) + (sqr(w[1]) + sqr(w[2])) / (kRy * kRy);
}
Vec3 ell_grad(const Vec3& w) {
  return {2.0 * (w[0] - kCx) / (kRx * kRx), 2.0 * w[1] / (kRy * kRy),
          2.0 * w[2] / (kRy * kRy)};
}

fields::ScalarPotential bump_potential() {
  fields::ScalarPotential p;
  p.v = [](const Vec3& w) { return bump(ell(w)); };
  p.grad = [](const Vec3& w) { return bump_ds(ell(w)) * ell_grad(w); };
  return p;
}

fields::FieldCallable trig_field(int rank) {
  fields::FieldCallable fc;
  fc.rank = rank;
  if (rank == 0) {
    fc.eval = [](const Vec3& w, double* c) {
      c[0] = std::sin(w[0] / 0.06) * std::cos(w[1] / 1.2) + 0.2;
    };
  } else if (rank == 1) {
    fc.eval = [](const Vec3& w, double* c) {
      c[0] = std::sin(w[0] / 0.06) * std::cos(w[1] / 1.2);
      c[1] = std::cos(w[0] / 0.06 + w[2] / 1.2);
      c[2] = std::sin(w[1] / 1.2) * std::sin(w[2] / 1.2) + 0.3;
    };
  } else {
    fc.eval = [](const Vec3& w, double* c) {
      const double a = std::sin(w[0] / 0.06), b = std::cos(w[1] / 1.2);
      c[0] = a * b;
      c[1] = 0.4 * std::cos(w[0] / 0.06 + w[2] / 1.2);
      c[2] = 0.3 * a + 0.1;
      c[3] = b * b;
      c[4] = 0.25 * std::sin(w[2] / 1.2);
      c[5] = 0.5 * a * a + 0.2;
    };
  }
  return fc;
}

}  // namespace

TEST_CASE("cutoff profile invariants") {
  CutoffProfile chi;
  chi.nu = 0.3;
  chi.k = 0.7;
  CHECK(chi(0.0) == 1.0);
  for (double s : {0.05, 0.2, 0.33, 0.5, 0.69}) {
    CHECK(chi(s) > 0.0);
    CHECK(chi(s) == chi(-s));
    CHECK(chi(s) <= 1.0);
  }
  CHECK(chi(0.7) == 0.0);
  CHECK(chi(0.75) == 0.0);
  // bump factor is exactly 1 on the flat part: pure Gaussian there
  CHECK(chi(0.2) == doctest::Approx(std::exp(-0.5 * 0.04 / 0.3)).epsilon(1e-14));
  // smooth roll-off: strictly decreasing on the transition
  double prev = chi(0.35);
  for (double s = 0.4; s < 0.7; s += 0.05) {
    CHECK(chi(s) < prev);
    prev = chi(s);
  }
}

TEST_CASE("delta data: one ray contributes exactly its weighted monomials") {
  auto rc = lens_chart_n(8);
  SetSpec spec;
  spec.n_lambda = 4;
  spec.n_omega = 6;
  spec.foot_stride = 7;
  const GeodesicSet gs = build_set(rc, spec);
  CutoffProfile chi;
  chi.nu = 0.3;
  chi.k = spec.lambda_max;

  // first retained ray
  std::int64_t rid = -1;
  for (std::int64_t i = 0; i < gs.nrays(); ++i)
    if (gs.rays[(size_t)i].retained()) {
      rid = i;
      break;
    }
  REQUIRE(rid >= 0);
  const Ray& r = gs.rays[(size_t)rid];
  VecX data = VecX::Zero(gs.nrays());
  data[rid] = 1.7;

  const double dl = 2.0 * spec.lambda_max / (spec.n_lambda + 1.0);
  const double dw = 2.0 * M_PI / spec.n_omega;
  const double lam = gs.lambdas[(size_t)r.il], om = gs.omegas[(size_t)r.iw];
  const double V[3] = {lam, std::cos(om), std::sin(om)};
  const std::int64_t fnode = gs.feet.node_of[(size_t)r.foot];
  const double x = gs.feet.x_of(r.foot);

  for (int rank : {0, 1, 2}) {
    const fields::TensorField b = backproject(gs, data, rank, chi);
    double mono[6];
    fields::velocity_monomials(rank, V, mono);
    const double pre = rank == 0 ? 1.0 / x : rank == 1 ? 1.0 : x;
    for (int c = 0; c < fields::ncomp(rank); ++c)
      CHECK(b.at(fnode, c) ==
            doctest::Approx(pre * chi(lam) * 1.7 * mono[c] * dl * dw)
                .epsilon(1e-14));
    // support: every other node is exactly zero
    double off_support = 0.0;
    for (std::int64_t nid = 0; nid < rc.grid.size(); ++nid) {
      if (nid == fnode) continue;
      for (int c = 0; c < fields::ncomp(rank); ++c)
        off_support = std::max(off_support, std::fabs(b.at(nid, c)));
    }
    CHECK(off_support == 0.0);
  }
}

TEST_CASE("backprojection is linear in the data") {
  auto rc = lens_chart_n(8);
  SetSpec spec;
  spec.n_lambda = 3;
  spec.n_omega = 4;
  spec.foot_stride = 11;
  const GeodesicSet gs = build_set(rc, spec);
  CutoffProfile chi;
  chi.nu = 0.25;
  chi.k = spec.lambda_max;

  Rng rng(17);
  VecX data(gs.nrays());
  for (std::int64_t i = 0; i < gs.nrays(); ++i) data[i] = rng.uniform(-1, 1);

  const fields::TensorField b1 = backproject(gs, data, 1, chi);
  const fields::TensorField b2 = backproject(gs, VecX(2.5 * data), 1, chi);
  const fields::TensorField z = backproject(gs, VecX(VecX::Zero(gs.nrays())),
                                            1, chi);
  double dmax = 0.0, zmax = 0.0, bmax = 0.0;
  for (std::int64_t nid = 0; nid < rc.grid.size(); ++nid)
    for (int c = 0; c < 3; ++c) {
      dmax = std::max(dmax, std::fabs(b2.at(nid, c) - 2.5 * b1.at(nid, c)));
      zmax = std::max(zmax, std::fabs(z.at(nid, c)));
      bmax = std::max(bmax, std::fabs(b1.at(nid, c)));
    }
  CHECK(bmax > 0.0);
  CHECK(zmax == 0.0);
  CHECK(dmax <= 1e-14 * bmax);
}

TEST_CASE("cone average matches a dense slope/angle quadrature") {
  // analytic per-ray data depending only on (lambda, omega); the discrete
  // cone sum must match a refined quadrature of the same integral
  auto rc = lens_chart_n(8);
  SetSpec spec;
  spec.n_lambda = 24;
  spec.n_omega = 24;
  spec.foot_stride = 97;
  spec.h_t = 0.02;
  const GeodesicSet gs = build_set(rc, spec);
  CutoffProfile chi;
  chi.nu = 0.3;
  chi.k = spec.lambda_max;

  auto phi = [](double lam, double om) {
    return std::sin(1.3 * lam) * (1.2 + std::cos(om)) + 0.4;
  };
  VecX data = VecX::Zero(gs.nrays());
  for (std::int64_t k = 0; k < (std::int64_t)gs.foot_ids.size(); ++k)
    for (int il = 0; il < spec.n_lambda; ++il)
      for (int iw = 0; iw < spec.n_omega; ++iw)
        data[gs.ray_id(k, il, iw)] =
            phi(gs.lambdas[(size_t)il], gs.omegas[(size_t)iw]);

  // reference: 4097 x 2048 quadrature of the continuum cone integral
  double ref = 0.0;
  {
    const int NL = 4097, NW = 2048;
    const auto lg = slope_grid(spec.lambda_max, NL);
    const double dl = 2.0 * spec.lambda_max / (NL + 1.0);
    const double dw = 2.0 * M_PI / NW;
    for (int il = 0; il < NL; ++il)
      for (int iw = 0; iw < NW; ++iw)
        ref += chi(lg[(size_t)il]) * phi(lg[(size_t)il], 2.0 * M_PI * iw / NW) *
               dl * dw;
  }

  const fields::TensorField b = backproject(gs, data, 0, chi);
  // pick an anchor whose cone is fully retained so no directions are missing
  bool found = false;
  for (std::int64_t k = 0; k < (std::int64_t)gs.foot_ids.size(); ++k) {
    bool full = true;
    for (int il = 0; il < spec.n_lambda && full; ++il)
      for (int iw = 0; iw < spec.n_omega && full; ++iw)
        full = gs.rays[(size_t)gs.ray_id(k, il, iw)].retained();
    if (!full) continue;
    found = true;
    const std::int64_t foot = gs.foot_ids[(size_t)k];
    const double x = gs.feet.x_of(foot);
    const double got = b.at(gs.feet.node_of[(size_t)foot], 0);
    CHECK(std::fabs(got - ref / x) <= 2e-4 * std::fabs(ref / x));
  }
  CHECK(found);
}

TEST_CASE("conjugation bookkeeping: weighted transform equals scaled plain one") {
  auto rc = lens_chart_n(8);
  const double F = 0.8;
  SetSpec spec;
  spec.n_lambda = 3;
  spec.n_omega = 4;
  spec.foot_stride = 13;
  const GeodesicSet gs = build_set(rc, spec);

  const fields::FieldCallable fF = trig_field(1);
  fields::FieldCallable g;  // e^{F/x} fF, component-wise
  g.rank = 1;
  g.eval = [&fF, F](const Vec3& w, double* c) {
    fF.eval(w, c);
    const double e = std::exp(F / w[0]);
    for (int i = 0; i < 3; ++i) c[i] *= e;
  };

  const VecX a = forward_callable(gs, fF, F);
  const VecX b = conjugate_data(gs, forward_callable(gs, g, 0.0), F);
  for (std::int64_t i = 0; i < gs.nrays(); ++i) {
    if (!gs.rays[(size_t)i].retained()) continue;
    CHECK(std::fabs(a[i] - b[i]) <=
          1e-11 * (std::fabs(a[i]) + std::fabs(b[i]) + 1e-300));
  }
}

TEST_CASE("assembled matrix reproduces the matrix-free operator") {
  auto rc = lens_chart_n(8);
  const double F = 1.1;
  SetSpec spec;
  spec.n_lambda = 4;
  spec.n_omega = 6;
  const GeodesicSet gs = build_set(rc, spec);
  const fields::RegionIndex R(rc, 2);
  const RayNodeIndex ix = build_ray_index(gs);
  CutoffProfile chi;
  chi.nu = 0.3;
  chi.k = spec.lambda_max;

  Rng rng(5);
  for (int rank : {0, 1}) {
    const Eigen::MatrixXd A = assemble_normal_matrix(gs, ix, R, rank, F, chi);
    REQUIRE(A.rows() == R.ndof(rank));
    VecX u(R.ndof(rank));
    for (std::int64_t i = 0; i < u.size(); ++i) u[i] = rng.uniform(-1, 1);
    const VecX direct = apply_normal(gs, R, rank, F, chi, u);
    const double scale = direct.cwiseAbs().maxCoeff();
    REQUIRE(scale > 0.0);
    CHECK((A * u - direct).cwiseAbs().maxCoeff() <= 1e-12 * scale);
  }
}

TEST_CASE("approximate self-adjointness in the weighted inner product") {
  auto rc = lens_chart_n(8);
  const double F = 1.1;
  SetSpec spec;
  spec.n_lambda = 6;
  spec.n_omega = 8;
  const GeodesicSet gs = build_set(rc, spec);
  const fields::RegionIndex R(rc, 2);
  const RayNodeIndex ix = build_ray_index(gs);
  CutoffProfile chi;
  chi.nu = 0.3;
  chi.k = spec.lambda_max;

  const Eigen::MatrixXd A = assemble_normal_matrix(gs, ix, R, 1, F, chi);
  const auto w = fields::weight_vector(R, 1);
  Eigen::MatrixXd WA = A;
  for (std::int64_t i = 0; i < (std::int64_t)w.size(); ++i)
    WA.row(i) *= w[(size_t)i];
  const double asym = (WA - WA.transpose()).norm() / WA.norm();
  MESSAGE("weighted asymmetry: " << asym);
  CHECK(asym <= 0.1);
}

TEST_CASE("normal operator nearly annihilates sampled potential fields") {
  const double F = 1.2;
  auto ratio_at = [&](int n) {
    auto rc = lens_chart_n(n);
    SetSpec spec;
    spec.n_lambda = 4;
    spec.n_omega = 6;
    spec.h_t = 0.01;
    const GeodesicSet gs = build_set(rc, spec);
    CutoffProfile chi;
    chi.nu = 0.3;
    chi.k = spec.lambda_max;

    const fields::FieldCallable pot =
        fields::potential_derivative(rc, F, bump_potential());
    const fields::FieldCallable ref = trig_field(1);
    const fields::TensorField pot_g = fields::sample_callable(pot, rc.grid);
    const fields::TensorField ref_g = fields::sample_callable(ref, rc.grid);
    const fields::TensorField bp = normal_operator(gs, pot_g, F, chi);
    const fields::TensorField br = normal_operator(gs, ref_g, F, chi);
    // normalize by the transform data scale of each input
    const double sp = forward_callable_scale(gs, pot, F);
    const double sr = forward_callable_scale(gs, ref, F);
    double mp = 0.0, mr = 0.0;
    for (std::int64_t nid = 0; nid < rc.grid.size(); ++nid)
      for (int c = 0; c < 3; ++c) {
        mp = std::max(mp, std::fabs(bp.at(nid, c)));
        mr = std::max(mr, std::fabs(br.at(nid, c)));
      }
    REQUIRE(sp > 1e-6);
    REQUIRE(mr > 0.0);
    return (mp / sp) / (mr / sr);
  };
  const double r8 = ratio_at(8);
  const double r12 = ratio_at(12);
  MESSAGE("annihilation ratio 8^3: " << r8 << ", 12^3: " << r12);
  CHECK(r12 <= 0.3);
  CHECK(r12 < r8);
}

TEST_CASE("one-form normal matrix: near-kernel is the potential subspace") {
  // The continuum operator annihilates potentials of Dirichlet scalars and is
  // elliptic transverse to them.  Discretely: (a) the operator is small on
  // resolved potentials (smooth Dirichlet scalars pushed through d_F),
  // shrinking under refinement; (b) its smallest singular value on the
  // weighted orthocomplement of the full discrete potential span stays
  // bounded away from zero.  Raw single-node potentials are grid-scale spikes
  // whose interpolated transform leaks O(1), so rank counting is meaningless
  // at these grids; (a)+(b) carry the content.
  const double F = 1.1;

  auto analyze = [&](int n) {
    auto rc = lens_chart_n(n);
    SetSpec spec;
    spec.n_lambda = 6;
    spec.n_omega = 8;
    const GeodesicSet gs = build_set(rc, spec);
    const fields::RegionIndex R(rc, 2);
    const RayNodeIndex ix = build_ray_index(gs);
    CutoffProfile chi;
    chi.nu = 0.3;
    chi.k = spec.lambda_max;

    const Eigen::MatrixXd A = assemble_normal_matrix(gs, ix, R, 1, F, chi);
    const std::int64_t nd = A.rows();

    // transform to coordinates where the weighted inner product is standard
    const auto w = fields::weight_vector(R, 1);
    VecX sq(nd), isq(nd);
    for (std::int64_t i = 0; i < nd; ++i) {
      sq[i] = std::sqrt(w[(size_t)i]);
      isq[i] = 1.0 / sq[i];
    }
    const Eigen::MatrixXd At = sq.asDiagonal() * A * isq.asDiagonal();

    // full discrete potential span (Dirichlet scalar hats through d_F)
    Eigen::MatrixXd Dd(fields::assemble_d(R, 0, F));
    std::vector<std::int64_t> free_cols;
    for (std::int64_t i = 0; i < R.count; ++i)
      if (!rc.dirichlet[2][(size_t)R.node_of[(size_t)i]])
        free_cols.push_back(i);
    Eigen::MatrixXd Pt(nd, (std::int64_t)free_cols.size());
    for (std::int64_t j = 0; j < (std::int64_t)free_cols.size(); ++j)
      Pt.col(j) = sq.asDiagonal() * Dd.col(free_cols[(size_t)j]);

    // (b) smallest singular value on the orthocomplement of the span
    Eigen::JacobiSVD<Eigen::MatrixXd> psvd(Pt, Eigen::ComputeFullU);
    const std::int64_t dim_pot = psvd.rank();
    const Eigen::MatrixXd C =
        psvd.matrixU().rightCols(nd - dim_pot);  // complement basis
    Eigen::JacobiSVD<Eigen::MatrixXd> csvd(At * C);
    const double sigma_c = csvd.singularValues().minCoeff();
    const double sigma_max = At.operatorNorm();

    // (a) resolved potentials: smooth Dirichlet scalars through d_F
    std::vector<std::int64_t> centers = free_cols;
    Rng rng(23);
    for (size_t i = centers.size(); i > 1; --i)
      std::swap(centers[i - 1], centers[(size_t)rng.uniform_int(0, (int)i - 1)]);
    const int nb = std::min<int>(12, (int)centers.size());
    Eigen::MatrixXd smooth(R.count, nb);
    for (int b = 0; b < nb; ++b) {
      const auto ijk0 = rc.grid.unidx(R.node_of[(size_t)centers[(size_t)b]]);
      for (std::int64_t i = 0; i < R.count; ++i) {
        const auto ijk = rc.grid.unidx(R.node_of[(size_t)i]);
        double d2 = 0.0;
        for (int a = 0; a < 3; ++a) d2 += sqr((ijk[a] - ijk0[a]) / 1.8);
        const bool dir = rc.dirichlet[2][(size_t)R.node_of[(size_t)i]] != 0;
        smooth(i, b) = dir ? 0.0 : std::exp(-0.5 * d2);
      }
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(
        Eigen::MatrixXd(sq.asDiagonal() * (Dd * smooth)));
    Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(nd, nb);
    Q = qr.householderQ() * Q;
    const double leak = (At * Q).operatorNorm();
    return std::array<double, 3>{leak / sigma_max, sigma_c / sigma_max,
                                 (double)dim_pot};
  };

  const auto r8 = analyze(8);
  const auto r12 = analyze(12);
  MESSAGE("resolved-potential leakage / sigma_max: 8^3 = "
          << r8[0] << ", 12^3 = " << r12[0]
          << "; complement sigma_min / sigma_max: 8^3 = " << r8[1]
          << ", 12^3 = " << r12[1]);
  // leakage on resolved potentials is small and shrinks under refinement
  CHECK(r12[0] <= 0.25);
  CHECK(r12[0] < r8[0]);
  // the complement floor is positive and does not collapse under refinement.
  // (It sits well below the potential leakage: the weakest directions of the
  // bare normal operator are data-starved rim modes, which the nested-region
  // restriction removes before any inversion happens.)
  CHECK(r8[1] > 0.0);
  CHECK(r12[1] >= 0.5 * r8[1]);
}
