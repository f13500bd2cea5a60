#include "geoxray/gauge.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace geoxray {
namespace gauge {

using fields::SpMat;
using fields::VecX;

namespace {

// Extreme eigenvalues of the CG Lanczos tridiagonal built from the PCG
// coefficients (Ritz values of the preconditioned operator).  The matrix is
// truncated to a generous cap: diagnostics do not need thousands of rows.
void ritz_extremes(const std::vector<double>& alphas,
                   const std::vector<double>& betas, SolveStats* st) {
  const int k = (int)std::min<size_t>(alphas.size(), 800);
  if (k == 0) return;
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    double diag = 1.0 / alphas[(size_t)i];
    if (i > 0) diag += betas[(size_t)i - 1] / alphas[(size_t)i - 1];
    T(i, i) = diag;
    if (i + 1 < k) {
      const double off =
          std::sqrt(std::max(betas[(size_t)i], 0.0)) / alphas[(size_t)i];
      T(i, i + 1) = T(i + 1, i) = off;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T,
                                                    Eigen::EigenvaluesOnly);
  st->ritz_min = es.eigenvalues()(0);
  st->ritz_max = es.eigenvalues()(k - 1);
}

} // namespace

WittenGauge::WittenGauge(const fields::RegionIndex& R, int potential_rank,
                         double F, SolveOptions opt)
    : R_(&R), rank_(potential_rank), F_(F), opt_(opt) {
  GEOXRAY_REQUIRE(rank_ == 0 || rank_ == 1,
                  "gauge: potential rank must be 0 or 1");
  GEOXRAY_REQUIRE(F_ > 0.0, "gauge: conjugation exponent F must be positive");
  GEOXRAY_REQUIRE(R.count > 0, "gauge: empty region");

  d_ = fields::assemble_d(R, rank_, F_);
  w_in_ = fields::weight_vector(R, rank_, opt_.rexp);
  w_out_ = fields::weight_vector(R, rank_ + 1, opt_.rexp);
  delta_ = fields::weighted_transpose(d_, w_in_, w_out_);
  lap_full_ = SpMat(delta_ * d_);
  lap_full_.makeCompressed();

  const int nc = fields::ncomp(rank_);
  const std::int64_t n = R.ndof(rank_);
  const auto& dmask = R.chart->dirichlet[(size_t)R.level];
  dir_.assign((size_t)n, 0);
  bool any_dirichlet = false;
  std::int64_t n_interior = 0;
  for (std::int64_t i = 0; i < R.count; ++i) {
    x_max_ = std::max(x_max_, R.x_of(i));
    const bool dd = dmask[(size_t)R.node_of[(size_t)i]] != 0;
    any_dirichlet = any_dirichlet || dd;
    for (int c = 0; c < nc; ++c) dir_[(size_t)(i * nc + c)] = dd ? 1 : 0;
    if (!dd) n_interior += nc;
  }
  if (!any_dirichlet)
    throw config_error(
        "gauge: level has an empty Dirichlet mask (region boundary is "
        "entirely artificial); the gauge solve is not anchored");
  GEOXRAY_REQUIRE(n_interior > 0, "gauge: no interior degrees of freedom");

  // Optional x^r conjugation; the CG inner-product weight picks up x^{2r}
  // so the conjugated operator stays self-adjoint.
  w_cg_ = w_in_;
  const double r = opt_.weight_r;
  if (r != 0.0) {
    xr_.resize((size_t)n);
    xr_inv_.resize((size_t)n);
    for (std::int64_t dof = 0; dof < n; ++dof) {
      const double x = R.x_of(dof / nc);
      xr_[(size_t)dof] = std::pow(x, r);
      xr_inv_[(size_t)dof] = 1.0 / xr_[(size_t)dof];
      w_cg_[(size_t)dof] *= std::pow(x, 2.0 * r);
    }
  }

  // Symmetric Dirichlet elimination of the (conjugated) operator.
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve((size_t)lap_full_.nonZeros() + (size_t)n);
  for (int row = 0; row < lap_full_.outerSize(); ++row) {
    if (dir_[(size_t)row]) continue;
    for (SpMat::InnerIterator it(lap_full_, row); it; ++it) {
      if (dir_[(size_t)it.col()]) continue;
      double v = it.value();
      if (r != 0.0) v *= xr_inv_[(size_t)row] * xr_[(size_t)it.col()];
      trip.emplace_back(row, (int)it.col(), v);
    }
  }
  for (std::int64_t dof = 0; dof < n; ++dof)
    if (dir_[(size_t)dof]) trip.emplace_back((int)dof, (int)dof, 1.0);
  lap_ = SpMat(n, n);
  lap_.setFromTriplets(trip.begin(), trip.end());
  lap_.makeCompressed();

  precond_.assign((size_t)n, 1.0);
  for (int row = 0; row < lap_.outerSize(); ++row)
    for (SpMat::InnerIterator it(lap_, row); it; ++it)
      if (it.col() == row && it.value() > 0.0)
        precond_[(size_t)row] = 1.0 / it.value();
}

VecX WittenGauge::laplacian(const VecX& u) const {
  GEOXRAY_REQUIRE(u.size() == lap_full_.cols(), "gauge: size mismatch");
  return lap_full_ * u;
}

VecX WittenGauge::masked(const VecX& v) const {
  GEOXRAY_REQUIRE(v.size() == (Eigen::Index)dir_.size(),
                  "gauge: size mismatch");
  VecX out = v;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (dir_[(size_t)i]) out[i] = 0.0;
  return out;
}

VecX WittenGauge::solve_dirichlet(const VecX& rhs, SolveStats* stats) const {
  const Eigen::Index n = lap_.rows();
  GEOXRAY_REQUIRE(rhs.size() == n, "gauge: rhs size mismatch");
  SolveStats local;
  SolveStats& st = stats ? *stats : local;
  st = SolveStats{};

  const VecX b = masked(rhs);
  const double bnorm = fields::wnorm(w_cg_, b);
  VecX x = VecX::Zero(n);
  if (bnorm == 0.0) {
    st.converged = true;
    st.rel_residual = 0.0;
    return x;
  }

  VecX res = b;
  VecX z(n), p(n), q(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = precond_[(size_t)i] * res[i];
  p = z;
  double rz = fields::wdot(w_cg_, res, z);
  std::vector<double> alphas, betas;
  alphas.reserve(64);

  for (int k = 0; k < opt_.max_iter; ++k) {
    q = lap_ * p;
    const double pq = fields::wdot(w_cg_, p, q);
    if (!(pq > 0.0) || !std::isfinite(pq)) {
      st.iterations = (int)st.history.size();
      st.rel_residual = st.history.empty() ? 1.0 : st.history.back();
      ritz_extremes(alphas, betas, &st);
      std::ostringstream os;
      os << "gauge solve: curvature breakdown (<p,Lp> = " << pq
         << ") after " << st.iterations
         << " iterations; operator is not positive definite";
      throw solver_error(os.str());
    }
    const double alpha = rz / pq;
    alphas.push_back(alpha);
    x += alpha * p;
    res -= alpha * q;
    const double rel = fields::wnorm(w_cg_, res) / bnorm;
    st.history.push_back(rel);
    if (rel <= opt_.tol) {
      st.converged = true;
      break;
    }
    for (Eigen::Index i = 0; i < n; ++i) z[i] = precond_[(size_t)i] * res[i];
    const double rz_new = fields::wdot(w_cg_, res, z);
    const double beta = rz_new / rz;
    betas.push_back(beta);
    rz = rz_new;
    p = z + beta * p;
  }

  st.iterations = (int)st.history.size();
  st.rel_residual = st.history.empty() ? 1.0 : st.history.back();
  ritz_extremes(alphas, betas, &st);
  if (!st.converged) {
    std::ostringstream os;
    os << "gauge solve: CG stalled at relative residual " << st.rel_residual
       << " after " << st.iterations << " iterations (tol " << opt_.tol
       << ", smallest Ritz value " << st.ritz_min
       << "); F may be below the positivity threshold for this region";
    throw solver_error(os.str());
  }
  return x;
}

VecX WittenGauge::potential_of(const VecX& f, SolveStats* stats) const {
  GEOXRAY_REQUIRE(f.size() == d_.rows(), "gauge: field size mismatch");
  VecX rhs = delta_ * f;
  if (!xr_inv_.empty())
    for (Eigen::Index i = 0; i < rhs.size(); ++i)
      rhs[i] *= xr_inv_[(size_t)i];
  VecX v = solve_dirichlet(rhs, stats);
  if (!xr_.empty())
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] *= xr_[(size_t)i];
  return v;
}

VecX WittenGauge::project_potential(const VecX& f, SolveStats* stats) const {
  return d_ * potential_of(f, stats);
}

std::pair<VecX, VecX> WittenGauge::split(const VecX& f) const {
  VecX pf = project_potential(f);
  VecX sf = f - pf;
  return {std::move(sf), std::move(pf)};
}

VecX WittenGauge::poisson(const VecX& ext, SolveStats* stats) const {
  GEOXRAY_REQUIRE(ext.size() == lap_full_.cols(), "gauge: size mismatch");
  VecX rhs = lap_full_ * ext;
  if (!xr_inv_.empty())
    for (Eigen::Index i = 0; i < rhs.size(); ++i)
      rhs[i] *= xr_inv_[(size_t)i];
  VecX v = solve_dirichlet(rhs, stats);
  if (!xr_.empty())
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] *= xr_[(size_t)i];
  return ext - v;
}

double WittenGauge::poincare_constant(int power_iters, unsigned seed,
                                      SolveStats* stats) const {
  const Eigen::Index n = lap_.rows();
  Rng rng(seed);
  VecX v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    v[i] = dir_[(size_t)i] ? 0.0 : rng.uniform(-1.0, 1.0);
  double vn = fields::wnorm(w_in_, v);
  GEOXRAY_REQUIRE(vn > 0.0, "poincare: empty interior");
  v /= vn;

  for (int it = 0; it < power_iters; ++it) {
    VecX rhs = v;
    if (!xr_inv_.empty())
      for (Eigen::Index i = 0; i < rhs.size(); ++i)
        rhs[i] *= xr_inv_[(size_t)i];
    VecX y = solve_dirichlet(rhs, stats);
    if (!xr_.empty())
      for (Eigen::Index i = 0; i < y.size(); ++i) y[i] *= xr_[(size_t)i];
    const double yn = fields::wnorm(w_in_, y);
    GEOXRAY_REQUIRE(yn > 0.0, "poincare: inverse iteration collapsed");
    v = y / yn;
  }
  // Rayleigh quotient of the unconjugated form: for interior-supported v the
  // exact-adjoint construction gives <v, L v> = ||d_F v||^2.
  const VecX Lv = lap_full_ * v;
  return fields::wdot(w_in_, v, Lv) / fields::wdot(w_in_, v, v);
}

double WittenGauge::poincare_floor() const {
  return (F_ - x_max_) * (F_ - x_max_) - x_max_ * x_max_;
}

} // namespace gauge
} // namespace geoxray
