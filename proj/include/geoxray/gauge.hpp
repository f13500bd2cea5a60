/**
 * gauge.hpp — Witten-conjugated gauge decomposition on one nesting level.
 *
 * The central object is the solenoidal Witten Laplacian
 *
 *     L = delta_F d_F      (potentials of rank p -> fields of rank p+1)
 *
 * assembled from the conjugated symmetric derivative d_F and its exact
 * weighted adjoint delta_F, with homogeneous Dirichlet conditions on the
 * interior region boundary (the artificial small-x side carries none).
 * Dirichlet rows/columns are eliminated symmetrically, so the reduced
 * operator stays self-adjoint in the weighted inner product and positive
 * definite whenever F is large enough for the level's depth range.
 *
 * On top of the solver the class provides
 *   - the potential/solenoidal projections  P = d_F L^{-1} delta_F,
 *     S = Id - P  of a rank p+1 field,
 *   - the Poisson (harmonic-extension) operator  u = e - L^{-1} L e  for
 *     boundary data prescribed on the Dirichlet nodes,
 *   - an inverse-power estimate of the Poincare constant
 *     min ||d_F u||^2 / ||u||^2 over Dirichlet-interior potentials, together
 *     with the explicit depth-based floor (F - x_max)^2 - x_max^2 it is
 *     compared against in three dimensions.
 *
 * The solver is preconditioned CG in the weighted inner product (diagonal
 * preconditioner).  CG coefficients feed a Lanczos tridiagonal whose extreme
 * eigenvalues (Ritz values of the preconditioned operator) are reported in
 * SolveStats; a stall or a collapsing smallest Ritz value is the practical
 * signal that F sits below the positivity threshold for the region.
 *
 * A diagonal x^r conjugation of the assembled operator (solving in the
 * x^r-shifted scale of weighted spaces) is exposed as a solver option;
 * the default r = 0 is used by the reconstruction pipeline.
 */
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fields.hpp"

namespace geoxray {
namespace gauge {

struct SolveOptions {
  double tol = 1e-10;    // relative residual (weighted norm) target
  int max_iter = 2000;   // CG iteration cap
  double weight_r = 0.0; // x^r conjugation of the assembled operator
  double rexp = 0.0;     // weight exponent offset of the inner products
};

struct SolveStats {
  int iterations = 0;
  double rel_residual = 1.0;
  bool converged = false;
  // Extreme Ritz values of the preconditioned operator (from the CG Lanczos
  // tridiagonal); ritz_min <= 0 or ~0 signals loss of positivity.
  double ritz_min = 0.0;
  double ritz_max = 0.0;
  std::vector<double> history; // relative residual after each iteration
};

class WittenGauge {
 public:
  // Throws config_error if the level has no Dirichlet nodes (a region whose
  // boundary is entirely artificial cannot anchor the gauge).
  WittenGauge(const fields::RegionIndex& R, int potential_rank, double F,
              SolveOptions opt = {});

  // --- assembled pieces -------------------------------------------------
  const fields::SpMat& d() const { return d_; }
  const fields::SpMat& delta() const { return delta_; }
  const std::vector<double>& w_pot() const { return w_in_; }
  const std::vector<double>& w_field() const { return w_out_; }
  const std::vector<std::uint8_t>& dirichlet_dofs() const { return dir_; }
  const fields::RegionIndex& region() const { return *R_; }
  int potential_rank() const { return rank_; }
  double F() const { return F_; }
  double x_max() const { return x_max_; }

  /// delta_F d_F u with no Dirichlet masking (the raw operator).
  fields::VecX laplacian(const fields::VecX& u) const;

  /// Zero the Dirichlet entries of a potential-rank vector.
  fields::VecX masked(const fields::VecX& v) const;

  // --- solver ------------------------------------------------------------
  // Solve the Dirichlet-eliminated system L v = masked(rhs); v vanishes on
  // Dirichlet DOFs exactly.  With weight_r = r the system actually solved is
  // the x^{-r} L x^r conjugate; solutions of the r = 0 problem are recovered
  // as x^r v.  Throws solver_error on non-convergence (stats, including the
  // residual history, are filled first if a pointer is supplied).
  fields::VecX solve_dirichlet(const fields::VecX& rhs,
                               SolveStats* stats = nullptr) const;

  /// Potential v with P f = d_F v (the gauge potential of f).
  fields::VecX potential_of(const fields::VecX& f,
                            SolveStats* stats = nullptr) const;
  /// P f = d_F L^{-1} delta_F f.
  fields::VecX project_potential(const fields::VecX& f,
                                 SolveStats* stats = nullptr) const;
  /// (S f, P f) with S f = f - P f.
  std::pair<fields::VecX, fields::VecX> split(const fields::VecX& f) const;

  // Harmonic extension of boundary data: u = ext - L^{-1} masked(L ext).
  // Only the Dirichlet entries of `ext` matter up to solver tolerance; the
  // trace of u equals them exactly.
  fields::VecX poisson(const fields::VecX& ext,
                       SolveStats* stats = nullptr) const;

  // Inverse-power estimate of min ||d_F u||^2 / ||u||^2 over Dirichlet
  // potentials (the gauge Poincare constant of the level).
  double poincare_constant(int power_iters = 30, unsigned seed = 11,
                           SolveStats* stats = nullptr) const;
  /// Explicit three-dimensional floor (F - x_max)^2 - x_max^2.
  double poincare_floor() const;

 private:
  const fields::RegionIndex* R_ = nullptr;
  int rank_ = 0;
  double F_ = 1.0;
  SolveOptions opt_;
  fields::SpMat d_, delta_;
  fields::SpMat lap_full_; // delta_F d_F, unconjugated, unmasked
  fields::SpMat lap_;      // conjugated + Dirichlet-eliminated (CG operator)
  std::vector<double> w_in_, w_out_;
  std::vector<double> w_cg_;    // CG inner-product weights (w_in * x^{2r})
  std::vector<double> precond_; // Jacobi preconditioner 1/diag(lap_)
  std::vector<double> xr_, xr_inv_; // x^r, x^{-r} per DOF (empty if r == 0)
  std::vector<std::uint8_t> dir_;   // per-DOF Dirichlet flag
  double x_max_ = 0.0;
};

} // namespace gauge
} // namespace geoxray
