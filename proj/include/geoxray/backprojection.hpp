#pragma once
// Cone-averaged backprojection over ray families and the conjugated normal
// operator (backprojection composed with the conjugated ray transform).
//
// Backprojection at an anchored node z with depth x averages the per-ray
// data over the node's own ray cone against a smooth even cutoff in the
// rescaled slope, pairing with the launch direction monomials:
//
//   rank 0:  x^{-1} sum  chi(l) d[ray]                    dl dw
//   rank 1:          sum  chi(l) d[ray] (l, cos w, sin w)  dl dw
//   rank 2:  x^{+1} sum  chi(l) d[ray] (l, cos w, sin w)^{sym 2} dl dw
//
// The slope weight dl is the interior-uniform grid spacing (the cutoff
// vanishes to all orders at the cone edge, so the uniform-weight sum is
// high-order accurate); dw = 2 pi / n_omega.
//
// Normal operator: N_F f = backproject(forward_grid(f, F)).  The forward
// weight exp(F (1/x - 1/x_foot)) already carries the conjugation on both
// sides of the composition, so no extra factor appears here.  For externally
// produced (unconjugated) data, conjugate_data applies the per-ray factor
// exp(-F / x_foot) first.

#include <cstdint>
#include <vector>

#include "geoxray/fields.hpp"
#include "geoxray/transform.hpp"

namespace geoxray::backprojection {

using transform::GeodesicSet;
using transform::VecX;

// Even cutoff in the rescaled slope: chi(s) = exp(-s^2 / (2 nu)) * b(s/k)
// with b smooth, identically 1 on |u| <= flat and supported in |u| < 1.
struct CutoffProfile {
  double nu = 0.3;    // Gaussian variance parameter (typically alpha / F)
  double k = 0.7;     // truncation radius: support of chi is (-k, k)
  double flat = 0.5;  // fraction of k on which the bump factor equals 1

  double operator()(double s) const;
};

// Per-ray factor exp(-F / x_foot): raw transform data -> conjugated data.
VecX conjugate_data(const GeodesicSet& gs, const VecX& data, double F);

// Cone-averaged backprojection of (conjugated) per-ray data onto the chart
// grid.  Only anchored feet receive values; everything else stays zero.
fields::TensorField backproject(const GeodesicSet& gs, const VecX& data,
                                int rank, const CutoffProfile& chi);

// Conjugated normal operator on a grid field (rank preserved).
fields::TensorField normal_operator(const GeodesicSet& gs,
                                    const fields::TensorField& f, double F,
                                    const CutoffProfile& chi);

// Normal operator restricted to the compact degrees of freedom of a region:
// inject -> forward -> backproject -> restrict.
VecX apply_normal(const GeodesicSet& gs, const fields::RegionIndex& R,
                  int rank, double F, const CutoffProfile& chi, const VecX& u);

// For each full-grid node, the retained rays whose interpolation cells touch
// it (sorted, unique).  Lets a basis-field forward skip rays it cannot meet.
struct RayNodeIndex {
  std::vector<std::vector<std::int32_t>> rays_of;
};

RayNodeIndex build_ray_index(const GeodesicSet& gs);

// Dense assembly of the restricted normal operator, column by column via the
// ray-node index.  Each column reproduces apply_normal of the basis vector
// exactly up to floating-point associativity (only exact zeros are skipped).
Eigen::MatrixXd assemble_normal_matrix(const GeodesicSet& gs,
                                       const RayNodeIndex& index,
                                       const fields::RegionIndex& R, int rank,
                                       double F, const CutoffProfile& chi);

}  // namespace geoxray::backprojection
