#pragma once
// Tensor fields on region charts, expressed in the boundary-adapted frame
// {dx/x^2, dy^a/x}, together with the assembled first-order operators of the
// gauge calculus:
//
//   d_F   : rank-m -> rank-(m+1) conjugated symmetric derivative, realized
//           with the exact operator identity  e^{-F/x} x^2 d/dx e^{F/x}
//           = x^2 d/dx - F, so no exponentials ever enter a stencil, and
//   delta_F : its exact adjoint with respect to the diagonal weighted inner
//           product (computed as a weighted matrix transpose, so the discrete
//           adjoint identity holds to rounding).
//
// Fields are stored componentwise per grid node.  Symmetric 2-tensors use six
// components (NN, N1, N2, 11, 12, 22) with pairing multiplicities
// (1,2,2,1,2,1).

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "geoxray/common.hpp"
#include "geoxray/geometry.hpp"
#include "geoxray/grid.hpp"

namespace geoxray::fields {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using VecX = Eigen::VectorXd;

inline int ncomp(int rank) { return rank == 0 ? 1 : (rank == 1 ? 3 : 6); }

// Pairing multiplicities of the stored components.
inline const double* multiplicities(int rank) {
  static const double m0[1] = {1};
  static const double m1[3] = {1, 1, 1};
  static const double m2[6] = {1, 2, 2, 1, 2, 1};
  return rank == 0 ? m0 : (rank == 1 ? m1 : m2);
}

// Monomials of a frame velocity V = (V_N, V_1, V_2) paired against stored
// components: rank 0 -> {1}; rank 1 -> {V_N,V_1,V_2};
// rank 2 -> {V_N^2, V_N V_1, V_N V_2, V_1^2, V_1 V_2, V_2^2}.
inline void velocity_monomials(int rank, const double V[3], double out[6]) {
  if (rank == 0) {
    out[0] = 1.0;
    return;
  }
  if (rank == 1) {
    out[0] = V[0];
    out[1] = V[1];
    out[2] = V[2];
    return;
  }
  out[0] = V[0] * V[0];
  out[1] = V[0] * V[1];
  out[2] = V[0] * V[2];
  out[3] = V[1] * V[1];
  out[4] = V[1] * V[2];
  out[5] = V[2] * V[2];
}

// <f, V^{(m)}> with multiplicities.
inline double pair_components(int rank, const double* comps,
                              const double* mono) {
  const double* mult = multiplicities(rank);
  double s = 0.0;
  for (int c = 0; c < ncomp(rank); ++c) s += mult[c] * comps[c] * mono[c];
  return s;
}

// Pointwise conversion between coordinate-frame components (w.r.t. dx, dy^a)
// and adapted-frame components (w.r.t. dx/x^2, dy^a/x).
void coord_to_frame(int rank, double x, const double* coord, double* frame);
void frame_to_coord(int rank, double x, const double* frame, double* coord);

// ---------------------------------------------------------------------------
// Grid fields

struct TensorField {
  int rank = 0;
  Grid3 grid;
  std::vector<double> data;  // node-major, component fastest

  static TensorField zeros(int rank, const Grid3& g);

  std::int64_t nnodes() const { return grid.size(); }
  double& at(std::int64_t node, int c) {
    return data[(size_t)node * ncomp(rank) + c];
  }
  double at(std::int64_t node, int c) const {
    return data[(size_t)node * ncomp(rank) + c];
  }
};

// ---------------------------------------------------------------------------
// Region degree-of-freedom indexing
//
// Operators act on the compactly indexed nodes of one nesting level of a
// RegionChart.  DOF layout: dof = compact_node * ncomp + component.

struct RegionIndex {
  const geometry::RegionChart* chart = nullptr;
  int level = 0;
  std::vector<std::int64_t> node_of;    // compact -> full grid node
  std::vector<std::int32_t> compact_of; // full grid node -> compact (-1 out)
  std::int64_t count = 0;

  RegionIndex() = default;
  RegionIndex(const geometry::RegionChart& rc, int lvl);

  bool inside(std::int64_t full_node) const {
    return compact_of[(size_t)full_node] >= 0;
  }
  double x_of(std::int64_t compact) const {
    return chart->grid.coord(0, chart->grid.unidx(node_of[(size_t)compact])[0]);
  }
  std::int64_t ndof(int rank) const { return count * ncomp(rank); }
};

// Diagonal inner-product weights on region DOFs:
//   w[dof] = mult_c * h_vol * x^(rexp - 4).
// rexp = 0 is the plain weighted space; the 2-tensor pipeline uses rexp = 2
// (errors measured on x-scaled fields, milder emphasis near the artificial
// boundary).
std::vector<double> weight_vector(const RegionIndex& R, int rank,
                                  double rexp = 0.0);

double wdot(const std::vector<double>& W, const VecX& a, const VecX& b);
inline double wnorm(const std::vector<double>& W, const VecX& a) {
  return std::sqrt(wdot(W, a, a));
}

// Gather a grid field into a region DOF vector / scatter it back (nodes
// outside the region untouched).
VecX restrict_field(const TensorField& f, const RegionIndex& R);
void inject_field(const VecX& u, const RegionIndex& R, TensorField* out);

// ---------------------------------------------------------------------------
// Assembled operators
//
// assemble_d builds the conjugated symmetric derivative taking rank_in
// (0 or 1) to rank_in + 1 on the region nodes.  Derivatives use central
// differences where both neighbours lie in the region and one-sided
// second-order stencils at region edges.  Rows are output DOFs, columns input
// DOFs, both in the RegionIndex layout.
SpMat assemble_d(const RegionIndex& R, int rank_in, double F);

// Exact weighted transpose: returns B with B = W_in^{-1} A^T W_out, the
// adjoint of A for the diagonal inner products w_in, w_out.
SpMat weighted_transpose(const SpMat& A, const std::vector<double>& w_in,
                         const std::vector<double>& w_out);

// Full (unsymmetrized) conjugated covariant derivative of a one-form in the
// adapted frame: 9 output components per node, comp = 3*i + j for derivative
// slot i and one-form slot j.  Symmetrizing the output reproduces
// assemble_d(R, 1, F) exactly (same stencils, same zero-order terms); the
// unsymmetrized operator feeds the energy-splitting diagnostics.
SpMat assemble_grad(const RegionIndex& R, double F);

// Zero-order normal-to-tangential coupling of the assembled one-form
// derivative, measured by applying it to the constant normal field and
// reading the tangential-tangential response at one node.  Returns
// (a_11, a_12, a_22).
std::array<double, 3> measure_a_tensor(const SpMat& d1, const RegionIndex& R,
                                       std::int64_t compact_node);

// ---------------------------------------------------------------------------
// Analytic (callable) fields
//
// Callable fields evaluate adapted-frame components at arbitrary chart
// points.  They feed the pointwise forward integrator, which is what makes
// exact gauge-annihilation checks possible: interpolating a sampled potential
// leaves non-telescoping interpolation error, while the callable path
// telescopes to the endpoint values.

struct FieldCallable {
  int rank = 0;
  std::function<void(const Vec3& w, double* comps)> eval;
};

// Scalar potential with analytic coordinate gradient.
struct ScalarPotential {
  std::function<double(const Vec3&)> v;
  std::function<Vec3(const Vec3&)> grad;  // (d/dx, d/dy1, d/dy2)
};

// One-form potential with analytic coordinate Jacobian of its frame
// components: jac[c*3 + j] = d(frame comp c)/d(coord j).
struct OneFormPotential {
  std::function<void(const Vec3&, double*)> w;    // 3 frame components
  std::function<void(const Vec3&, double*)> jac;  // 9 derivatives
};

// d_F applied analytically to a potential (frame components, any chart
// point).  Chart Christoffel symbols are evaluated on demand.
FieldCallable potential_derivative(const geometry::RegionChart& rc, double F,
                                   ScalarPotential pot);
FieldCallable potential_derivative(const geometry::RegionChart& rc, double F,
                                   OneFormPotential pot);

TensorField sample_callable(const FieldCallable& fc, const Grid3& g);

// Trilinear-interpolation callable over a grid field (hull-clamped), the
// adapter that lets grid fields feed the pointwise ray integrators.
FieldCallable interpolant(const TensorField& f);

// ---------------------------------------------------------------------------
// Reflection extension across the artificial boundary x = 0
//
// Extends coordinate-frame fields to x < 0 by the odd/even higher-order
// reflection u(x) -> sum_k c_k (Phi_k^* u)(x), Phi_k(y, x) = (y, -k x),
// k = 1..3, with the normal component picking up a factor (-k) per normal
// index.  The coefficients solve sum_k c_k (-k)^j = 1, j = 0..2, which gives
// value and first-derivative continuity for every component type.

std::array<double, 3> reflection_coefficients();  // (6, -8, 3)

// u: coordinate-frame callable valid for x >= 0; result valid for x < 0 too.
FieldCallable reflect_extend(const FieldCallable& u);

}  // namespace geoxray::fields
