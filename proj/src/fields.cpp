#include "geoxray/fields.hpp"

#include <cmath>

namespace geoxray::fields {

void coord_to_frame(int rank, double x, const double* coord, double* frame) {
  const double x2 = x * x, x3 = x2 * x, x4 = x2 * x2;
  switch (rank) {
    case 0:
      frame[0] = coord[0];
      break;
    case 1:
      frame[0] = x2 * coord[0];
      frame[1] = x * coord[1];
      frame[2] = x * coord[2];
      break;
    default:
      frame[0] = x4 * coord[0];
      frame[1] = x3 * coord[1];
      frame[2] = x3 * coord[2];
      frame[3] = x2 * coord[3];
      frame[4] = x2 * coord[4];
      frame[5] = x2 * coord[5];
  }
}

void frame_to_coord(int rank, double x, const double* frame, double* coord) {
  const double x2 = x * x, x3 = x2 * x, x4 = x2 * x2;
  switch (rank) {
    case 0:
      coord[0] = frame[0];
      break;
    case 1:
      coord[0] = frame[0] / x2;
      coord[1] = frame[1] / x;
      coord[2] = frame[2] / x;
      break;
    default:
      coord[0] = frame[0] / x4;
      coord[1] = frame[1] / x3;
      coord[2] = frame[2] / x3;
      coord[3] = frame[3] / x2;
      coord[4] = frame[4] / x2;
      coord[5] = frame[5] / x2;
  }
}

TensorField TensorField::zeros(int rank, const Grid3& g) {
  TensorField f;
  f.rank = rank;
  f.grid = g;
  f.data.assign((size_t)g.size() * ncomp(rank), 0.0);
  return f;
}

RegionIndex::RegionIndex(const geometry::RegionChart& rc, int lvl)
    : chart(&rc), level(lvl) {
  GEOXRAY_REQUIRE(lvl >= 0 && lvl < 3, "region level out of range");
  node_of = rc.nodes[lvl];
  compact_of.assign((size_t)rc.grid.size(), -1);
  for (size_t c = 0; c < node_of.size(); ++c)
    compact_of[(size_t)node_of[c]] = (std::int32_t)c;
  count = (std::int64_t)node_of.size();
}

std::vector<double> weight_vector(const RegionIndex& R, int rank,
                                  double rexp) {
  const int nc = ncomp(rank);
  const double* mult = multiplicities(rank);
  const Grid3& g = R.chart->grid;
  const double hvol = g.h[0] * g.h[1] * g.h[2];
  std::vector<double> w((size_t)R.count * nc);
  for (std::int64_t i = 0; i < R.count; ++i) {
    const double x = R.x_of(i);
    const double base = hvol * std::pow(x, rexp - 4.0);
    for (int c = 0; c < nc; ++c) w[(size_t)i * nc + c] = mult[c] * base;
  }
  return w;
}

double wdot(const std::vector<double>& W, const VecX& a, const VecX& b) {
  GEOXRAY_REQUIRE((std::int64_t)W.size() == a.size() && a.size() == b.size(),
                  "weighted dot: size mismatch");
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += W[(size_t)i] * a[i] * b[i];
  return s;
}

VecX restrict_field(const TensorField& f, const RegionIndex& R) {
  const int nc = ncomp(f.rank);
  VecX u(R.count * nc);
  for (std::int64_t i = 0; i < R.count; ++i)
    for (int c = 0; c < nc; ++c)
      u[i * nc + c] = f.at(R.node_of[(size_t)i], c);
  return u;
}

void inject_field(const VecX& u, const RegionIndex& R, TensorField* out) {
  const int nc = ncomp(out->rank);
  GEOXRAY_REQUIRE(u.size() == R.count * nc, "inject: size mismatch");
  for (std::int64_t i = 0; i < R.count; ++i)
    for (int c = 0; c < nc; ++c)
      out->at(R.node_of[(size_t)i], c) = u[i * nc + c];
}

// ---------------------------------------------------------------------------
// assembly

namespace {

struct Tap {
  std::int32_t node = -1;  // compact column node
  double c = 0.0;
};

// First-derivative taps along one axis: central where both neighbours lie in
// the region, one-sided second order (then first order) at edges.
int deriv_taps(const RegionIndex& R, const std::array<int, 3>& ijk, int axis,
               Tap taps[3]) {
  const Grid3& g = R.chart->grid;
  const double h = g.h[axis];
  auto at = [&](int delta) -> std::int32_t {
    std::array<int, 3> q = ijk;
    q[axis] += delta;
    if (q[axis] < 0 || q[axis] >= g.n[axis]) return -1;
    return R.compact_of[(size_t)g.idx(q[0], q[1], q[2])];
  };
  const std::int32_t c0 = at(0), m1 = at(-1), p1 = at(+1);
  if (m1 >= 0 && p1 >= 0) {
    taps[0] = {m1, -0.5 / h};
    taps[1] = {p1, 0.5 / h};
    return 2;
  }
  if (p1 >= 0) {
    const std::int32_t p2 = at(+2);
    if (p2 >= 0) {
      taps[0] = {c0, -1.5 / h};
      taps[1] = {p1, 2.0 / h};
      taps[2] = {p2, -0.5 / h};
      return 3;
    }
    taps[0] = {c0, -1.0 / h};
    taps[1] = {p1, 1.0 / h};
    return 2;
  }
  if (m1 >= 0) {
    const std::int32_t m2 = at(-2);
    if (m2 >= 0) {
      taps[0] = {c0, 1.5 / h};
      taps[1] = {m1, -2.0 / h};
      taps[2] = {m2, 0.5 / h};
      return 3;
    }
    taps[0] = {c0, 1.0 / h};
    taps[1] = {m1, -1.0 / h};
    return 2;
  }
  return 0;  // isolated line: no derivative information
}

}  // namespace

SpMat assemble_d(const RegionIndex& R, int rank_in, double F) {
  GEOXRAY_REQUIRE(rank_in == 0 || rank_in == 1,
                  "assemble_d: rank_in must be 0 or 1");
  const geometry::RegionChart& rc = *R.chart;
  const Grid3& g = rc.grid;
  const int nci = ncomp(rank_in), nco = ncomp(rank_in + 1);

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve((size_t)R.count * (rank_in == 0 ? 8 : 30));
  Tap taps[3];

  for (std::int64_t r = 0; r < R.count; ++r) {
    const std::array<int, 3> ijk = g.unidx(R.node_of[(size_t)r]);
    const double x = g.coord(0, ijk[0]);
    auto add = [&](int out_c, std::int64_t col_node, int in_c, double v) {
      if (v != 0.0)
        trip.emplace_back(r * nco + out_c, col_node * nci + in_c, v);
    };

    if (rank_in == 0) {
      // N: (x^2 d/dx - F) u ; T_a: x d/dy_a u
      int nt = deriv_taps(R, ijk, 0, taps);
      for (int t = 0; t < nt; ++t) add(0, taps[t].node, 0, x * x * taps[t].c);
      add(0, r, 0, -F);
      for (int a = 1; a <= 2; ++a) {
        nt = deriv_taps(R, ijk, a, taps);
        for (int t = 0; t < nt; ++t) add(a, taps[t].node, 0, x * taps[t].c);
      }
      continue;
    }

    // one-form -> symmetric 2-tensor
    SymMat3 G[3];
    rc.chart_christoffel(g.node(ijk[0], ijk[1], ijk[2]), G);
    const double x2 = x * x, x3 = x2 * x;

    // NN row
    int nt = deriv_taps(R, ijk, 0, taps);
    for (int t = 0; t < nt; ++t) add(0, taps[t].node, 0, x2 * taps[t].c);
    add(0, r, 0, -F - 2.0 * x - x2 * G[0][0]);
    add(0, r, 1, -x3 * G[1][0]);
    add(0, r, 2, -x3 * G[2][0]);

    // N-tangential rows
    for (int a = 1; a <= 2; ++a) {
      nt = deriv_taps(R, ijk, 0, taps);
      for (int t = 0; t < nt; ++t)
        add(a, taps[t].node, a, 0.5 * x2 * taps[t].c);
      add(a, r, a, 0.5 * (-F - x));
      nt = deriv_taps(R, ijk, a, taps);
      for (int t = 0; t < nt; ++t) add(a, taps[t].node, 0, 0.5 * x * taps[t].c);
      add(a, r, 0, -x * G[0][a]);
      add(a, r, 1, -x2 * G[1][a]);
      add(a, r, 2, -x2 * G[2][a]);
    }

    // tangential-tangential rows: (a,b) in (1,1),(1,2),(2,2) -> comps 3,4,5
    for (int a = 1; a <= 2; ++a)
      for (int b = a; b <= 2; ++b) {
        const int s = (a == 1) ? (b == 1 ? 3 : 4) : 5;
        nt = deriv_taps(R, ijk, a, taps);
        for (int t = 0; t < nt; ++t)
          add(s, taps[t].node, b, 0.5 * x * taps[t].c);
        nt = deriv_taps(R, ijk, b, taps);
        for (int t = 0; t < nt; ++t)
          add(s, taps[t].node, a, 0.5 * x * taps[t].c);
        add(s, r, 0, -G[0][s]);
        add(s, r, 1, -x * G[1][s]);
        add(s, r, 2, -x * G[2][s]);
      }
  }

  SpMat A(R.count * nco, R.count * nci);
  A.setFromTriplets(trip.begin(), trip.end());
  A.makeCompressed();
  return A;
}

SpMat assemble_grad(const RegionIndex& R, double F) {
  const geometry::RegionChart& rc = *R.chart;
  const Grid3& g = rc.grid;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve((size_t)R.count * 40);
  Tap taps[3];

  for (std::int64_t r = 0; r < R.count; ++r) {
    const std::array<int, 3> ijk = g.unidx(R.node_of[(size_t)r]);
    const double x = g.coord(0, ijk[0]);
    const double x2 = x * x, x3 = x2 * x;
    SymMat3 G[3];
    rc.chart_christoffel(g.node(ijk[0], ijk[1], ijk[2]), G);
    auto add = [&](int out_c, std::int64_t col_node, int in_c, double v) {
      if (v != 0.0) trip.emplace_back(r * 9 + out_c, col_node * 3 + in_c, v);
    };

    // (N, N): (x^2 d/dx - F) w_N - (2x + x^2 G^x_xx) w_N - x^3 G^a_xx w_a
    int nt = deriv_taps(R, ijk, 0, taps);
    for (int t = 0; t < nt; ++t) add(0, taps[t].node, 0, x2 * taps[t].c);
    add(0, r, 0, -F - 2.0 * x - x2 * G[0][0]);
    add(0, r, 1, -x3 * G[1][0]);
    add(0, r, 2, -x3 * G[2][0]);

    for (int a = 1; a <= 2; ++a) {
      // (N, a): (x^2 d/dx - F) w_a - x w_a - x G^x_xa w_N - x^2 G^b_xa w_b
      nt = deriv_taps(R, ijk, 0, taps);
      for (int t = 0; t < nt; ++t) add(a, taps[t].node, a, x2 * taps[t].c);
      add(a, r, a, -F - x);
      add(a, r, 0, -x * G[0][a]);
      add(a, r, 1, -x2 * G[1][a]);
      add(a, r, 2, -x2 * G[2][a]);

      // (a, N): x d/dy_a w_N - x G^x_xa w_N - x^2 G^b_xa w_b
      nt = deriv_taps(R, ijk, a, taps);
      for (int t = 0; t < nt; ++t)
        add(a * 3, taps[t].node, 0, x * taps[t].c);
      add(a * 3, r, 0, -x * G[0][a]);
      add(a * 3, r, 1, -x2 * G[1][a]);
      add(a * 3, r, 2, -x2 * G[2][a]);

      // (a, b): x d/dy_a w_b - G^x_ab w_N - x G^c_ab w_c
      for (int b = 1; b <= 2; ++b) {
        const int s = (a <= b) ? ((a == 1) ? (b == 1 ? 3 : 4) : 5)
                               : ((b == 1) ? (a == 1 ? 3 : 4) : 5);
        nt = deriv_taps(R, ijk, a, taps);
        for (int t = 0; t < nt; ++t)
          add(a * 3 + b, taps[t].node, b, x * taps[t].c);
        add(a * 3 + b, r, 0, -G[0][s]);
        add(a * 3 + b, r, 1, -x * G[1][s]);
        add(a * 3 + b, r, 2, -x * G[2][s]);
      }
    }
  }

  SpMat A(R.count * 9, R.count * 3);
  A.setFromTriplets(trip.begin(), trip.end());
  A.makeCompressed();
  return A;
}

SpMat weighted_transpose(const SpMat& A, const std::vector<double>& w_in,
                         const std::vector<double>& w_out) {
  GEOXRAY_REQUIRE((std::int64_t)w_in.size() == A.cols() &&
                      (std::int64_t)w_out.size() == A.rows(),
                  "weighted_transpose: weight sizes do not match operator");
  SpMat B = SpMat(A.transpose());
  for (int r = 0; r < B.outerSize(); ++r) {
    const double inv = 1.0 / w_in[(size_t)r];
    for (SpMat::InnerIterator it(B, r); it; ++it)
      it.valueRef() *= inv * w_out[(size_t)it.col()];
  }
  B.makeCompressed();
  return B;
}

std::array<double, 3> measure_a_tensor(const SpMat& d1, const RegionIndex& R,
                                       std::int64_t compact_node) {
  GEOXRAY_REQUIRE(d1.cols() == R.count * 3 && d1.rows() == R.count * 6,
                  "measure_a_tensor: operator shape mismatch");
  VecX u = VecX::Zero(R.count * 3);
  for (std::int64_t i = 0; i < R.count; ++i) u[i * 3] = 1.0;
  const VecX y = d1 * u;
  return {y[compact_node * 6 + 3], y[compact_node * 6 + 4],
          y[compact_node * 6 + 5]};
}

// ---------------------------------------------------------------------------
// analytic fields

FieldCallable potential_derivative(const geometry::RegionChart&, double F,
                                   ScalarPotential pot) {
  // The scalar case has no Christoffel terms, so the chart is not consulted.
  FieldCallable out;
  out.rank = 1;
  out.eval = [F, pot = std::move(pot)](const Vec3& w, double* comps) {
    const double x = w[0];
    const Vec3 gr = pot.grad(w);
    comps[0] = x * x * gr[0] - F * pot.v(w);
    comps[1] = x * gr[1];
    comps[2] = x * gr[2];
  };
  return out;
}

FieldCallable potential_derivative(const geometry::RegionChart& rc, double F,
                                   OneFormPotential pot) {
  FieldCallable out;
  out.rank = 2;
  out.eval = [&rc, F, pot = std::move(pot)](const Vec3& w, double* comps) {
    const double x = w[0], x2 = x * x, x3 = x2 * x;
    double W[3], J[9];
    pot.w(w, W);
    pot.jac(w, J);
    SymMat3 G[3];
    rc.chart_christoffel(w, G);

    comps[0] = x2 * J[0] - (F + 2.0 * x + x2 * G[0][0]) * W[0] -
               x3 * (G[1][0] * W[1] + G[2][0] * W[2]);
    for (int a = 1; a <= 2; ++a)
      comps[a] = 0.5 * (x2 * J[a * 3 + 0] - (F + x) * W[a] + x * J[0 * 3 + a]) -
                 x * G[0][a] * W[0] - x2 * (G[1][a] * W[1] + G[2][a] * W[2]);
    for (int a = 1; a <= 2; ++a)
      for (int b = a; b <= 2; ++b) {
        const int s = (a == 1) ? (b == 1 ? 3 : 4) : 5;
        comps[s] = 0.5 * x * (J[a * 3 + b] + J[b * 3 + a]) - G[0][s] * W[0] -
                   x * (G[1][s] * W[1] + G[2][s] * W[2]);
      }
  };
  return out;
}

TensorField sample_callable(const FieldCallable& fc, const Grid3& g) {
  TensorField f = TensorField::zeros(fc.rank, g);
  const int nc = ncomp(fc.rank);
  parallel_for(g.size(), [&](std::int64_t node) {
    const std::array<int, 3> ijk = g.unidx(node);
    fc.eval(g.node(ijk[0], ijk[1], ijk[2]), &f.data[(size_t)node * nc]);
  });
  return f;
}

FieldCallable interpolant(const TensorField& f) {
  const int nc = ncomp(f.rank);
  // Capture the field by value: the callable must outlive its source.
  return {f.rank, [f, nc](const Vec3& w, double* comps) {
            const Grid3::Stencil s = f.grid.stencil(w);
            for (int c = 0; c < nc; ++c) comps[c] = 0.0;
            for (int j = 0; j < 8; ++j) {
              const double wj = s.w[j];
              if (wj == 0.0) continue;
              const double* d = &f.data[(size_t)s.node[j] * nc];
              for (int c = 0; c < nc; ++c) comps[c] += wj * d[c];
            }
          }};
}

// ---------------------------------------------------------------------------
// reflection extension

namespace {

// Coefficients solving sum_k c_k (-k)^(shift+j) = 1 for j = 0, 1, 2.  A block
// with p normal indices carries a pullback factor (-k)^p, which shifts the
// moments that control continuity; solving the shifted system restores value
// and first-derivative matching for that block.
std::array<double, 3> reflection_coefficients_shifted(int shift) {
  std::vector<double> M(9);
  std::vector<double> rhs = {1.0, 1.0, 1.0};
  for (int j = 0; j < 3; ++j)
    for (int k = 1; k <= 3; ++k)
      M[(size_t)(j * 3 + k - 1)] = std::pow(-k, shift + j);
  solve_dense_small(M, rhs, 3);
  return {rhs[0], rhs[1], rhs[2]};
}

}  // namespace

std::array<double, 3> reflection_coefficients() {
  return reflection_coefficients_shifted(0);
}

FieldCallable reflect_extend(const FieldCallable& u) {
  // (6, -8, 3) matches moments j = 0..2: C^2 for tangential blocks and, with
  // the (-k) pullback factor, C^1 for single-normal blocks.  The doubly
  // normal block of a 2-tensor carries (-k)^2 and needs the shift-2 set
  // (6, -2, 1/3) to stay C^1.
  const std::array<double, 3> c = reflection_coefficients();
  const std::array<double, 3> cnn = reflection_coefficients_shifted(2);
  FieldCallable out;
  out.rank = u.rank;
  out.eval = [u, c, cnn](const Vec3& w, double* comps) {
    if (w[0] >= 0.0) {
      u.eval(w, comps);
      return;
    }
    const int nc = ncomp(u.rank);
    for (int i = 0; i < nc; ++i) comps[i] = 0.0;
    double tmp[6];
    for (int k = 1; k <= 3; ++k) {
      const Vec3 q{-k * w[0], w[1], w[2]};
      u.eval(q, tmp);
      const double ck = c[(size_t)(k - 1)];
      if (u.rank == 0) {
        comps[0] += ck * tmp[0];
      } else if (u.rank == 1) {
        comps[0] += ck * (-k) * tmp[0];
        comps[1] += ck * tmp[1];
        comps[2] += ck * tmp[2];
      } else {
        comps[0] += cnn[(size_t)(k - 1)] * (double)(k * k) * tmp[0];
        comps[1] += ck * (-k) * tmp[1];
        comps[2] += ck * (-k) * tmp[2];
        comps[3] += ck * tmp[3];
        comps[4] += ck * tmp[4];
        comps[5] += ck * tmp[5];
      }
    }
  };
  return out;
}

}  // namespace geoxray::fields
