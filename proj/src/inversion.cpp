/**
 * inversion.cpp — local reconstruction pipeline and layer-stripping driver.
 *
 * See inversion.hpp for the operator chain.  Implementation notes:
 *
 *  - A_F is assembled column by column through the ray-node index (dense
 *    path) and completed with mu * d_F delta_F; mu balances the top singular
 *    values of the two terms so neither dominates the conditioning.  The
 *    extreme singular values are then measured (power iteration on A^T A and
 *    on its LU-inverted counterpart) and a collapse of the smallest one is a
 *    hard error: at that grid the data does not determine the field.
 *
 *  - The Neumann cleanup iterates u <- -K u on the defect map
 *        K u = chain(G N_F e02 u) - S_Omega u,
 *    accumulating z + sum (-K)^k z.  Updates are tracked in the weighted
 *    norm; three consecutive growths above unit size abort with the advice
 *    to thin the region (smaller c or larger F shrink the defect).
 *
 *  - Cross-chart transfer for layer stripping goes through ambient
 *    (Cartesian-component) tensors: recovered shell fields are interpolated
 *    in their own chart, un-conjugated (the exp(F/x) amplification is guarded
 *    by the support of the recovered field: it vanishes outside its shell,
 *    and deeper shells only ever evaluate it there), pushed to ambient
 *    components, pulled back to the active chart, and re-conjugated.
 */
#include "geoxray/inversion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include "geoxray/common.hpp"

namespace geoxray {
namespace inversion {

using fields::TensorField;
using fields::ncomp;
using std::int64_t;

namespace {

double seconds_since(
    const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

VecX random_unit(int64_t n, unsigned seed) {
  Rng rng(seed);
  VecX v(n);
  for (int64_t i = 0; i < n; ++i) v[i] = rng.normal();
  const double nv = v.norm();
  GEOXRAY_REQUIRE(nv > 0.0, "inversion: degenerate random start");
  return v / nv;
}

// Top singular value of a dense matrix by power iteration on A^T A.
double top_singular(const Eigen::MatrixXd& A, int iters, unsigned seed) {
  if (A.rows() == 0) return 0.0;
  VecX v = random_unit(A.cols(), seed);
  double lam = 0.0;
  for (int it = 0; it < iters; ++it) {
    VecX w = A.transpose() * (A * v);
    lam = w.norm();
    if (!(lam > 0.0)) return 0.0;
    v = w / lam;
  }
  return std::sqrt(lam);
}

double top_singular(const fields::SpMat& A, int iters, unsigned seed) {
  if (A.rows() == 0) return 0.0;
  VecX v = random_unit(A.cols(), seed);
  double lam = 0.0;
  for (int it = 0; it < iters; ++it) {
    VecX w = A.transpose() * (A * v);
    lam = w.norm();
    if (!(lam > 0.0)) return 0.0;
    v = w / lam;
  }
  return std::sqrt(lam);
}

// Top singular value of a matrix-free operator (generic square op).
double top_singular_op(const std::function<VecX(const VecX&)>& op, int64_t n,
                       int iters, unsigned seed) {
  VecX v = random_unit(n, seed);
  double lam = 0.0;
  for (int it = 0; it < iters; ++it) {
    // crude but adequate: power iteration on op alone (the operators fed
    // here are near-symmetric positive, so |lambda_max| ~ sigma_max)
    VecX w = op(v);
    lam = w.norm();
    if (!(lam > 0.0)) return 0.0;
    v = w / lam;
  }
  return lam;
}

// Smallest singular value through the factored inverse: power iteration on
// (A^T A)^{-1} = A^{-1} A^{-T}.
double smallest_singular(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu,
                         int64_t n, int iters, unsigned seed) {
  VecX v = random_unit(n, seed);
  double lam = 0.0;
  for (int it = 0; it < iters; ++it) {
    VecX y = lu.transpose().solve(v);
    VecX w = lu.solve(y);
    lam = w.norm();
    if (!std::isfinite(lam) || !(lam > 0.0)) return 0.0;
    v = w / lam;
  }
  return 1.0 / std::sqrt(lam);
}

// Quintic smoothstep: 0 below 0, 1 above 1, C^2 across both ends.
double smoothstep(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

// --- packed symmetric-2 <-> full 3x3 helpers (component order
//     NN, N1, N2, 11, 12, 22) ---------------------------------------------
void unpack_sym2(const double* p, double m[3][3]) {
  m[0][0] = p[0];
  m[0][1] = m[1][0] = p[1];
  m[0][2] = m[2][0] = p[2];
  m[1][1] = p[3];
  m[1][2] = m[2][1] = p[4];
  m[2][2] = p[5];
}

void pack_sym2(const double m[3][3], double* p) {
  p[0] = m[0][0];
  p[1] = 0.5 * (m[0][1] + m[1][0]);
  p[2] = 0.5 * (m[0][2] + m[2][0]);
  p[3] = m[1][1];
  p[4] = 0.5 * (m[1][2] + m[2][1]);
  p[5] = m[2][2];
}

// Congruence transform out[a][b] = sum_ij J[i][a] J[j][b] in[i][j].
void congruence(const double J[3][3], const double in[3][3],
                double out[3][3]) {
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      double s = 0.0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) s += J[i][a] * J[j][b] * in[i][j];
      out[a][b] = s;
    }
}

}  // namespace

// ===========================================================================
// Pipeline construction

std::unique_ptr<PipelineContext> build_pipeline(
    const geometry::RegionChart& chart, int rank, const PipelineOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  GEOXRAY_REQUIRE(rank >= 0 && rank <= 2,
                  "inversion: rank must be 0 (function), 1 (one-form), or 2 "
                  "(symmetric 2-tensor)");
  GEOXRAY_REQUIRE(opt.F > 0.0, "inversion: conjugation weight F must be > 0");
  GEOXRAY_REQUIRE(opt.neumann_tol > 0.0 && opt.neumann_cap >= 1,
                  "inversion: unusable Neumann controls");
  if ((int64_t)chart.inside[0].size() != chart.grid.size())
    throw config_error("inversion: chart masks not built");

  auto ctx = std::make_unique<PipelineContext>();
  ctx->chart = &chart;
  ctx->rank = rank;
  ctx->opt = opt;
  ctx->opt.gauge.rexp = (rank == 2) ? 2.0 : 0.0;
  ctx->opt.rays.foot_level = 2;
  ctx->opt.rays.exit_level = 2;
  ctx->opt.rays.foot_stride = std::max(1, opt.rays.foot_stride);

  ctx->R0 = fields::RegionIndex(chart, 0);
  ctx->R1 = fields::RegionIndex(chart, 1);
  ctx->R2 = fields::RegionIndex(chart, 2);

  ctx->rays = transform::build_set(chart, ctx->opt.rays);
  GEOXRAY_REQUIRE(ctx->rays.n_retained > 0,
                  "inversion: the ray family retained no rays");

  const geometry::AlphaEstimate ae = geometry::measure_alpha(chart);
  GEOXRAY_REQUIRE(ae.median_alpha > 0.0,
                  "inversion: chart concavity normalization is not positive");
  ctx->alpha = ae.median_alpha;
  ctx->chi.nu = ctx->alpha / ctx->opt.F;
  ctx->chi.k =
      opt.cutoff_k > 0.0 ? opt.cutoff_k : 0.9 * ctx->opt.rays.lambda_max;
  ctx->chi.flat = opt.cutoff_flat;

  const double rexp = ctx->opt.gauge.rexp;
  ctx->W0 = fields::weight_vector(ctx->R0, rank, rexp);
  ctx->W1 = fields::weight_vector(ctx->R1, rank, rexp);
  ctx->W2 = fields::weight_vector(ctx->R2, rank, rexp);

  if (rank >= 1) {
    ctx->g0 = std::make_unique<gauge::WittenGauge>(ctx->R0, rank - 1,
                                                   ctx->opt.F, ctx->opt.gauge);
    ctx->g1 = std::make_unique<gauge::WittenGauge>(ctx->R1, rank - 1,
                                                   ctx->opt.F, ctx->opt.gauge);
    ctx->g2 = std::make_unique<gauge::WittenGauge>(ctx->R2, rank - 1,
                                                   ctx->opt.F, ctx->opt.gauge);
    ctx->dd = ctx->g2->d() * ctx->g2->delta();

    // Annulus trace solve over Omega[2] \ Omega.  The derivative rows there
    // see the subtracted level-2 potential only; anchoring at the outer
    // Dirichlet ring (columns omitted, value zero) makes the least-squares
    // recovery of that potential discrete-exact up to the parametrix defect.
    const auto& in0 = chart.inside[0];
    const auto& dir2 = chart.dirichlet[2];
    const int nco = fields::ncomp(rank);
    const int pc = fields::ncomp(rank - 1);
    std::vector<char> row_in(
        (size_t)ctx->R2.ndof(rank), 0);
    for (int64_t r = 0; r < ctx->R2.count; ++r) {
      const int64_t full = ctx->R2.node_of[(size_t)r];
      if (in0[(size_t)full]) continue;  // annulus = level-2 minus Omega
      for (int c = 0; c < nco; ++c) row_in[(size_t)(r * nco + c)] = 1;
    }
    ctx->trace_col_of.assign((size_t)ctx->R2.ndof(rank - 1), -1);
    const fields::SpMat& D = ctx->g2->d();
    std::vector<Eigen::Triplet<double>> trip;
    int32_t next_col = 0;
    for (int64_t row = 0; row < D.rows(); ++row) {
      if (!row_in[(size_t)row]) continue;
      const int64_t m = (int64_t)ctx->trace_rows.size();
      ctx->trace_rows.push_back(row);
      for (fields::SpMat::InnerIterator it(D, row); it; ++it) {
        const int64_t col = it.col();
        const int64_t full = ctx->R2.node_of[(size_t)(col / pc)];
        if (dir2[(size_t)full]) continue;  // anchored: potential vanishes
        int32_t& u = ctx->trace_col_of[(size_t)col];
        if (u < 0) u = next_col++;
        trip.emplace_back((int)m, u, it.value());
      }
    }
    ctx->trace_B.resize((int64_t)ctx->trace_rows.size(), next_col);
    ctx->trace_B.setFromTriplets(trip.begin(), trip.end());
    ctx->trace_B.makeCompressed();
    ctx->trace_w.resize((int64_t)ctx->trace_rows.size());
    for (size_t mi = 0; mi < ctx->trace_rows.size(); ++mi)
      ctx->trace_w[(int64_t)mi] = ctx->W2[(size_t)ctx->trace_rows[mi]];
    {
      Eigen::SparseMatrix<double> H =
          (ctx->trace_B.transpose() * ctx->trace_w.asDiagonal() *
           ctx->trace_B)
              .pruned();
      double dmax = 0.0;
      for (int64_t i = 0; i < H.rows(); ++i)
        dmax = std::max(dmax, H.coeff(i, i));
      GEOXRAY_REQUIRE(dmax > 0.0, "inversion: empty annulus trace system");
      Eigen::SparseMatrix<double> I(H.rows(), H.cols());
      I.setIdentity();
      H += (ctx->opt.trace_ridge * dmax) * I;
      ctx->trace_ldlt.compute(H);
      GEOXRAY_REQUIRE(ctx->trace_ldlt.info() == Eigen::Success,
                      "inversion: annulus trace factorization failed");
    }
  }

  const int64_t n = ctx->R2.ndof(rank);
  ctx->dense = n <= opt.assemble_cap;
  if (ctx->dense) {
    const backprojection::RayNodeIndex index =
        backprojection::build_ray_index(ctx->rays);
    ctx->A = backprojection::assemble_normal_matrix(
        ctx->rays, index, ctx->R2, rank, ctx->opt.F, ctx->chi);
    double mu = opt.mu;
    if (rank >= 1) {
      if (!(mu > 0.0)) {
        const double s_n = top_singular(ctx->A, 25, 7);
        const double s_d = top_singular(ctx->dd, 25, 8);
        GEOXRAY_REQUIRE(s_d > 0.0,
                        "inversion: gauge-completion operator vanished");
        mu = s_n / s_d;
      }
      ctx->A += mu * Eigen::MatrixXd(ctx->dd);
    } else {
      mu = 0.0;
    }
    ctx->mu = mu;
    ctx->lu.compute(ctx->A);
    ctx->smax = top_singular(ctx->A, 30, 9);
    ctx->smin = smallest_singular(ctx->lu, n, 30, 10);
    if (!(ctx->smin > 1e-12 * ctx->smax)) {
      std::ostringstream os;
      os << "inversion: assembled normal operator is numerically singular "
         << "(sigma_min " << ctx->smin << " vs sigma_max " << ctx->smax
         << "); the ray family does not determine the field at this grid";
      throw solver_error(os.str());
    }
  } else {
    double mu = opt.mu;
    if (rank >= 1 && !(mu > 0.0)) {
      const auto nop = [&](const VecX& v) {
        return backprojection::apply_normal(ctx->rays, ctx->R2, rank,
                                            ctx->opt.F, ctx->chi, v);
      };
      const double s_n = top_singular_op(nop, n, 10, 7);
      const double s_d = top_singular(ctx->dd, 25, 8);
      GEOXRAY_REQUIRE(s_d > 0.0,
                      "inversion: gauge-completion operator vanished");
      mu = s_n / s_d;
    }
    ctx->mu = (rank >= 1) ? mu : 0.0;
  }
  ctx->build_seconds = seconds_since(t0);
  return ctx;
}

// ===========================================================================
// Stages

VecX backprojected_data(const PipelineContext& ctx, const VecX& data) {
  GEOXRAY_REQUIRE(data.size() == ctx.rays.nrays(),
                  "inversion: data length does not match the ray family");
  const TensorField bp =
      backprojection::backproject(ctx.rays, data, ctx.rank, ctx.chi);
  return fields::restrict_field(bp, ctx.R2);
}

VecX solve_normal(const PipelineContext& ctx, const VecX& b2) {
  GEOXRAY_REQUIRE(b2.size() == ctx.R2.ndof(ctx.rank),
                  "inversion: right-hand side is not an Omega[2] field");
  if (ctx.dense) return ctx.lu.solve(b2);

  // Matrix-free fallback: CG in the weighted inner product.  The normal
  // operator is weighted-self-adjoint only up to quadrature error, so the
  // true residual is verified and non-convergence is a hard error.
  const auto apply_A = [&](const VecX& v) {
    VecX r = backprojection::apply_normal(ctx.rays, ctx.R2, ctx.rank,
                                          ctx.opt.F, ctx.chi, v);
    if (ctx.rank >= 1) r += ctx.mu * (ctx.dd * v);
    return r;
  };
  const double nb = fields::wnorm(ctx.W2, b2);
  if (nb == 0.0) return VecX::Zero(b2.size());
  VecX x = VecX::Zero(b2.size());
  VecX r = b2;
  VecX p = r;
  double rz = fields::wdot(ctx.W2, r, r);
  double best = 1.0;
  int since_best = 0;
  for (int it = 0; it < ctx.opt.cg_max_iter; ++it) {
    const VecX q = apply_A(p);
    const double pq = fields::wdot(ctx.W2, p, q);
    if (!(pq > 0.0)) break;  // loss of positivity: report via the residual
    const double a = rz / pq;
    x += a * p;
    r -= a * q;
    const double rel = fields::wnorm(ctx.W2, r) / nb;
    if (rel < best) {
      best = rel;
      since_best = 0;
    } else if (++since_best > 50) {
      break;  // stalled
    }
    if (rel < ctx.opt.cg_tol) return x;
    const double rz_new = fields::wdot(ctx.W2, r, r);
    p = r + (rz_new / rz) * p;
    rz = rz_new;
  }
  const double final_rel = fields::wnorm(ctx.W2, apply_A(x) - b2) / nb;
  if (final_rel < 1e-6) return x;  // good enough for the cleanup loop
  std::ostringstream os;
  os << "inversion: matrix-free normal solve did not converge (residual "
     << final_rel << "); raise assemble_cap to use the factored dense path";
  throw solver_error(os.str());
}

VecX normal_of_inner(const PipelineContext& ctx, const VecX& w0) {
  GEOXRAY_REQUIRE(w0.size() == ctx.R0.ndof(ctx.rank),
                  "inversion: field is not an Omega field");
  TensorField f = TensorField::zeros(ctx.rank, ctx.chart->grid);
  fields::inject_field(w0, ctx.R0, &f);
  const VecX data = transform::forward_grid(ctx.rays, f, ctx.opt.F);
  return backprojected_data(ctx, data);
}

VecX chain_to_inner(const PipelineContext& ctx, const VecX& w2) {
  GEOXRAY_REQUIRE(w2.size() == ctx.R2.ndof(ctx.rank),
                  "inversion: field is not an Omega[2] field");
  TensorField g = TensorField::zeros(ctx.rank, ctx.chart->grid);
  if (ctx.rank == 0) {
    fields::inject_field(w2, ctx.R2, &g);
    return fields::restrict_field(g, ctx.R0);
  }
  // Solenoidal projection on Omega[2]; the subtracted potential q2 vanishes
  // on the outermost artificial boundary, which anchors its recovery below.
  const VecX s2 = ctx.g2->split(w2).first;
  fields::inject_field(s2, ctx.R2, &g);

  // Middle stage: restrict and re-project on Omega[1].  Its potential v1 is
  // an explicit vector, so its inner-rim trace is known exactly.
  const VecX w1 = fields::restrict_field(g, ctx.R1);
  const VecX v1 = ctx.g1->potential_of(w1);
  const VecX s1 = w1 - ctx.g1->d() * v1;
  TensorField s1g = TensorField::zeros(ctx.rank, ctx.chart->grid);
  fields::inject_field(s1, ctx.R1, &s1g);

  // On the annulus the chain output is (minus) the derivative of the total
  // subtracted potential.  Recover q2 there by integrating s2 along the
  // family (anchored at the outer boundary where q2 = 0), then assemble the
  // total potential's trace on the inner rim: q2's recovered values plus
  // v1's explicit ones.
  const annulus::LeftInverseResult li =
      annulus::left_inverse(ctx.family, g, ctx.opt.F);
  const int pc = ncomp(ctx.rank - 1);
  VecX ext = VecX::Zero(ctx.R0.ndof(ctx.rank - 1));
  const auto& rim = ctx.chart->dirichlet[0];
  for (int64_t c0 = 0; c0 < ctx.R0.count; ++c0) {
    const int64_t full = ctx.R0.node_of[(size_t)c0];
    if (!rim[(size_t)full]) continue;
    const int32_t c1 = ctx.R1.compact_of[(size_t)full];
    for (int c = 0; c < pc; ++c)
      ext[c0 * pc + c] = -li.v.at(full, c) + v1[c1 * pc + c];
  }

  // Add back the harmonic extension of the subtracted potential's rim trace:
  // what remains subtracted is then a Dirichlet potential, invisible to the
  // final gauge projection.
  const VecX u = ctx.g0->poisson(ext);
  return fields::restrict_field(s1g, ctx.R0) + ctx.g0->d() * u;
}

VecX project_solenoidal(const PipelineContext& ctx, const VecX& w0) {
  GEOXRAY_REQUIRE(w0.size() == ctx.R0.ndof(ctx.rank),
                  "inversion: field is not an Omega field");
  if (ctx.rank == 0) return w0;
  return ctx.g0->split(w0).first;
}

// ===========================================================================
// Reconstruction

std::string ReconstructionReport::summary() const {
  std::ostringstream os;
  os << "reconstruction: rank " << rank << ", F = " << F << ", c = " << c_depth
     << ", grid " << grid[0] << "x" << grid[1] << "x" << grid[2];
  if (!input.empty()) os << "\n  input: " << input;
  os << "\n  rays retained " << n_rays << ", solve DOFs " << dofs
     << ", alpha " << alpha << ", mu " << mu;
  if (smax > 0.0)
    os << "\n  normal operator singular values: " << smin << " .. " << smax;
  os << "\n  neumann: " << neumann_iterations << " iteration(s)";
  if (!neumann_updates.empty())
    os << ", final relative update " << neumann_updates.back();
  if (k2_proxy >= 0.0) os << "\n  defect contraction estimate: " << k2_proxy;
  os << "\n  gauge certificate ||delta_F w|| / ||w|| = " << gauge_certificate
     << "\n  reprojection residual = " << reprojection_residual
     << "\n  norms: data " << data_norm << ", reconstruction " << recon_norm
     << "\n  runtime " << runtime_seconds << " s";
  return os.str();
}

Reconstruction reconstruct_local(const PipelineContext& ctx, const VecX& data,
                                 const std::string& input_desc) {
  const auto t0 = std::chrono::steady_clock::now();
  GEOXRAY_REQUIRE(data.size() == ctx.rays.nrays(),
                  "inversion: data length does not match the ray family");

  Reconstruction out;
  ReconstructionReport& rpt = out.report;
  rpt.input = input_desc;
  rpt.rank = ctx.rank;
  rpt.F = ctx.opt.F;
  rpt.c_depth = ctx.chart->c_depth;
  rpt.grid = ctx.chart->grid.n;
  rpt.n_rays = ctx.rays.n_retained;
  rpt.dofs = ctx.dofs();
  rpt.alpha = ctx.alpha;
  rpt.mu = ctx.mu;
  rpt.smin = ctx.smin;
  rpt.smax = ctx.smax;
  rpt.data_norm = data.norm();

  const double tiny = std::numeric_limits<double>::min();

  // stage 1-4: candidate representative on Omega
  const VecX b2 = backprojected_data(ctx, data);
  const VecX z0 = chain_to_inner(ctx, solve_normal(ctx, b2));

  // stage 5: Neumann cleanup of the defect map
  VecX acc = z0;
  VecX u = z0;
  for (int it = 0; it < ctx.opt.neumann_cap; ++it) {
    const VecX ku = chain_to_inner(ctx, solve_normal(ctx, normal_of_inner(
                                            ctx, u))) -
                    project_solenoidal(ctx, u);
    u = -ku;
    acc += u;
    const double rel = fields::wnorm(ctx.W0, u) /
                       std::max(fields::wnorm(ctx.W0, acc), tiny);
    rpt.neumann_updates.push_back(rel);
    if (rel < ctx.opt.neumann_tol) break;
    const size_t k = rpt.neumann_updates.size();
    const bool runaway = rel > 1e3;
    const bool growing = k >= 3 && rpt.neumann_updates[k - 1] > 1.0 &&
                         rpt.neumann_updates[k - 1] >
                             rpt.neumann_updates[k - 2] &&
                         rpt.neumann_updates[k - 2] >
                             rpt.neumann_updates[k - 3];
    if (runaway || growing) {
      std::ostringstream os;
      os << "inversion: Neumann cleanup diverging (relative update " << rel
         << " after " << k << " iteration(s)); the defect map is not a "
         << "contraction here -- rebuild the chart with a smaller foliation "
         << "depth c, or increase F";
      throw solver_error(os.str());
    }
  }
  rpt.neumann_iterations = (int)rpt.neumann_updates.size();

  // stage 6: project and certify
  const VecX w0 = project_solenoidal(ctx, acc);
  rpt.recon_norm = fields::wnorm(ctx.W0, w0);
  if (ctx.rank >= 1) {
    // Interior rows only: the discrete gauge eliminates the Dirichlet rows,
    // so the projection zeroes the divergence exactly there and nowhere else.
    const VecX dw = ctx.g0->masked(ctx.g0->delta() * w0);
    rpt.gauge_certificate = fields::wnorm(ctx.g0->w_pot(), dw) /
                            std::max(rpt.recon_norm, tiny);
  }

  out.w = TensorField::zeros(ctx.rank, ctx.chart->grid);
  fields::inject_field(w0, ctx.R0, &out.w);

  // reprojection residual (meaningful when the data comes from a field
  // supported in the inner region)
  const VecX rep = transform::forward_grid(ctx.rays, out.w, ctx.opt.F);
  rpt.reprojection_residual =
      (rep - data).norm() / std::max(rpt.data_norm, tiny);

  rpt.runtime_seconds = seconds_since(t0);
  return out;
}

double neumann_contraction_probe(const PipelineContext& ctx, int iters,
                                 unsigned seed, std::vector<double>* history) {
  GEOXRAY_REQUIRE(iters >= 2, "inversion: probe needs at least 2 iterations");
  VecX u = random_unit(ctx.R0.ndof(ctx.rank), seed);
  u /= std::max(fields::wnorm(ctx.W0, u),
                std::numeric_limits<double>::min());
  std::vector<double> ratios;
  for (int it = 0; it < iters; ++it) {
    const VecX ku = chain_to_inner(ctx, solve_normal(ctx, normal_of_inner(
                                            ctx, u))) -
                    project_solenoidal(ctx, u);
    const double g = fields::wnorm(ctx.W0, ku);
    ratios.push_back(g);
    if (!(g > 0.0)) {
      if (history) *history = ratios;
      return 0.0;
    }
    u = ku / g;  // stay W-normalized: the ratio is the per-step growth
  }
  if (history) *history = ratios;
  // geometric mean over the settled tail (skip the transient first half)
  const size_t lo = ratios.size() / 2;
  double s = 0.0;
  for (size_t i = lo; i < ratios.size(); ++i) s += std::log(ratios[i]);
  return std::exp(s / (double)(ratios.size() - lo));
}

double solenoidal_error(const PipelineContext& ctx, const TensorField& truth,
                        const TensorField& w) {
  GEOXRAY_REQUIRE(truth.rank == ctx.rank && w.rank == ctx.rank,
                  "inversion: rank mismatch in the error metric");
  GEOXRAY_REQUIRE(truth.grid.size() == ctx.chart->grid.size() &&
                      w.grid.size() == ctx.chart->grid.size(),
                  "inversion: fields live on a different grid");
  const VecX t0 = fields::restrict_field(truth, ctx.R0);
  const VecX st = project_solenoidal(ctx, t0);
  const VecX wr = fields::restrict_field(w, ctx.R0);
  const double denom = fields::wnorm(ctx.W0, st);
  GEOXRAY_REQUIRE(denom > 0.0,
                  "inversion: the truth has no solenoidal part on Omega");
  return fields::wnorm(ctx.W0, st - wr) / denom;
}

// ===========================================================================
// Layer stripping

namespace {

// Ambient-component callable of the already recovered shells, cut off by a
// profile equal to one on the recovered regions, evaluated at an ambient
// point.  Returns false when every shell contributes zero.
struct RecoveredStack {
  struct Entry {
    const geometry::RegionChart* chart = nullptr;
    fields::FieldCallable interp;  // conjugated frame components, own chart
  };
  std::vector<Entry> entries;
  int rank = 0;
  double F = 1.0;

  bool eval_ambient(const Vec3& z, double* amb) const {
    const int nc = ncomp(rank);
    for (int c = 0; c < nc; ++c) amb[c] = 0.0;
    bool any = false;
    double fc[6], cc[6];
    for (const Entry& e : entries) {
      const geometry::RegionChart& src = *e.chart;
      const Vec3 w = src.to_chart(z);
      if (!src.grid.contains(w)) continue;
      const double x = w[0];
      if (!(x > 0.0) || ctx_guard(x)) continue;
      e.interp.eval(w, fc);
      bool nonzero = false;
      for (int c = 0; c < nc; ++c)
        if (fc[c] != 0.0) nonzero = true;
      if (!nonzero) continue;
      // cutoff: one on the recovered region, fading across its annulus
      const double b1 = src.offsets[1];
      const double phi =
          smoothstep((src.rho_region(w) + b1) / std::max(b1, 1e-12));
      if (phi == 0.0) continue;
      const double scale = phi * std::exp(F / x);  // undo the conjugation
      fields::frame_to_coord(rank, x, fc, cc);
      // push chart-coordinate components to ambient ones:
      // Jin[i][a] = d w^i / d z^a  (columns are chart velocities of the
      // ambient axes)
      double Jin[3][3];
      for (int a = 0; a < 3; ++a) {
        Vec3 ea{0, 0, 0};
        ea[a] = 1.0;
        const Vec3 col = src.chart_velocity(z, ea);
        for (int i = 0; i < 3; ++i) Jin[i][a] = col[i];
      }
      if (rank == 0) {
        amb[0] += scale * cc[0];
      } else if (rank == 1) {
        for (int a = 0; a < 3; ++a) {
          double s = 0.0;
          for (int i = 0; i < 3; ++i) s += Jin[i][a] * cc[i];
          amb[a] += scale * s;
        }
      } else {
        double m[3][3], t[3][3], packed[6];
        unpack_sym2(cc, m);
        congruence(Jin, m, t);
        pack_sym2(t, packed);
        for (int c = 0; c < 6; ++c) amb[c] += scale * packed[c];
      }
      any = true;
    }
    return any;
  }

  // amplification guard: wherever exp(F/x) could overflow meaningfully the
  // recovered field is identically zero (outside its shell), so skipping is
  // exact rather than an approximation
  bool ctx_guard(double x) const { return F / x > 400.0; }

  // Pull the ambient stack back to chart-frame components on dst and
  // re-conjugate: the integrand type forward_callable expects.
  fields::FieldCallable pulled_to(const geometry::RegionChart& dst) const {
    const RecoveredStack* self = this;
    const geometry::RegionChart* d = &dst;
    const int rk = rank;
    const double FF = F;
    return {rk, [self, d, rk, FF](const Vec3& w, double* comps) {
              const int nc = ncomp(rk);
              double amb[6], cc[6];
              const Vec3 z = d->to_ambient(w);
              if (!self->eval_ambient(z, amb)) {
                for (int c = 0; c < nc; ++c) comps[c] = 0.0;
                return;
              }
              // Jdst[a][i] = d z^a / d w^i
              double J[3][3];
              for (int i = 0; i < 3; ++i) {
                Vec3 ei{0, 0, 0};
                ei[i] = 1.0;
                const Vec3 col = d->ambient_velocity(w, ei);
                for (int a = 0; a < 3; ++a) J[a][i] = col[a];
              }
              if (rk == 0) {
                cc[0] = amb[0];
              } else if (rk == 1) {
                for (int i = 0; i < 3; ++i) {
                  double s = 0.0;
                  for (int a = 0; a < 3; ++a) s += J[a][i] * amb[a];
                  cc[i] = s;
                }
              } else {
                double m[3][3], t[3][3];
                unpack_sym2(amb, m);
                congruence(J, m, t);
                pack_sym2(t, cc);
              }
              const double x = w[0];
              const double conj = (x > 0.0) ? std::exp(-FF / x) : 0.0;
              double fr[6];
              fields::coord_to_frame(rk, x, cc, fr);
              for (int c = 0; c < nc; ++c) comps[c] = conj * fr[c];
            }};
  }
};

}  // namespace

LayerStripResult layer_strip(const geometry::MetricModel& model,
                             const std::vector<double>& taus, int rank,
                             const ShellSpec& spec,
                             const ShellDataProvider& provider) {
  GEOXRAY_REQUIRE(!taus.empty(), "layer_strip: empty shell ladder");
  GEOXRAY_REQUIRE(provider, "layer_strip: no data provider");
  GEOXRAY_REQUIRE(taus.front() <= 1e-12,
                  "layer_strip: the first shell level must be tau = 0 (the "
                  "boundary shell)");
  for (size_t k = 1; k < taus.size(); ++k)
    GEOXRAY_REQUIRE(taus[k - 1] - taus[k] >= spec.c_depth - 1e-9,
                    "layer_strip: shell levels must descend by at least the "
                    "shell depth c (no overlap)");

  LayerStripResult result;
  result.shells.reserve(taus.size());
  std::vector<std::unique_ptr<geometry::RegionChart>> charts;
  charts.reserve(taus.size());

  RecoveredStack stack;
  stack.rank = rank;
  stack.F = spec.pipeline.F;

  for (size_t k = 0; k < taus.size(); ++k) {
    result.shells.emplace_back();
    ShellResult& sr = result.shells.back();
    sr.tau = taus[k];

    try {
      charts.push_back(std::make_unique<geometry::RegionChart>(
          geometry::RegionChart::shell_chart(model, spec.c_depth, taus[k],
                                             spec.b1, spec.b2, spec.nx,
                                             spec.ny,
                                             spec.patch_halfwidth)));
      const geometry::RegionChart& rc = *charts.back();

      sr.validation = geometry::validate_foliation(
          rc, spec.cone, spec.margin_min, 1e-2, spec.node_stride);
      if (!sr.validation.ok) {
        sr.error = "foliation validation failed: " + sr.validation.message;
        break;
      }

      const auto ctx = build_pipeline(rc, rank, spec.pipeline);
      VecX data = provider(*ctx, (int)k);
      GEOXRAY_REQUIRE(data.size() == ctx->rays.nrays(),
                      "layer_strip: provider data length does not match the "
                      "shell's ray family");
      if (!stack.entries.empty()) {
        // the contribution of everything already recovered, seen through
        // this shell's rays (near-zero for disjoint shells, but subtracted
        // so each shell's data is supported at its own depth)
        data -= transform::forward_callable(ctx->rays, stack.pulled_to(rc),
                                            spec.pipeline.F);
      }

      std::ostringstream desc;
      desc << "shell " << k << " at tau = " << taus[k];
      Reconstruction rec = reconstruct_local(*ctx, data, desc.str());
      sr.w = std::move(rec.w);
      sr.report = std::move(rec.report);
      sr.ok = true;

      stack.entries.push_back(
          {charts.back().get(), fields::interpolant(sr.w)});
      ++result.n_recovered;
      result.last_good_tau = taus[k];
    } catch (const std::exception& e) {
      sr.error = e.what();
      break;
    }
  }

  result.completed = result.n_recovered == (int)taus.size();
  std::ostringstream msg;
  if (result.completed) {
    msg << "recovered all " << taus.size() << " shell(s)";
  } else {
    msg << "stopped at shell " << result.shells.size() - 1 << " (tau = "
        << result.shells.back().tau
        << "): " << result.shells.back().error;
    if (result.n_recovered > 0)
      msg << "; last good depth tau = " << result.last_good_tau;
  }
  result.message = msg.str();
  return result;
}

}  // namespace inversion
}  // namespace geoxray
