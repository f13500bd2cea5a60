/**
 * inversion.hpp — local inversion of the conjugated ray transform near a
 * convex boundary patch, and the layer-stripping driver built on it.
 *
 * Everything runs on the conjugated scale: for rank m input f the pipeline
 * sees data for f_F = e^{-F/x} f and returns the solenoidal representative
 * w ~ S_{F,Omega} f_F on the innermost region.  (Undoing the conjugation
 * multiplies by e^{F/x}, which overflows for any useful F at small depth, so
 * grid outputs stay conjugated and callers compare in the weighted spaces.)
 *
 * Pipeline (rank m >= 1), regions Omega = Omega[0] in Omega[1] in Omega[2]:
 *
 *   1. b    = backprojection of the per-ray data (cone-averaged, cutoff chi)
 *             restricted to Omega[2];
 *   2. w2   = G b, where G is the discrete inverse of
 *                 A_F = N_F + mu * d_F delta_F     on Omega[2] DOFs.
 *             N_F is the restricted normal operator; the mu-term removes the
 *             near-kernel of N_F (potentials with vanishing interior-boundary
 *             trace integrate to ~0 along every exiting ray), and invertibility
 *             at the working grid is certified by the extreme singular values
 *             of the assembled matrix rather than assumed from the continuum
 *             ellipticity it mirrors.
 *   3. s1   = S_{F,Omega[1]} r21 S_{F,Omega[2]} w2   (solenoidal projections
 *             and restriction);
 *   4. the potential part that s1 carries relative to the Omega gauge is
 *             re-anchored through its inner-rim trace.  The subtracted
 *             potential is q2 + v1: v1 is the explicit middle-stage vector,
 *             while q2 is recovered on the annulus Omega[2] \ Omega, where
 *             s2 = -d_F q2 up to the parametrix defect, by a left inverse of
 *             d_F: the weighted least-squares solve of the level-2
 *             derivative rows at the annulus nodes, anchored at the
 *             outermost artificial boundary -- the one surface where q2
 *             provably vanishes.  (A geodesic line-integral left inverse is
 *             the continuum analogue; the algebraic solve is its
 *             discrete-exact transcription, immune to the grid-scale sheath
 *             the solenoidal projection of a compactly supported field
 *             carries along the inner rim.)  A Poisson extension B carries
 *             the combined rim trace into Omega, and
 *                 z = r10 s1 + d_F B (gamma q2 + gamma v1)
 *             is the candidate representative: what remains subtracted from
 *             it is a Dirichlet potential, invisible to the Omega gauge;
 *   5. the map data -> z applied to synthetic data of a known Omega field is
 *             the identity plus a defect K (small when the region is thin);
 *             a Neumann series removes it:  w = z - K w  iterated to
 *             tolerance, where  K u = chain(N_F e02 u) - S_{F,Omega} u.
 *             Divergence is reported with the advice to shrink the foliation
 *             depth c.
 *   6. the accumulated field is S_{F,Omega}-projected, so the returned w
 *             satisfies the gauge certificate ||delta_F w|| << ||w||.
 *
 * Rank 0 (functions) has no gauge freedom: the chain collapses to
 * restriction of G b and the same Neumann cleanup, with A_F = N_F.
 *
 * Weighted spaces: one-forms run with plain weights (rexp = 0), 2-tensors
 * with rexp = 2 (errors measured on x-scaled fields; the weight emphasises
 * the interior mildly instead of the artificial boundary).
 *
 * layer_strip walks a descending ladder of shell charts, validates the
 * foliation (and, for radial sound-speed models, the Herglotz condition)
 * before each step, reconstructs shell by shell, and subtracts the forward
 * contribution of everything already recovered (under a cutoff equal to one
 * on the recovered territory) from the incoming data, so each shell sees
 * data supported at its own depth.  A shell whose validation or
 * reconstruction fails stops the walk; the result records the last good
 * depth.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "backprojection.hpp"
#include "gauge.hpp"
#include "geometry.hpp"
#include "transform.hpp"

namespace geoxray {
namespace inversion {

using transform::VecX;

struct PipelineOptions {
  double F = 2.0;

  // Ray family over the outer region (foot/exit level forced to 2).
  transform::SetSpec rays;

  // Relative Tikhonov ridge for the annulus trace solve (scaled by the
  // largest diagonal of its normal matrix); keeps untouched columns benign.
  double trace_ridge = 1e-10;

  // Gauge solver knobs shared by the three levels (rexp is set from the
  // rank: 2-tensors run at rexp = 2, lower ranks at 0).
  gauge::SolveOptions gauge;

  // Backprojection cutoff: variance nu = alpha / F is measured from the
  // chart; k = 0 means 0.9 * rays.lambda_max.
  double cutoff_k = 0.0;
  double cutoff_flat = 0.5;

  // Gauge-completion weight A_F = N_F + mu d_F delta_F; mu = 0 balances the
  // top singular values of the two terms.
  double mu = 0.0;

  // Dense-assembly cap on Omega[2] DOFs.  At or below it A_F is assembled
  // and LU-factored (extreme singular values certified); above it the solve
  // falls back to conjugate gradients on the matrix-free operator.
  std::int64_t assemble_cap = 20000;
  int cg_max_iter = 600;
  double cg_tol = 1e-10;

  double neumann_tol = 1e-8;  // relative update target
  int neumann_cap = 20;       // iteration cap
};

/// Everything reusable across reconstructions on one chart: regions, ray
/// family, gauges, annulus family, and the factored normal operator.
/// Non-movable (gauges hold pointers to the region indexes); build on the
/// heap via build_pipeline.  The chart must outlive the context.
struct PipelineContext {
  const geometry::RegionChart* chart = nullptr;
  int rank = 1;
  PipelineOptions opt;

  fields::RegionIndex R0, R1, R2;
  transform::GeodesicSet rays;
  backprojection::CutoffProfile chi;
  double alpha = 0.0;  // measured concavity normalization
  double mu = 0.0;     // gauge-completion weight actually used

  std::vector<double> W0, W1, W2;  // rank-m field weights per level

  // Gauges of the potential rank (rank - 1); null when rank == 0.
  std::unique_ptr<gauge::WittenGauge> g0, g1, g2;

  // Annulus trace solve (rank >= 1): rows of the level-2 derivative at the
  // annulus nodes Omega[2] \ Omega, columns at every referenced potential
  // DOF except the outer Dirichlet ring (whose zero value anchors the
  // recovery).  The weighted normal matrix is factored once; each chain
  // evaluation solves for the potential the annulus carries and reads its
  // inner-rim trace.
  fields::SpMat trace_B;                     // annulus rows x free columns
  fields::VecX trace_w;                      // level-2 field weights on rows
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> trace_ldlt;
  std::vector<std::int64_t> trace_rows;      // level-2 field DOFs
  std::vector<std::int32_t> trace_col_of;    // level-2 potential DOF -> col

  // Gauge-completion operator d_F delta_F on Omega[2] (empty for rank 0).
  fields::SpMat dd;

  // Dense path: assembled A_F with its LU factorization and certified
  // extreme singular values.  smin/smax are zero on the matrix-free path.
  bool dense = false;
  Eigen::MatrixXd A;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  double smin = 0.0, smax = 0.0;
  double build_seconds = 0.0;

  PipelineContext() = default;
  PipelineContext(const PipelineContext&) = delete;
  PipelineContext& operator=(const PipelineContext&) = delete;

  std::int64_t dofs() const { return R2.ndof(rank); }
};

/// Build the context: regions, ray set, measured alpha, cutoff, gauges,
/// annulus trace solve, and the (dense or matrix-free) normal solve.  Throws
/// config_error for unusable options, solver_error if the assembled A_F is
/// numerically singular at the working grid.
std::unique_ptr<PipelineContext> build_pipeline(
    const geometry::RegionChart& chart, int rank,
    const PipelineOptions& opt = {});

// --------------------------------------------------------------------------
// Pipeline stages (exposed for tests and diagnostics)

/// b = restricted backprojection of per-ray data (length rays.nrays()).
VecX backprojected_data(const PipelineContext& ctx, const VecX& data);

/// w2 = G b on Omega[2] DOFs (dense LU solve or CG fallback).
VecX solve_normal(const PipelineContext& ctx, const VecX& b2);

/// N_F e02: extend an Omega field by zero, forward along the ray set,
/// backproject, restrict to Omega[2].
VecX normal_of_inner(const PipelineContext& ctx, const VecX& w0);

/// Stages 3-4: Omega[2] field -> candidate solenoidal representative on
/// Omega (solenoidal projections, annulus trace recovery, Poisson
/// correction).  Rank 0 reduces to plain restriction.
VecX chain_to_inner(const PipelineContext& ctx, const VecX& w2);

/// S_{F,Omega} projection of an Omega-field vector (identity for rank 0).
VecX project_solenoidal(const PipelineContext& ctx, const VecX& w0);

// --------------------------------------------------------------------------
// Reconstruction

struct ReconstructionReport {
  std::string input;  // caller-supplied description of the data
  int rank = 0;
  double F = 0.0;
  double c_depth = 0.0;            // foliation depth of the chart
  std::array<int, 3> grid{0, 0, 0};  // chart grid dimensions
  std::int64_t n_rays = 0;         // retained rays
  std::int64_t dofs = 0;           // Omega[2] DOFs of the solve
  double alpha = 0.0, mu = 0.0;
  double smin = 0.0, smax = 0.0;   // certified extremes (dense path)

  // Neumann cleanup: relative update norm per iteration.
  std::vector<double> neumann_updates;
  int neumann_iterations = 0;

  // Contraction estimate of the defect map if probed (-1 = not probed).
  double k2_proxy = -1.0;

  // Certificates on the returned field (weighted norms):
  //   gauge_certificate        = ||delta_F w|| / ||w||        (0 for rank 0)
  //   reprojection_residual    = ||forward(w) - data|| / ||data||
  double gauge_certificate = 0.0;
  double reprojection_residual = 0.0;
  double data_norm = 0.0;   // Euclidean norm of the per-ray data
  double recon_norm = 0.0;  // weighted norm of w on Omega

  double runtime_seconds = 0.0;

  /// One diagnostic block per line: knobs, certificates, history.
  std::string summary() const;
};

struct Reconstruction {
  fields::TensorField w;  // grid field, zero outside Omega
  ReconstructionReport report;
};

/// Reconstruct the solenoidal representative of the conjugated field from
/// per-ray data (forward_grid convention: conjugation weight anchored at the
/// ray foot).  Throws solver_error if the Neumann cleanup diverges -- the
/// practical signal that the foliation depth c is too large for F.
Reconstruction reconstruct_local(const PipelineContext& ctx, const VecX& data,
                                 const std::string& input_desc = {});

/// Power-iteration estimate of the contraction factor of the Neumann defect
/// map K on random Omega fields: the growth ratio of ||K^j u|| over the last
/// probe iterations.  < 1 means the cleanup converges; it shrinks with the
/// foliation depth.
double neumann_contraction_probe(const PipelineContext& ctx, int iters = 6,
                                 unsigned seed = 1,
                                 std::vector<double>* history = nullptr);

/// ||S_Omega t - w||_W / ||S_Omega t||_W on the inner region: the error
/// metric of record for a known conjugated truth t (grid field, rank m).
double solenoidal_error(const PipelineContext& ctx,
                        const fields::TensorField& truth,
                        const fields::TensorField& w);

// --------------------------------------------------------------------------
// Layer stripping

struct ShellSpec {
  double c_depth = 0.35;  // per-shell foliation depth (uniform)
  double b1 = 0.07, b2 = 0.14;
  int nx = 10, ny = 10;
  double patch_halfwidth = 1.15;
  PipelineOptions pipeline;

  // Foliation validation knobs (validate_foliation).
  double cone = 1.0;
  double margin_min = 1e-3;
  int node_stride = 3;
};

struct ShellResult {
  double tau = 0.0;
  bool ok = false;
  geometry::ValidationReport validation;
  fields::TensorField w;  // on the shell chart grid (conjugated scale)
  ReconstructionReport report;
  std::string error;  // set when the shell failed
};

struct LayerStripResult {
  std::vector<ShellResult> shells;
  int n_recovered = 0;
  double last_good_tau = 0.0;  // deepest recovered level (0 if none)
  bool completed = false;
  std::string message;
};

/// Per-shell data source: called with the shell's built context and its
/// index; returns per-ray data in the forward_grid convention for that
/// shell's ray set.  The driver subtracts the forward contribution of the
/// already recovered shells before reconstructing, so providers return raw
/// (cumulative) data.
using ShellDataProvider =
    std::function<VecX(const PipelineContext& ctx, int shell)>;

/// Walk the descending shell levels taus (tau = 0 first; strictly
/// decreasing; spacing at least c_depth so shells do not overlap), validate
/// each shell's foliation, reconstruct, and accumulate.  Stops at the first
/// failing shell, recording the last good depth.  Throws config_error for an
/// unusable ladder, domain_error if the model is not a shell family.
LayerStripResult layer_strip(const geometry::MetricModel& model,
                             const std::vector<double>& taus, int rank,
                             const ShellSpec& spec,
                             const ShellDataProvider& provider);

}  // namespace inversion
}  // namespace geoxray
