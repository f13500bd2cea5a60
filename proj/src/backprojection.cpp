#include "geoxray/backprojection.hpp"

#include <algorithm>
#include <cmath>

namespace geoxray::backprojection {

double CutoffProfile::operator()(double s) const {
  GEOXRAY_REQUIRE(nu > 0.0 && k > 0.0 && flat > 0.0 && flat < 1.0,
                  "cutoff profile: bad parameters");
  const double u = std::fabs(s) / k;
  if (u >= 1.0) return 0.0;
  double b = 1.0;
  if (u > flat) {
    const auto psi = [](double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; };
    const double t = (u - flat) / (1.0 - flat);
    b = psi(1.0 - t) / (psi(1.0 - t) + psi(t));
  }
  return std::exp(-0.5 * s * s / nu) * b;
}

VecX conjugate_data(const GeodesicSet& gs, const VecX& data, double F) {
  GEOXRAY_REQUIRE(data.size() == gs.nrays(), "conjugate_data: size mismatch");
  VecX out = VecX::Zero(gs.nrays());
  for (std::int64_t i = 0; i < gs.nrays(); ++i) {
    const transform::Ray& r = gs.rays[(size_t)i];
    if (r.retained()) out[i] = data[i] * std::exp(-F / gs.foot_x(r));
  }
  return out;
}

namespace {

// chi values per slope node and direction monomials per (slope, angle) pair
struct ConeTable {
  int nl = 0, nw = 0, nc = 0;
  double dl = 0.0, dw = 0.0;
  std::vector<double> chiv;  // nl
  std::vector<double> mono;  // (il * nw + iw) * nc + c

  ConeTable(const GeodesicSet& gs, int rank, const CutoffProfile& chi) {
    nl = gs.spec.n_lambda;
    nw = gs.spec.n_omega;
    nc = fields::ncomp(rank);
    dl = 2.0 * gs.spec.lambda_max / (nl + 1.0);
    dw = 2.0 * M_PI / nw;
    chiv.resize((size_t)nl);
    mono.resize((size_t)nl * nw * nc);
    for (int il = 0; il < nl; ++il) {
      chiv[(size_t)il] = chi(gs.lambdas[(size_t)il]);
      for (int iw = 0; iw < nw; ++iw) {
        const double V[3] = {gs.lambdas[(size_t)il],
                             std::cos(gs.omegas[(size_t)iw]),
                             std::sin(gs.omegas[(size_t)iw])};
        fields::velocity_monomials(rank, V,
                                   &mono[(size_t)(il * nw + iw) * nc]);
      }
    }
  }

  double prefactor(int rank, double x) const {
    return rank == 0 ? 1.0 / x : rank == 1 ? 1.0 : x;
  }
};

}  // namespace

fields::TensorField backproject(const GeodesicSet& gs, const VecX& data,
                                int rank, const CutoffProfile& chi) {
  GEOXRAY_REQUIRE(rank >= 0 && rank <= 2, "backproject: bad rank");
  GEOXRAY_REQUIRE(data.size() == gs.nrays(), "backproject: size mismatch");
  const ConeTable tab(gs, rank, chi);
  fields::TensorField out =
      fields::TensorField::zeros(rank, gs.chart->grid);
  parallel_for((std::int64_t)gs.foot_ids.size(), [&](std::int64_t k) {
    const std::int64_t foot = gs.foot_ids[(size_t)k];
    double acc[6] = {0, 0, 0, 0, 0, 0};
    for (int il = 0; il < tab.nl; ++il)
      for (int iw = 0; iw < tab.nw; ++iw) {
        const std::int64_t id = gs.ray_id(k, il, iw);
        if (!gs.rays[(size_t)id].retained()) continue;
        const double q = tab.chiv[(size_t)il] * data[id];
        const double* m = &tab.mono[(size_t)(il * tab.nw + iw) * tab.nc];
        for (int c = 0; c < tab.nc; ++c) acc[c] += q * m[c];
      }
    const double scale =
        tab.prefactor(rank, gs.feet.x_of(foot)) * tab.dl * tab.dw;
    const std::int64_t node = gs.feet.node_of[(size_t)foot];
    for (int c = 0; c < tab.nc; ++c) out.at(node, c) = scale * acc[c];
  });
  return out;
}

fields::TensorField normal_operator(const GeodesicSet& gs,
                                    const fields::TensorField& f, double F,
                                    const CutoffProfile& chi) {
  return backproject(gs, transform::forward_grid(gs, f, F), f.rank, chi);
}

VecX apply_normal(const GeodesicSet& gs, const fields::RegionIndex& R,
                  int rank, double F, const CutoffProfile& chi,
                  const VecX& u) {
  fields::TensorField f = fields::TensorField::zeros(rank, gs.chart->grid);
  fields::inject_field(u, R, &f);
  const fields::TensorField b = normal_operator(gs, f, F, chi);
  return fields::restrict_field(b, R);
}

RayNodeIndex build_ray_index(const GeodesicSet& gs) {
  const Grid3& g = gs.chart->grid;
  const std::int64_t dy = g.n[0], dz = (std::int64_t)g.n[0] * g.n[1];
  const std::int64_t offs[8] = {0,      1,      dy,      1 + dy,
                                dz,     1 + dz, dy + dz, 1 + dy + dz};
  RayNodeIndex ix;
  ix.rays_of.resize((size_t)g.size());
  for (std::int64_t ri = 0; ri < gs.nrays(); ++ri) {
    const transform::Ray& r = gs.rays[(size_t)ri];
    if (!r.retained()) continue;
    std::int64_t prev = -1;
    for (std::int64_t s = r.off; s < r.off + r.ns; ++s) {
      const std::int64_t corner = gs.pool[(size_t)s].corner;
      if (corner == prev) continue;
      prev = corner;
      for (const std::int64_t off : offs) {
        auto& v = ix.rays_of[(size_t)(corner + off)];
        if (v.empty() || v.back() != (std::int32_t)ri)
          v.push_back((std::int32_t)ri);
      }
    }
  }
  return ix;
}

Eigen::MatrixXd assemble_normal_matrix(const GeodesicSet& gs,
                                       const RayNodeIndex& index,
                                       const fields::RegionIndex& R, int rank,
                                       double F, const CutoffProfile& chi) {
  GEOXRAY_REQUIRE(index.rays_of.size() == (size_t)gs.chart->grid.size(),
                  "assembly: index built for a different grid");
  GEOXRAY_REQUIRE(R.chart == gs.chart && R.level == gs.spec.foot_level,
                  "assembly: region must match the family's foot level");
  const Grid3& g = gs.chart->grid;
  const std::int64_t dy = g.n[0], dz = (std::int64_t)g.n[0] * g.n[1];
  const int nc = fields::ncomp(rank);
  const std::int64_t ndof = R.ndof(rank);
  const ConeTable tab(gs, rank, chi);

  Eigen::MatrixXd A(ndof, ndof);
  parallel_for(ndof, [&](std::int64_t col) {
    const std::int64_t jnode = R.node_of[(size_t)(col / nc)];
    const int jcomp = (int)(col % nc);
    VecX acc = VecX::Zero(ndof);
    double comps[6] = {0, 0, 0, 0, 0, 0}, mono[6];
    for (const std::int32_t ri : index.rays_of[(size_t)jnode]) {
      const transform::Ray& r = gs.rays[(size_t)ri];
      // forward transform of the basis field along this ray
      const double invxf = 1.0 / gs.foot_x(r);
      double val = 0.0;
      for (std::int64_t s = r.off; s < r.off + r.ns; ++s) {
        const transform::Sample& sp = gs.pool[(size_t)s];
        const std::int64_t d = jnode - sp.corner;
        double tw;
        const double fx = sp.f[0], fy = sp.f[1], fz = sp.f[2];
        if (d == 0)
          tw = (1 - fx) * (1 - fy) * (1 - fz);
        else if (d == 1)
          tw = fx * (1 - fy) * (1 - fz);
        else if (d == dy)
          tw = (1 - fx) * fy * (1 - fz);
        else if (d == 1 + dy)
          tw = fx * fy * (1 - fz);
        else if (d == dz)
          tw = (1 - fx) * (1 - fy) * fz;
        else if (d == 1 + dz)
          tw = fx * (1 - fy) * fz;
        else if (d == dy + dz)
          tw = (1 - fx) * fy * fz;
        else if (d == 1 + dy + dz)
          tw = fx * fy * fz;
        else
          continue;
        comps[jcomp] = tw;
        const double V[3] = {sp.wdot[0] / (sp.x * sp.x), sp.wdot[1] / sp.x,
                             sp.wdot[2] / sp.x};
        fields::velocity_monomials(rank, V, mono);
        const double pr = fields::pair_components(rank, comps, mono);
        comps[jcomp] = 0.0;
        val += gs.qw[(size_t)s] * std::exp(F * (1.0 / sp.x - invxf)) * pr;
      }
      // scatter to the ray's foot through the cone average
      const std::int64_t fnode = gs.feet.node_of[(size_t)r.foot];
      const std::int64_t frow = R.compact_of[(size_t)fnode];
      const double q = tab.chiv[(size_t)r.il] * val;
      const double* m = &tab.mono[(size_t)(r.il * tab.nw + r.iw) * tab.nc];
      for (int c = 0; c < nc; ++c) acc[frow * nc + c] += q * m[c];
    }
    for (std::int64_t i = 0; i < R.count; ++i) {
      const double scale =
          tab.prefactor(rank, R.x_of(i)) * tab.dl * tab.dw;
      for (int c = 0; c < nc; ++c) A(i * nc + c, col) = scale * acc[i * nc + c];
    }
  });
  return A;
}

}  // namespace geoxray::backprojection
