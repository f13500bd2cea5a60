/**
 * grid.hpp — rectilinear chart grid: node layout, flat indexing, and
 * trilinear interpolation stencils.
 *
 * Axis 0 is the chart depth coordinate x (distance past the artificial
 * boundary, x > 0 on the working region); axes 1,2 are the tangential chart
 * coordinates y1, y2. Nodes are cell-centered along x (never sampling x = 0,
 * where the scattering frame degenerates) and vertex-centered along y.
 */
#pragma once

#include <array>
#include <cstdint>

#include "geoxray/common.hpp"

namespace geoxray {

struct Grid3 {
  std::array<int, 3> n{0, 0, 0};        // nodes per axis
  std::array<double, 3> origin{0, 0, 0}; // coordinate of node index 0
  std::array<double, 3> h{1, 1, 1};      // spacings

  Grid3() = default;
  Grid3(std::array<int, 3> n_, std::array<double, 3> origin_,
        std::array<double, 3> h_)
      : n(n_), origin(origin_), h(h_) {
    GEOXRAY_REQUIRE(n[0] >= 1 && n[1] >= 1 && n[2] >= 1, "Grid3: empty grid");
    GEOXRAY_REQUIRE(h[0] > 0 && h[1] > 0 && h[2] > 0, "Grid3: bad spacing");
  }

  /// Grid over box x in (0, x_hi], y in [-L1,L1] x [-L2,L2]; x nodes are
  /// cell-centered, y nodes include the box edges.
  static Grid3 chart_box(int nx, int ny1, int ny2, double x_hi, double l1,
                         double l2) {
    GEOXRAY_REQUIRE(nx >= 2 && ny1 >= 2 && ny2 >= 2, "chart_box: too small");
    const double hx = x_hi / nx;
    return Grid3({nx, ny1, ny2}, {0.5 * hx, -l1, -l2},
                 {hx, 2 * l1 / (ny1 - 1), 2 * l2 / (ny2 - 1)});
  }

  std::int64_t size() const {
    return (std::int64_t)n[0] * n[1] * n[2];
  }

  // Node-major flat index: x fastest, then y1, then y2.
  std::int64_t idx(int i, int j, int k) const {
    return ((std::int64_t)k * n[1] + j) * n[0] + i;
  }
  std::array<int, 3> unidx(std::int64_t f) const {
    int i = (int)(f % n[0]);
    std::int64_t r = f / n[0];
    int j = (int)(r % n[1]);
    int k = (int)(r / n[1]);
    return {i, j, k};
  }

  double coord(int axis, int i) const { return origin[axis] + h[axis] * i; }

  Vec3 node(int i, int j, int k) const {
    return {coord(0, i), coord(1, j), coord(2, k)};
  }
  Vec3 node(std::int64_t f) const {
    auto u = unidx(f);
    return node(u[0], u[1], u[2]);
  }

  bool contains(const Vec3& w) const {
    for (int a = 0; a < 3; ++a) {
      const double lo = origin[a], hi = coord(a, n[a] - 1);
      if (w[a] < lo || w[a] > hi) return false;
    }
    return true;
  }

  /// Trilinear stencil at chart point w: 8 node indices and weights.
  /// Points outside the node hull are clamped to the hull (callers that
  /// care check contains() first).
  struct Stencil {
    std::array<std::int64_t, 8> node;
    std::array<double, 8> w;
  };

  Stencil stencil(const Vec3& p) const {
    Stencil s;
    int base[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
      double t = (p[a] - origin[a]) / h[a];
      int i = (int)std::floor(t);
      if (i < 0) { i = 0; t = 0.0; }
      if (i > n[a] - 2) { i = n[a] - 2; t = (double)(n[a] - 1); }
      base[a] = i;
      f[a] = t - i;
      if (f[a] < 0.0) f[a] = 0.0;
      if (f[a] > 1.0) f[a] = 1.0;
    }
    int c = 0;
    for (int dk = 0; dk < 2; ++dk)
      for (int dj = 0; dj < 2; ++dj)
        for (int di = 0; di < 2; ++di) {
          s.node[c] = idx(base[0] + di, base[1] + dj, base[2] + dk);
          s.w[c] = (di ? f[0] : 1 - f[0]) * (dj ? f[1] : 1 - f[1]) *
                   (dk ? f[2] : 1 - f[2]);
          ++c;
        }
    return s;
  }
};

}  // namespace geoxray
