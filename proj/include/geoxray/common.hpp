/**
 * common.hpp — small numeric building blocks shared by all modules:
 * fixed-size vectors, deterministic parallel loops with fixed-order
 * reductions, seeded RNG helpers, and error types.
 */
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace geoxray {

// ============================ error types ================================

/// Thrown on violated preconditions (bad geometry, bad sizes, ...).
struct domain_error : std::runtime_error {
  explicit domain_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown on solver failures (non-convergence, indefiniteness, ...).
struct solver_error : std::runtime_error {
  explicit solver_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown on malformed configuration input.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

#define GEOXRAY_REQUIRE(cond, msg) \
  do { if (!(cond)) throw ::geoxray::domain_error(msg); } while (0)

// ============================== vectors ==================================

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator*(double s, const Vec3& a) {
  return {s * a[0], s * a[1], s * a[2]};
}
inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

/// 3x3 symmetric matrix stored as (00,01,02,11,12,22).
using SymMat3 = std::array<double, 6>;

inline Vec3 sym_apply(const SymMat3& g, const Vec3& v) {
  return {g[0] * v[0] + g[1] * v[1] + g[2] * v[2],
          g[1] * v[0] + g[3] * v[1] + g[4] * v[2],
          g[2] * v[0] + g[4] * v[1] + g[5] * v[2]};
}

inline double sym_quad(const SymMat3& g, const Vec3& v) {
  return dot(v, sym_apply(g, v));
}

/// Inverse of a symmetric 3x3 matrix; throws on (near-)singular input.
SymMat3 sym_inverse(const SymMat3& g);

/// Solve a small dense system A x = b in place (partial pivoting).
/// A is row-major n*n. Throws solver_error on singular pivot.
void solve_dense_small(std::vector<double>& A, std::vector<double>& b, int n);

// ===================== deterministic parallel loops ======================

/// Number of worker threads: GEOXRAY_THREADS env var if set, else
/// hardware concurrency (at least 1). Thread count never changes results:
/// all reductions are chunked in fixed order independent of the pool size.
int thread_count();

/// Parallel for over [0, n) in fixed chunks. fn(i) must only write to
/// disjoint per-i state.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

/// Deterministic parallel reduction: sums fn(i) over [0, n) by fixed-size
/// chunks, combining per-chunk partials in chunk order (bitwise independent
/// of thread count).
double parallel_sum(std::int64_t n, const std::function<double(std::int64_t)>& fn);

// ============================== RNG ======================================

/// Seeded generator wrapper; all randomized tests and harness paths draw
/// from this so that a fixed seed reproduces runs bit-for-bit.
struct Rng {
  std::mt19937_64 eng;
  explicit Rng(std::uint64_t seed) : eng(seed) {}
  double uniform(double a, double b) {
    std::uniform_real_distribution<double> d(a, b);
    return d(eng);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(eng);
  }
  int uniform_int(int a, int b) {
    std::uniform_int_distribution<int> d(a, b);
    return d(eng);
  }
};

// ======================== misc numeric helpers ===========================

inline double sqr(double x) { return x * x; }

/// Relative difference |a-b| / max(|a|,|b|,floor).
inline double rel_diff(double a, double b, double floor = 1e-300) {
  double s = std::max({std::fabs(a), std::fabs(b), floor});
  return std::fabs(a - b) / s;
}

}  // namespace geoxray
