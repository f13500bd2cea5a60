#include "geoxray/common.hpp"

#include <atomic>
#include <cstdlib>

namespace geoxray {

// ========================= small linear algebra ==========================

SymMat3 sym_inverse(const SymMat3& g) {
  const double a = g[0], b = g[1], c = g[2], d = g[3], e = g[4], f = g[5];
  // cofactor expansion for [[a,b,c],[b,d,e],[c,e,f]]
  const double A = d * f - e * e;
  const double B = c * e - b * f;
  const double C = b * e - c * d;
  const double det = a * A + b * B + c * C;
  GEOXRAY_REQUIRE(std::fabs(det) > 1e-300, "sym_inverse: singular metric");
  const double D = a * f - c * c;
  const double E = b * c - a * e;
  const double F = a * d - b * b;
  const double s = 1.0 / det;
  return {s * A, s * B, s * C, s * D, s * E, s * F};
}

void solve_dense_small(std::vector<double>& A, std::vector<double>& b, int n) {
  GEOXRAY_REQUIRE((int)A.size() == n * n && (int)b.size() == n,
                  "solve_dense_small: size mismatch");
  for (int k = 0; k < n; ++k) {
    // partial pivot
    int p = k;
    double best = std::fabs(A[k * n + k]);
    for (int i = k + 1; i < n; ++i) {
      double v = std::fabs(A[i * n + k]);
      if (v > best) { best = v; p = i; }
    }
    if (best < 1e-300) throw solver_error("solve_dense_small: singular matrix");
    if (p != k) {
      for (int j = 0; j < n; ++j) std::swap(A[k * n + j], A[p * n + j]);
      std::swap(b[k], b[p]);
    }
    const double inv = 1.0 / A[k * n + k];
    for (int i = k + 1; i < n; ++i) {
      const double m = A[i * n + k] * inv;
      if (m == 0.0) continue;
      for (int j = k; j < n; ++j) A[i * n + j] -= m * A[k * n + j];
      b[i] -= m * b[k];
    }
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int j = i + 1; j < n; ++j) s -= A[i * n + j] * b[j];
    b[i] = s / A[i * n + i];
  }
}

// ===================== deterministic parallel loops ======================

int thread_count() {
  static int cached = [] {
    if (const char* env = std::getenv("GEOXRAY_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : (int)hc;
  }();
  return cached;
}

namespace {
// Fixed chunk size: chunk boundaries depend only on n, never on the thread
// count, so per-chunk partials always combine in the same order.
constexpr std::int64_t kChunk = 1024;
}  // namespace

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  if (n <= 0) return;
  const int nt = thread_count();
  if (nt == 1 || n < 2 * kChunk) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::int64_t nchunks = (n + kChunk - 1) / kChunk;
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::int64_t c = next.fetch_add(1);
        if (c >= nchunks) return;
        const std::int64_t lo = c * kChunk;
        const std::int64_t hi = std::min(n, lo + kChunk);
        for (std::int64_t i = lo; i < hi; ++i) fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

double parallel_sum(std::int64_t n, const std::function<double(std::int64_t)>& fn) {
  if (n <= 0) return 0.0;
  const std::int64_t nchunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial((size_t)nchunks, 0.0);
  parallel_for(nchunks, [&](std::int64_t c) {
    const std::int64_t lo = c * kChunk;
    const std::int64_t hi = std::min(n, lo + kChunk);
    double s = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) s += fn(i);
    partial[(size_t)c] = s;
  });
  double total = 0.0;
  for (double p : partial) total += p;  // fixed chunk order
  return total;
}

}  // namespace geoxray
