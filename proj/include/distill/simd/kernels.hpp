#pragma once

#include <cstddef>
#include <cstdint>

// Data-parallel inner-loop kernels. Every operation has a scalar reference
// implementation and, on x86-64 with AVX2, a vectorized variant. The active
// table is resolved once at startup from the CPU; set DISTILL_LAB_KERNELS to
// "scalar" or "avx2" to force a variant (the forced variant must be
// supported, otherwise selection falls back to scalar).
//
// SIMD variants may reassociate floating-point reductions, so results can
// differ from the scalar reference in the last few ulps. Selection is a pure
// function of the CPU and the environment, never of thread count, so a given
// machine produces identical bytes run after run.

namespace distill::simd {

struct KernelOps {
  // sum of x[0..n)
  double (*reduce_sum)(const double* x, std::size_t n);
  // max of x[0..n); n >= 1
  double (*reduce_max)(const double* x, std::size_t n);
  // sum of a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // sum of (x[i] - c)^2
  double (*sum_sq_diff)(const double* x, std::size_t n, double c);
  // out[s] = sum_{i < len} table[idx[s*len + i]] for s in [0, n_rows)
  void (*gather_sum_rows)(const double* table, const std::int32_t* idx,
                          std::size_t n_rows, std::size_t len, double* out);
  // Batched Gaussian log-density. points is row-major n x d; linv is the
  // row-major lower-triangular inverse Cholesky factor of the covariance;
  // log_norm is the log normalization constant -(d*log(2pi) + log|Sigma|)/2.
  // out[i] = log_norm - 0.5 * ||linv * (points[i] - mu)||^2
  void (*gaussian_logpdf_batch)(const double* points, std::size_t n,
                                std::size_t d, const double* mu,
                                const double* linv, double log_norm,
                                double* out);
  const char* name;
};

// Scalar reference kernels; always available.
const KernelOps& scalar_ops();

// AVX2 kernels, or nullptr when the binary or CPU lacks AVX2 support.
const KernelOps* avx2_ops();

// The table selected for this process.
const KernelOps& active_ops();

inline double reduce_sum(const double* x, std::size_t n) {
  return active_ops().reduce_sum(x, n);
}
inline double reduce_max(const double* x, std::size_t n) {
  return active_ops().reduce_max(x, n);
}
inline double dot(const double* a, const double* b, std::size_t n) {
  return active_ops().dot(a, b, n);
}
inline double sum_sq_diff(const double* x, std::size_t n, double c) {
  return active_ops().sum_sq_diff(x, n, c);
}
inline void gather_sum_rows(const double* table, const std::int32_t* idx,
                            std::size_t n_rows, std::size_t len, double* out) {
  active_ops().gather_sum_rows(table, idx, n_rows, len, out);
}
inline void gaussian_logpdf_batch(const double* points, std::size_t n,
                                  std::size_t d, const double* mu,
                                  const double* linv, double log_norm,
                                  double* out) {
  active_ops().gaussian_logpdf_batch(points, n, d, mu, linv, log_norm, out);
}

}  // namespace distill::simd
