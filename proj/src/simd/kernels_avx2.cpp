// Compiled with -mavx2 -mfma on x86-64 (see CMakeLists); on other targets
// this translation unit compiles to a stub returning nullptr.

#include "distill/simd/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <vector>

namespace distill::simd {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

inline double hmax(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_max_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_max_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

double reduce_sum_avx2(const double* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i];
  return s;
}

double reduce_max_avx2(const double* x, std::size_t n) {
  if (n < 4) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i)
      if (x[i] > m) m = x[i];
    return m;
  }
  __m256d acc = _mm256_loadu_pd(x);
  std::size_t i = 4;
  for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
  double m = hmax(acc);
  for (; i < n; ++i)
    if (x[i] > m) m = x[i];
  return m;
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_sq_diff_avx2(const double* x, std::size_t n, double c) {
  const __m256d vc = _mm256_set1_pd(c);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), vc);
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = x[i] - c;
    s += d * d;
  }
  return s;
}

void gather_sum_rows_avx2(const double* table, const std::int32_t* idx,
                          std::size_t n_rows, std::size_t len, double* out) {
  for (std::size_t s = 0; s < n_rows; ++s) {
    const std::int32_t* row = idx + s * len;
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= len; i += 4) {
      __m128i vi = _mm_loadu_si128(reinterpret_cast<const __m128i*>(row + i));
      acc = _mm256_add_pd(acc, _mm256_i32gather_pd(table, vi, 8));
    }
    double acc_s = hsum(acc);
    for (; i < len; ++i) acc_s += table[row[i]];
    out[s] = acc_s;
  }
}

void gaussian_logpdf_batch_avx2(const double* points, std::size_t n,
                                std::size_t d, const double* mu,
                                const double* linv, double log_norm,
                                double* out) {
  // Four points per pass; centered coordinates live in a d x 4 scratch block.
  std::vector<double> scratch(4 * d);
  const __m256d vnorm = _mm256_set1_pd(log_norm);
  const __m256d vhalf = _mm256_set1_pd(-0.5);
  std::size_t p = 0;
  for (; p + 4 <= n; p += 4) {
    for (std::size_t j = 0; j < d; ++j) {
      const __m256d vmu = _mm256_set1_pd(mu[j]);
      __m256d dx = _mm256_set_pd(points[(p + 3) * d + j], points[(p + 2) * d + j],
                                 points[(p + 1) * d + j], points[(p + 0) * d + j]);
      _mm256_storeu_pd(scratch.data() + 4 * j, _mm256_sub_pd(dx, vmu));
    }
    __m256d quad = _mm256_setzero_pd();
    for (std::size_t i = 0; i < d; ++i) {
      const double* lrow = linv + i * d;
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t j = 0; j <= i; ++j) {
        acc = _mm256_fmadd_pd(_mm256_set1_pd(lrow[j]),
                              _mm256_loadu_pd(scratch.data() + 4 * j), acc);
      }
      quad = _mm256_fmadd_pd(acc, acc, quad);
    }
    _mm256_storeu_pd(out + p, _mm256_fmadd_pd(vhalf, quad, vnorm));
  }
  for (; p < n; ++p) {
    const double* x = points + p * d;
    double quad = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double* lrow = linv + i * d;
      double acc = 0.0;
      for (std::size_t j = 0; j <= i; ++j) acc += lrow[j] * (x[j] - mu[j]);
      quad += acc * acc;
    }
    out[p] = log_norm - 0.5 * quad;
  }
}

constexpr KernelOps kAvx2Ops = {
    reduce_sum_avx2,   reduce_max_avx2,      dot_avx2,
    sum_sq_diff_avx2,  gather_sum_rows_avx2, gaussian_logpdf_batch_avx2,
    "avx2",
};

}  // namespace

const KernelOps* avx2_ops() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") ? &kAvx2Ops : nullptr;
#else
  return nullptr;
#endif
}

}  // namespace distill::simd

#else

namespace distill::simd {
const KernelOps* avx2_ops() { return nullptr; }
}  // namespace distill::simd

#endif
