#include "distill/simd/kernels.hpp"

namespace distill::simd {
namespace {

double reduce_sum_scalar(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double reduce_max_scalar(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i)
    if (x[i] > m) m = x[i];
  return m;
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_sq_diff_scalar(const double* x, std::size_t n, double c) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - c;
    s += d * d;
  }
  return s;
}

void gather_sum_rows_scalar(const double* table, const std::int32_t* idx,
                            std::size_t n_rows, std::size_t len, double* out) {
  for (std::size_t s = 0; s < n_rows; ++s) {
    const std::int32_t* row = idx + s * len;
    double acc = 0.0;
    for (std::size_t i = 0; i < len; ++i) acc += table[row[i]];
    out[s] = acc;
  }
}

void gaussian_logpdf_batch_scalar(const double* points, std::size_t n,
                                  std::size_t d, const double* mu,
                                  const double* linv, double log_norm,
                                  double* out) {
  for (std::size_t p = 0; p < n; ++p) {
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

constexpr KernelOps kScalarOps = {
    reduce_sum_scalar,   reduce_max_scalar,      dot_scalar,
    sum_sq_diff_scalar,  gather_sum_rows_scalar, gaussian_logpdf_batch_scalar,
    "scalar",
};

}  // namespace

const KernelOps& scalar_ops() { return kScalarOps; }

}  // namespace distill::simd
