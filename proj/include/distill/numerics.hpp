#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>

#include "distill/simd/kernels.hpp"

namespace distill {

// Raised when a computation fails numerically (singular covariance, failed
// factorization) as opposed to being called with invalid arguments.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// log(sum(exp(x))) guarded against overflow; -inf for an empty span.
inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = simd::reduce_max(x.data(), x.size());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// Shannon entropy -sum(w log w) in nats, with 0 log 0 = 0.
inline double entropy_nats(std::span<const double> w) {
  double h = 0.0;
  for (double v : w)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

struct MeanAndSe {
  double mean;
  double std_error;
};

// Sample mean and its standard error (sd / sqrt(n), Bessel-corrected).
inline MeanAndSe mean_and_se(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("mean_and_se: need n >= 2");
  const double mean = simd::reduce_sum(x.data(), n) / static_cast<double>(n);
  const double ss = simd::sum_sq_diff(x.data(), n, mean);
  const double var = ss / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

}  // namespace distill
