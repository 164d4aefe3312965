#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "distill/gmm.hpp"

namespace distill {

// Default floor for per-sample log-density scores. Scores below the floor are
// clamped and counted, so a student placing mass far outside the reference
// support degrades the estimate instead of driving it to -inf.
constexpr double kDefaultScoreFloor = -700.0;

struct MetricEstimate {
  double mean = 0.0;       // nats
  double std_error = 0.0;  // nats
  std::int64_t n_samples = 0;
  std::int64_t clamp_count = 0;
};

// Expected ground-truth log-density of student samples (sample quality).
MetricEstimate precision_mc(const GaussianMixture& student,
                            const GaussianMixture& ground, std::int64_t n,
                            std::uint64_t seed,
                            double clamp_floor = kDefaultScoreFloor);

// Expected student log-density of ground-truth samples (coverage).
MetricEstimate recall_mc(const GaussianMixture& student,
                         const GaussianMixture& ground, std::int64_t n,
                         std::uint64_t seed,
                         double clamp_floor = kDefaultScoreFloor);

struct AxisSpec {
  double lo = 0.0;
  double hi = 0.0;
  int steps = 0;
};

struct DensityGrid {
  std::vector<double> x_axis;
  std::vector<double> y_axis;
  std::vector<double> log_density;  // row-major over (y, x)
};

// Mixture log-density on a Cartesian grid; 2-D mixtures only.
DensityGrid density_grid(const GaussianMixture& m, const AxisSpec& x_range,
                         const AxisSpec& y_range);

// Plain-text table: first row is the x axis, first column the y axis, body
// the log-density values; tab separated, 17 significant digits.
void write_density_grid(const DensityGrid& grid, std::ostream& os);
void write_density_grid(const DensityGrid& grid, const std::string& path);

}  // namespace distill
