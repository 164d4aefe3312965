#include "distill/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace distill {

namespace {

MetricEstimate score_samples(const GaussianMixture& sampler,
                             const GaussianMixture& scorer, std::int64_t n,
                             std::uint64_t seed, double clamp_floor) {
  if (sampler.dim() != scorer.dim())
    throw std::invalid_argument("precision/recall: dimension mismatch");
  if (n < 2) throw std::invalid_argument("precision/recall: need n >= 2");
  const Dataset pts = sample(sampler, static_cast<int>(n), seed);
  std::vector<double> scores = log_density_batch(scorer, pts.points);
  std::int64_t clamped = 0;
  for (double& s : scores) {
    if (s < clamp_floor) {
      s = clamp_floor;
      ++clamped;
    }
  }
  const MeanAndSe ms = mean_and_se(scores);
  return {ms.mean, ms.std_error, n, clamped};
}

}  // namespace

MetricEstimate precision_mc(const GaussianMixture& student,
                            const GaussianMixture& ground, std::int64_t n,
                            std::uint64_t seed, double clamp_floor) {
  return score_samples(student, ground, n, seed, clamp_floor);
}

MetricEstimate recall_mc(const GaussianMixture& student,
                         const GaussianMixture& ground, std::int64_t n,
                         std::uint64_t seed, double clamp_floor) {
  return score_samples(ground, student, n, seed, clamp_floor);
}

DensityGrid density_grid(const GaussianMixture& m, const AxisSpec& x_range,
                         const AxisSpec& y_range) {
  if (m.dim() != 2)
    throw std::invalid_argument("density_grid: mixture must be 2-D");
  if (x_range.steps < 2 || y_range.steps < 2)
    throw std::invalid_argument("density_grid: need at least 2 steps per axis");

  DensityGrid grid;
  grid.x_axis.resize(x_range.steps);
  grid.y_axis.resize(y_range.steps);
  for (int i = 0; i < x_range.steps; ++i)
    grid.x_axis[i] =
        x_range.lo + (x_range.hi - x_range.lo) * i / (x_range.steps - 1);
  for (int i = 0; i < y_range.steps; ++i)
    grid.y_axis[i] =
        y_range.lo + (y_range.hi - y_range.lo) * i / (y_range.steps - 1);

  PointMatrix pts(static_cast<Eigen::Index>(x_range.steps) * y_range.steps, 2);
  for (int iy = 0; iy < y_range.steps; ++iy)
    for (int ix = 0; ix < x_range.steps; ++ix) {
      const Eigen::Index r =
          static_cast<Eigen::Index>(iy) * x_range.steps + ix;
      pts(r, 0) = grid.x_axis[ix];
      pts(r, 1) = grid.y_axis[iy];
    }
  grid.log_density = log_density_batch(m, pts);
  return grid;
}

namespace {

void put17(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

}  // namespace

void write_density_grid(const DensityGrid& grid, std::ostream& os) {
  for (double x : grid.x_axis) {
    os << '\t';
    put17(os, x);
  }
  os << '\n';
  const std::size_t nx = grid.x_axis.size();
  for (std::size_t iy = 0; iy < grid.y_axis.size(); ++iy) {
    put17(os, grid.y_axis[iy]);
    for (std::size_t ix = 0; ix < nx; ++ix) {
      os << '\t';
      put17(os, grid.log_density[iy * nx + ix]);
    }
    os << '\n';
  }
}

void write_density_grid(const DensityGrid& grid, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_density_grid(grid, os);
  os.flush();
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace distill
