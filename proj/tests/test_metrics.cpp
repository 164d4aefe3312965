#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "distill/metrics.hpp"
#include "distill/pipeline.hpp"
#include "oracles.hpp"

using namespace distill;

namespace {

GaussianMixture std_normal2() {
  return make_mixture({Eigen::VectorXd::Zero(2)},
                      {Eigen::MatrixXd::Identity(2, 2)}, {1.0});
}

}  // namespace

TEST_CASE("precision equals the negative entropy when student = ground") {
  const GaussianMixture m = std_normal2();
  const MetricEstimate est = precision_mc(m, m, 100000, 17);
  const double want = -(std::log(2 * M_PI) + 1.0);
  CHECK(std::abs(est.mean - want) <= 3.0 * est.std_error);
  CHECK(est.std_error > 0.0);
  CHECK(est.n_samples == 100000);
  CHECK(est.clamp_count == 0);
}

TEST_CASE("precision and recall agree when the student is the ground truth") {
  const GaussianMixture g = default_grid_ground_truth();
  const MetricEstimate p = precision_mc(g, g, 100000, 5);
  const MetricEstimate r = recall_mc(g, g, 100000, 6);
  const double combined =
      std::sqrt(p.std_error * p.std_error + r.std_error * r.std_error);
  CHECK(std::abs(p.mean - r.mean) <= 3.0 * combined);
}

TEST_CASE("estimates are consistent between n and 4n") {
  const GaussianMixture g = default_grid_ground_truth();
  const GaussianMixture student = std_normal2();
  const MetricEstimate small = precision_mc(student, g, 25000, 9);
  const MetricEstimate big = precision_mc(student, g, 100000, 10);
  const double combined = std::sqrt(small.std_error * small.std_error +
                                    big.std_error * big.std_error);
  CHECK(std::abs(small.mean - big.mean) <= 3.0 * combined);
  // standard error scales like 1/sqrt(n)
  CHECK(small.std_error / big.std_error >= 1.6);
  CHECK(small.std_error / big.std_error <= 2.4);
}

TEST_CASE("results are deterministic given the seed") {
  const GaussianMixture g = default_grid_ground_truth();
  const MetricEstimate a = recall_mc(std_normal2(), g, 5000, 123);
  const MetricEstimate b = recall_mc(std_normal2(), g, 5000, 123);
  CHECK(a.mean == b.mean);
  CHECK(a.std_error == b.std_error);
}

TEST_CASE("scores below the floor are clamped and counted") {
  const GaussianMixture ground = std_normal2();
  Eigen::VectorXd far(2);
  far << 100.0, 0.0;
  const GaussianMixture student = make_mixture(
      {far}, {1e-4 * Eigen::MatrixXd::Identity(2, 2)}, {1.0});
  const MetricEstimate est = precision_mc(student, ground, 1000, 4);
  CHECK(est.clamp_count == 1000);
  CHECK(est.mean == -700.0);
  CHECK(est.std_error == 0.0);

  const MetricEstimate raw = precision_mc(student, ground, 1000, 4, -1e9);
  CHECK(raw.clamp_count == 0);
  CHECK(raw.mean < -4000.0);
}

TEST_CASE("precision/recall argument validation") {
  const GaussianMixture g2 = std_normal2();
  const GaussianMixture g1 = make_mixture(
      {Eigen::VectorXd::Zero(1)}, {Eigen::MatrixXd::Identity(1, 1)}, {1.0});
  CHECK_THROWS_AS(precision_mc(g1, g2, 100, 1), std::invalid_argument);
  CHECK_THROWS_AS(precision_mc(g2, g2, 1, 1), std::invalid_argument);
}

TEST_CASE("density_grid: symmetry, quadrature, and mode location") {
  SUBCASE("standard normal grid is symmetric") {
    const DensityGrid grid =
        density_grid(std_normal2(), {-3.0, 3.0, 61}, {-3.0, 3.0, 41});
    const std::size_t nx = grid.x_axis.size(), ny = grid.y_axis.size();
    REQUIRE(nx == 61);
    REQUIRE(ny == 41);
    for (std::size_t iy = 0; iy < ny; ++iy)
      for (std::size_t ix = 0; ix < nx; ++ix) {
        const double v = grid.log_density[iy * nx + ix];
        CHECK(std::abs(v - grid.log_density[iy * nx + (nx - 1 - ix)]) <= 1e-12);
        CHECK(std::abs(v - grid.log_density[(ny - 1 - iy) * nx + ix]) <= 1e-12);
      }
  }

  SUBCASE("exp(grid) integrates to 1") {
    const DensityGrid grid =
        density_grid(std_normal2(), {-8.0, 8.0, 401}, {-8.0, 8.0, 401});
    const double hx = grid.x_axis[1] - grid.x_axis[0];
    const double hy = grid.y_axis[1] - grid.y_axis[0];
    double total = 0.0;
    for (std::size_t iy = 0; iy < grid.y_axis.size(); ++iy) {
      const double wy = (iy == 0 || iy + 1 == grid.y_axis.size()) ? 0.5 : 1.0;
      for (std::size_t ix = 0; ix < grid.x_axis.size(); ++ix) {
        const double wx = (ix == 0 || ix + 1 == grid.x_axis.size()) ? 0.5 : 1.0;
        total += wx * wy * std::exp(grid.log_density[iy * grid.x_axis.size() + ix]);
      }
    }
    CHECK(total * hx * hy == doctest::Approx(1.0).epsilon(1e-2));
  }

  SUBCASE("grid maximum lands within one cell of a mode mean") {
    const GaussianMixture g = default_grid_ground_truth();
    const DensityGrid grid = density_grid(g, {-9.0, 9.0, 181}, {-3.0, 3.0, 61});
    const std::size_t nx = grid.x_axis.size();
    std::size_t best = 0;
    for (std::size_t i = 1; i < grid.log_density.size(); ++i)
      if (grid.log_density[i] > grid.log_density[best]) best = i;
    const double bx = grid.x_axis[best % nx];
    const double by = grid.y_axis[best / nx];
    const double hx = grid.x_axis[1] - grid.x_axis[0];
    const double hy = grid.y_axis[1] - grid.y_axis[0];
    bool near_mode = false;
    for (int k = 0; k < g.size(); ++k) {
      const auto& mu = g.component(k).mean();
      if (std::abs(mu[0] - bx) <= hx && std::abs(mu[1] - by) <= hy)
        near_mode = true;
    }
    CHECK(near_mode);
  }

  SUBCASE("argument validation") {
    const GaussianMixture g1 = make_mixture(
        {Eigen::VectorXd::Zero(1)}, {Eigen::MatrixXd::Identity(1, 1)}, {1.0});
    CHECK_THROWS_AS(density_grid(g1, {-1, 1, 10}, {-1, 1, 10}),
                    std::invalid_argument);
    CHECK_THROWS_AS(density_grid(std_normal2(), {-1, 1, 1}, {-1, 1, 10}),
                    std::invalid_argument);
  }
}

TEST_CASE("density grid serialization round-trips at 17 significant digits") {
  const DensityGrid grid =
      density_grid(default_grid_ground_truth(), {-7.3, 7.7, 11}, {-2.1, 2.3, 7});
  std::ostringstream os;
  write_density_grid(grid, os);
  const std::string text = os.str();

  std::istringstream is(text);
  std::string line;
  REQUIRE(std::getline(is, line));
  // header row: empty corner cell then the x axis
  std::istringstream header(line);
  std::string field;
  std::vector<double> xs;
  bool first = true;
  while (std::getline(header, field, '\t')) {
    if (first) {
      CHECK(field.empty());
      first = false;
      continue;
    }
    xs.push_back(std::strtod(field.c_str(), nullptr));
  }
  REQUIRE(xs.size() == grid.x_axis.size());
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK(xs[i] == grid.x_axis[i]);

  std::size_t iy = 0;
  while (std::getline(is, line)) {
    std::istringstream row(line);
    std::vector<double> vals;
    while (std::getline(row, field, '\t'))
      vals.push_back(std::strtod(field.c_str(), nullptr));
    REQUIRE(vals.size() == grid.x_axis.size() + 1);
    CHECK(vals[0] == grid.y_axis[iy]);
    for (std::size_t ix = 0; ix < grid.x_axis.size(); ++ix)
      CHECK(vals[ix + 1] == grid.log_density[iy * grid.x_axis.size() + ix]);
    ++iy;
  }
  CHECK(iy == grid.y_axis.size());
}
