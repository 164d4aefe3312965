#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "distill/numerics.hpp"

namespace distill {

// Sample points, one row per point (row-major so batch kernels can walk the
// buffer directly).
using PointMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One Gaussian. Immutable after construction; the Cholesky factorization and
// the derived constants are computed once. The covariance is symmetrized
// (rejecting asymmetry above 1e-12) and must be positive definite.
class GaussianComponent {
 public:
  GaussianComponent(Eigen::VectorXd mean, Eigen::MatrixXd covariance);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return covariance_; }

  // Lower Cholesky factor L with covariance = L * L^T.
  const Eigen::MatrixXd& chol_lower() const { return chol_; }
  // L^{-1}, flattened row-major, for the batch density kernel.
  const std::vector<double>& inv_chol_flat() const { return inv_chol_; }
  double log_det_covariance() const { return log_det_; }
  // log of the density normalization constant.
  double log_norm() const { return log_norm_; }

  double log_pdf(const Eigen::VectorXd& x) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  Eigen::MatrixXd chol_;
  std::vector<double> inv_chol_;
  double log_det_ = 0.0;
  double log_norm_ = 0.0;
};

// Weighted list of Gaussians. Weights must be strictly positive and are
// renormalized exactly on construction (inputs further than 1e-9 from a unit
// sum are rejected).
class GaussianMixture {
 public:
  GaussianMixture(std::vector<GaussianComponent> components,
                  std::vector<double> weights);

  int size() const { return static_cast<int>(components_.size()); }
  int dim() const { return components_.front().dim(); }
  const std::vector<GaussianComponent>& components() const {
    return components_;
  }
  const GaussianComponent& component(int k) const { return components_[k]; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& log_weights() const { return log_weights_; }

  // Same components, new weights.
  GaussianMixture with_weights(std::vector<double> weights) const;

 private:
  std::vector<GaussianComponent> components_;
  std::vector<double> weights_;
  std::vector<double> log_weights_;
};

// Builds a mixture from raw parameter lists; factorization failures are
// reported with the offending component index.
GaussianMixture make_mixture(const std::vector<Eigen::VectorXd>& means,
                             const std::vector<Eigen::MatrixXd>& covariances,
                             std::vector<double> weights);

struct Dataset {
  PointMatrix points;       // n x d
  std::vector<int> labels;  // generating component per point; empty if unknown

  int n() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

// Mixture weights pushed through the escort transform w^beta / sum(w^beta).
struct TemperedWeights {
  std::vector<double> base_weights;
  double beta = 1.0;
  std::vector<double> tempered;
};

struct FitConfig {
  int max_iter = 500;
  double tol = 1e-6;      // nats, on the change in mean log-likelihood
  double reg_eps = 1e-6;  // added to covariance diagonals every M-step
  int n_restarts = 5;
  std::uint64_t seed = 0;
};

// Diagnostics from fit_em; trace belongs to the winning restart.
struct FitReport {
  std::vector<double> loglik_trace;  // mean log-likelihood per iteration
  double final_loglik = 0.0;
  int iterations = 0;
  int collapse_events = 0;
};

double log_density(const GaussianMixture& m, const Eigen::VectorXd& x);

// Per-point mixture log-density for a batch; the hot path behind sampling
// metrics and EM.
std::vector<double> log_density_batch(const GaussianMixture& m,
                                      const PointMatrix& points);

Dataset sample(const GaussianMixture& m, int n, std::uint64_t seed);

// tempered[k] = exp(beta * log w[k]) / sum_j exp(beta * log w[j]).
// beta is capped at 1e6, which already produces one-hot weights to double
// precision for any non-tied input.
TemperedWeights temper_weights(std::span<const double> w, double beta);

double weight_entropy(std::span<const double> w);

// E_a[log N(x; mu_b, Sigma_b)] in closed form:
// -(d log 2pi + log|Sigma_b| + tr(Sigma_b^-1 Sigma_a) + dmu^T Sigma_b^-1 dmu)/2
double gaussian_cross_entropy(const GaussianComponent& a,
                              const GaussianComponent& b);

// Jensen lower bound on the integral of teacher * log(student): the double
// sum of weight products times pairwise Gaussian cross-entropies.
double mixture_cross_entropy_bound(const GaussianMixture& teacher,
                                   const GaussianMixture& student);

GaussianMixture fit_em(const Dataset& data, int k, const FitConfig& cfg,
                       FitReport* report = nullptr);

}  // namespace distill
