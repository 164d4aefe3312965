#pragma once

// Test-only reference computations, kept independent of the library's
// evaluation paths: densities via explicit inverse/determinant instead of
// Cholesky solves, sampling via eigendecomposition instead of the production
// sampler, expectations via brute force.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "distill/gmm.hpp"
#include "distill/token.hpp"

namespace oracles {

struct Estimate {
  double mean;
  double se;
};

// Precomputed inverse/determinant Gaussian evaluator (a different route than
// the library's Cholesky whitening).
class GaussScorer {
 public:
  GaussScorer(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov)
      : mu_(mu),
        inv_(cov.inverse()),
        log_norm_(-0.5 * (mu.size() * std::log(2.0 * M_PI) +
                          std::log(cov.determinant()))) {}

  double operator()(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd diff = x - mu_;
    return log_norm_ - 0.5 * diff.dot(inv_ * diff);
  }

 private:
  Eigen::VectorXd mu_;
  Eigen::MatrixXd inv_;
  double log_norm_;
};

inline double log_gauss(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                        const Eigen::MatrixXd& cov) {
  return GaussScorer(mu, cov)(x);
}

class MixtureScorer {
 public:
  explicit MixtureScorer(const distill::GaussianMixture& m) {
    for (int k = 0; k < m.size(); ++k) {
      scorers_.emplace_back(m.component(k).mean(), m.component(k).covariance());
      log_w_.push_back(std::log(m.weights()[k]));
    }
  }

  double operator()(const Eigen::VectorXd& x) const {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(scorers_.size());
    for (std::size_t k = 0; k < scorers_.size(); ++k) {
      terms[k] = log_w_[k] + scorers_[k](x);
      best = std::max(best, terms[k]);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - best);
    return best + std::log(s);
  }

 private:
  std::vector<GaussScorer> scorers_;
  std::vector<double> log_w_;
};

inline double log_mixture(const distill::GaussianMixture& m,
                          const Eigen::VectorXd& x) {
  return MixtureScorer(m)(x);
}

class GaussSampler {
 public:
  GaussSampler(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov)
      : mu_(mu) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    transform_ = es.eigenvectors() *
                 es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }

  Eigen::VectorXd draw(std::mt19937& rng) {
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(mu_.size());
    for (int i = 0; i < mu_.size(); ++i) z[i] = normal(rng);
    return mu_ + transform_ * z;
  }

 private:
  Eigen::VectorXd mu_;
  Eigen::MatrixXd transform_;
};

inline Estimate mean_se(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1) / n)};
}

// Monte-Carlo estimate of E_a[log N(x; mu_b, cov_b)].
inline Estimate mc_cross_entropy(const Eigen::VectorXd& mu_a,
                                 const Eigen::MatrixXd& cov_a,
                                 const Eigen::VectorXd& mu_b,
                                 const Eigen::MatrixXd& cov_b, int n,
                                 unsigned seed) {
  std::mt19937 rng(seed);
  GaussSampler sampler(mu_a, cov_a);
  const GaussScorer scorer(mu_b, cov_b);
  std::vector<double> vals(n);
  for (int i = 0; i < n; ++i) vals[i] = scorer(sampler.draw(rng));
  return mean_se(vals);
}

// Monte-Carlo estimate of the integral of teacher * log(student) (term (a)).
inline Estimate mc_term_a(const distill::GaussianMixture& teacher,
                          const distill::GaussianMixture& student, int n,
                          unsigned seed) {
  std::mt19937 rng(seed);
  std::discrete_distribution<int> pick(teacher.weights().begin(),
                                       teacher.weights().end());
  std::vector<GaussSampler> samplers;
  for (int k = 0; k < teacher.size(); ++k)
    samplers.emplace_back(teacher.component(k).mean(),
                          teacher.component(k).covariance());
  const MixtureScorer scorer(student);
  std::vector<double> vals(n);
  for (int i = 0; i < n; ++i)
    vals[i] = scorer(samplers[pick(rng)].draw(rng));
  return mean_se(vals);
}

// Trapezoid quadrature of exp(log_f) over a 2-D box.
template <typename LogF>
double quadrature_2d(LogF&& log_f, double x_lo, double x_hi, double y_lo,
                     double y_hi, int steps) {
  const double hx = (x_hi - x_lo) / (steps - 1);
  const double hy = (y_hi - y_lo) / (steps - 1);
  double total = 0.0;
  for (int iy = 0; iy < steps; ++iy) {
    const double wy = (iy == 0 || iy == steps - 1) ? 0.5 : 1.0;
    for (int ix = 0; ix < steps; ++ix) {
      const double wx = (ix == 0 || ix == steps - 1) ? 0.5 : 1.0;
      total += wx * wy *
               std::exp(log_f(x_lo + ix * hx, y_lo + iy * hy));
    }
  }
  return total * hx * hy;
}

// Exact per-token precision for length-2 sequences by enumerating all V^2
// outcomes: E_{sampler}[(log q_start(s0) + log q_trans(s0, s1)) / 2].
inline double exact_token_score(const distill::MarkovModel& sampler,
                                const distill::MarkovModel& scorer) {
  const int v = sampler.vocab_size;
  double total = 0.0;
  for (int a = 0; a < v; ++a)
    for (int b = 0; b < v; ++b) {
      const double p = sampler.start[a] * sampler.transition(a, b);
      if (p == 0.0) continue;
      total += p * (std::log(scorer.start[a]) +
                    std::log(scorer.transition(a, b))) /
               2.0;
    }
  return total;
}

// Spearman rank correlation; assumes no ties.
inline double spearman(const std::vector<double>& xs,
                       const std::vector<double>& ys) {
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) idx[i] = static_cast<int>(i);
    std::sort(idx.begin(), idx.end(),
              [&](int a, int b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) r[idx[i]] = static_cast<double>(i);
    return r;
  };
  const std::vector<double> rx = ranks(xs), ry = ranks(ys);
  const double n = static_cast<double>(xs.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

// Random SPD matrix with eigenvalues bounded away from zero.
inline Eigen::MatrixXd random_spd(int d, std::mt19937& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = normal(rng);
  return a * a.transpose() / d + 0.2 * Eigen::MatrixXd::Identity(d, d);
}

inline distill::GaussianMixture random_mixture(int d, int k,
                                               std::mt19937& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.2, 1.0);
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  std::vector<double> weights;
  double wsum = 0.0;
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd mu(d);
    for (int i = 0; i < d; ++i) mu[i] = 3.0 * normal(rng);
    means.push_back(mu);
    covs.push_back(random_spd(d, rng));
    weights.push_back(unif(rng));
    wsum += weights.back();
  }
  for (double& w : weights) w /= wsum;
  return distill::make_mixture(means, covs, weights);
}

}  // namespace oracles
