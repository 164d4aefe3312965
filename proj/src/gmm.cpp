#include "distill/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "distill/rng.hpp"
#include "distill/simd/kernels.hpp"

namespace distill {

namespace {

constexpr double kMaxBeta = 1e6;
constexpr double kCollapseWeight = 1e-8;

std::string dim_mismatch(const char* what, int got, int want) {
  std::ostringstream os;
  os << what << ": dimension mismatch (got " << got << ", expected " << want
     << ")";
  return os.str();
}

}  // namespace

GaussianComponent::GaussianComponent(Eigen::VectorXd mean,
                                     Eigen::MatrixXd covariance)
    : mean_(std::move(mean)), covariance_(std::move(covariance)) {
  const auto d = mean_.size();
  if (covariance_.rows() != d || covariance_.cols() != d)
    throw std::invalid_argument("GaussianComponent: covariance shape does not match mean");
  const double asym = (covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12)
    throw std::invalid_argument("GaussianComponent: covariance is not symmetric");
  covariance_ = ((covariance_ + covariance_.transpose()) / 2.0).eval();

  Eigen::LLT<Eigen::MatrixXd> llt(covariance_);
  if (llt.info() != Eigen::Success)
    throw NumericError("GaussianComponent: covariance is not positive definite");
  chol_ = llt.matrixL();

  log_det_ = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) log_det_ += 2.0 * std::log(chol_(i, i));
  log_norm_ = -0.5 * (static_cast<double>(d) * std::log(2.0 * M_PI) + log_det_);

  Eigen::MatrixXd linv = chol_.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd::Identity(d, d));
  inv_chol_.assign(d * d, 0.0);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) inv_chol_[i * d + j] = linv(i, j);
}

double GaussianComponent::log_pdf(const Eigen::VectorXd& x) const {
  if (x.size() != mean_.size())
    throw std::invalid_argument(
        dim_mismatch("log_pdf", static_cast<int>(x.size()), dim()));
  const Eigen::VectorXd y =
      chol_.triangularView<Eigen::Lower>().solve(x - mean_);
  return log_norm_ - 0.5 * y.squaredNorm();
}

GaussianMixture::GaussianMixture(std::vector<GaussianComponent> components,
                                 std::vector<double> weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
  if (components_.empty())
    throw std::invalid_argument("GaussianMixture: no components");
  if (weights_.size() != components_.size())
    throw std::invalid_argument("GaussianMixture: weight count does not match components");
  const int d = components_.front().dim();
  for (const auto& c : components_)
    if (c.dim() != d)
      throw std::invalid_argument("GaussianMixture: components differ in dimension");
  double sum = 0.0;
  for (double w : weights_) {
    if (!(w > 0.0))
      throw std::invalid_argument("GaussianMixture: weights must be strictly positive");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("GaussianMixture: weights do not sum to 1");
  for (double& w : weights_) w /= sum;
  log_weights_.resize(weights_.size());
  for (std::size_t k = 0; k < weights_.size(); ++k)
    log_weights_[k] = std::log(weights_[k]);
}

GaussianMixture GaussianMixture::with_weights(std::vector<double> weights) const {
  return GaussianMixture(components_, std::move(weights));
}

GaussianMixture make_mixture(const std::vector<Eigen::VectorXd>& means,
                             const std::vector<Eigen::MatrixXd>& covariances,
                             std::vector<double> weights) {
  if (means.size() != covariances.size())
    throw std::invalid_argument("make_mixture: means/covariances length mismatch");
  std::vector<GaussianComponent> comps;
  comps.reserve(means.size());
  for (std::size_t k = 0; k < means.size(); ++k) {
    try {
      comps.emplace_back(means[k], covariances[k]);
    } catch (const NumericError& e) {
      std::ostringstream os;
      os << "component " << k << ": " << e.what();
      throw NumericError(os.str());
    }
  }
  return GaussianMixture(std::move(comps), std::move(weights));
}

std::vector<double> log_density_batch(const GaussianMixture& m,
                                      const PointMatrix& points) {
  if (points.cols() != m.dim())
    throw std::invalid_argument(
        dim_mismatch("log_density", static_cast<int>(points.cols()), m.dim()));
  const std::size_t n = static_cast<std::size_t>(points.rows());
  const std::size_t k = static_cast<std::size_t>(m.size());
  const std::size_t d = static_cast<std::size_t>(m.dim());

  // scores holds k contiguous blocks of n: log w_k + log N_k(x), with the
  // log-weight folded into the kernel's normalization constant.
  std::vector<double> scores(k * n);
  for (std::size_t j = 0; j < k; ++j) {
    const auto& c = m.component(static_cast<int>(j));
    simd::gaussian_logpdf_batch(points.data(), n, d, c.mean().data(),
                                c.inv_chol_flat().data(),
                                c.log_norm() + m.log_weights()[j],
                                scores.data() + j * n);
  }

  std::vector<double> out(n);
  for (std::size_t p = 0; p < n; ++p) {
    double mx = scores[p];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, scores[j * n + p]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(scores[j * n + p] - mx);
    out[p] = mx + std::log(s);
  }
  return out;
}

double log_density(const GaussianMixture& m, const Eigen::VectorXd& x) {
  if (x.size() != m.dim())
    throw std::invalid_argument(
        dim_mismatch("log_density", static_cast<int>(x.size()), m.dim()));
  std::vector<double> scores(m.size());
  for (int j = 0; j < m.size(); ++j)
    scores[j] = m.log_weights()[j] + m.component(j).log_pdf(x);
  return log_sum_exp(scores);
}

Dataset sample(const GaussianMixture& m, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  const int d = m.dim();
  Dataset out;
  out.points.resize(n, d);
  out.labels.resize(n);
  const std::vector<double> cdf = cumulative(m.weights());
  Rng rng(seed);
  Eigen::VectorXd z(d);
  for (int i = 0; i < n; ++i) {
    const int k = static_cast<int>(draw_from_cdf(cdf, rng.uniform()));
    out.labels[i] = k;
    for (int j = 0; j < d; ++j) z[j] = rng.normal();
    const auto& c = m.component(k);
    out.points.row(i) =
        (c.mean() + c.chol_lower() * z).transpose();
  }
  return out;
}

TemperedWeights temper_weights(std::span<const double> w, double beta) {
  if (beta < 1.0)
    throw std::invalid_argument("temper_weights: beta must be >= 1");
  if (w.empty()) throw std::invalid_argument("temper_weights: empty weights");
  for (double v : w)
    if (!(v > 0.0))
      throw std::invalid_argument("temper_weights: weights must be strictly positive");

  TemperedWeights tw;
  tw.base_weights.assign(w.begin(), w.end());
  tw.beta = std::min(beta, kMaxBeta);

  std::vector<double> lw(w.size());
  for (std::size_t k = 0; k < w.size(); ++k)
    lw[k] = tw.beta * std::log(w[k]);
  const double lse = log_sum_exp(lw);
  tw.tempered.resize(w.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    tw.tempered[k] = std::exp(lw[k] - lse);
    sum += tw.tempered[k];
  }
  for (double& v : tw.tempered) v /= sum;
  return tw;
}

double weight_entropy(std::span<const double> w) {
  double sum = 0.0;
  for (double v : w) {
    if (v < 0.0)
      throw std::invalid_argument("weight_entropy: negative weight");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("weight_entropy: weights do not sum to 1");
  return entropy_nats(w);
}

double gaussian_cross_entropy(const GaussianComponent& a,
                              const GaussianComponent& b) {
  if (a.dim() != b.dim())
    throw std::invalid_argument(
        dim_mismatch("gaussian_cross_entropy", a.dim(), b.dim()));
  const int d = a.dim();
  // tr(Sigma_b^-1 Sigma_a) = ||L_b^-1 L_a||_F^2
  const Eigen::MatrixXd m =
      b.chol_lower().triangularView<Eigen::Lower>().solve(a.chol_lower());
  const double trace_term = m.squaredNorm();
  const Eigen::VectorXd y =
      b.chol_lower().triangularView<Eigen::Lower>().solve(a.mean() - b.mean());
  return -0.5 * (d * std::log(2.0 * M_PI) + b.log_det_covariance() +
                 trace_term + y.squaredNorm());
}

double mixture_cross_entropy_bound(const GaussianMixture& teacher,
                                   const GaussianMixture& student) {
  if (teacher.dim() != student.dim())
    throw std::invalid_argument(
        dim_mismatch("mixture_cross_entropy_bound", teacher.dim(), student.dim()));
  double bound = 0.0;
  for (int i = 0; i < teacher.size(); ++i)
    for (int j = 0; j < student.size(); ++j)
      bound += teacher.weights()[i] * student.weights()[j] *
               gaussian_cross_entropy(teacher.component(i), student.component(j));
  return bound;
}

namespace {

struct EmState {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  std::vector<double> weights;
};

// k-means++ seeding: first center uniform, then D^2-weighted draws.
std::vector<Eigen::VectorXd> kmeanspp_means(const PointMatrix& pts, int k,
                                            Rng& rng) {
  const int n = static_cast<int>(pts.rows());
  std::vector<Eigen::VectorXd> centers;
  centers.reserve(k);
  centers.push_back(pts.row(static_cast<int>(rng.uniform_index(n))));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    const auto& c = centers.back();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double dist = (pts.row(i).transpose() - c).squaredNorm();
      d2[i] = std::min(d2[i], dist);
      total += d2[i];
    }
    int next;
    if (total <= 0.0) {
      next = static_cast<int>(rng.uniform_index(n));
    } else {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      next = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= u) {
          next = i;
          break;
        }
      }
    }
    centers.push_back(pts.row(next));
  }
  return centers;
}

Eigen::MatrixXd global_covariance(const PointMatrix& pts) {
  const Eigen::RowVectorXd mean = pts.colwise().mean();
  const Eigen::MatrixXd centered = pts.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(pts.rows());
}

struct EmRun {
  EmState state;
  std::vector<double> trace;
  int collapse_events = 0;
};

EmRun run_em_once(const PointMatrix& pts,
                  const std::vector<const double*>& cols, int k,
                  const FitConfig& cfg, const Eigen::MatrixXd& global_cov,
                  std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(pts.rows());
  const int d = static_cast<int>(pts.cols());
  const Eigen::MatrixXd reg =
      cfg.reg_eps * Eigen::MatrixXd::Identity(d, d);

  Rng rng(seed);
  EmRun run;
  EmState& st = run.state;
  st.means = kmeanspp_means(pts, k, rng);
  st.covs.assign(k, global_cov + reg);
  st.weights.assign(k, 1.0 / k);

  std::vector<double> scores(static_cast<std::size_t>(k) * n);
  std::vector<double> lse(n);
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    // E-step
    for (int j = 0; j < k; ++j) {
      GaussianComponent c(st.means[j], st.covs[j]);
      simd::gaussian_logpdf_batch(pts.data(), n, d, c.mean().data(),
                                  c.inv_chol_flat().data(),
                                  c.log_norm() + std::log(st.weights[j]),
                                  scores.data() + static_cast<std::size_t>(j) * n);
    }
    for (std::size_t p = 0; p < n; ++p) {
      double mx = scores[p];
      for (int j = 1; j < k; ++j)
        mx = std::max(mx, scores[static_cast<std::size_t>(j) * n + p]);
      double s = 0.0;
      for (int j = 0; j < k; ++j)
        s += std::exp(scores[static_cast<std::size_t>(j) * n + p] - mx);
      lse[p] = mx + std::log(s);
    }
    const double ll = simd::reduce_sum(lse.data(), n) / static_cast<double>(n);
    run.trace.push_back(ll);

    // responsibilities, in place
    for (int j = 0; j < k; ++j) {
      double* row = scores.data() + static_cast<std::size_t>(j) * n;
      for (std::size_t p = 0; p < n; ++p) row[p] = std::exp(row[p] - lse[p]);
    }

    // M-step
    bool collapsed = false;
    for (int j = 0; j < k; ++j) {
      double* resp = scores.data() + static_cast<std::size_t>(j) * n;
      const double nk = simd::reduce_sum(resp, n);
      if (nk / static_cast<double>(n) < kCollapseWeight) {
        st.means[j] = pts.row(static_cast<int>(rng.uniform_index(n)));
        st.covs[j] = global_cov + reg;
        st.weights[j] = 1.0 / static_cast<double>(n);
        ++run.collapse_events;
        collapsed = true;
        std::clog << "fit_em: component " << j
                  << " collapsed; re-seeded at a data point\n";
        continue;
      }
      st.weights[j] = nk / static_cast<double>(n);
      Eigen::VectorXd mu(d);
      for (int a = 0; a < d; ++a) mu[a] = simd::dot(resp, cols[a], n) / nk;
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
      for (std::size_t p = 0; p < n; ++p) {
        const double r = resp[p];
        for (int a = 0; a < d; ++a) {
          const double da = pts(p, a) - mu[a];
          for (int b = 0; b <= a; ++b)
            cov(a, b) += r * da * (pts(p, b) - mu[b]);
        }
      }
      cov /= nk;
      cov = cov.selfadjointView<Eigen::Lower>();
      st.means[j] = mu;
      st.covs[j] = cov + reg;
    }
    if (collapsed) {
      double wsum = 0.0;
      for (double w : st.weights) wsum += w;
      for (double& w : st.weights) w /= wsum;
    }

    if (iter > 0 && std::abs(ll - prev_ll) < cfg.tol) break;
    prev_ll = ll;
  }
  return run;
}

}  // namespace

GaussianMixture fit_em(const Dataset& data, int k, const FitConfig& cfg,
                       FitReport* report) {
  if (data.n() < 1) throw std::invalid_argument("fit_em: empty dataset");
  if (k < 1) throw std::invalid_argument("fit_em: k must be >= 1");
  if (cfg.max_iter < 1 || cfg.n_restarts < 1 || !(cfg.tol > 0.0) ||
      !(cfg.reg_eps > 0.0))
    throw std::invalid_argument("fit_em: invalid FitConfig");
  const int n = data.n();
  const int d = data.dim();
  if (!data.points.allFinite())
    throw std::invalid_argument("fit_em: dataset contains non-finite points");
  if (n < k * (d + 1))
    std::clog << "fit_em: only " << n << " points for k=" << k << ", d=" << d
              << "; fit may be degenerate\n";

  // column-contiguous copy for the weighted-mean dot products
  std::vector<std::vector<double>> soa(d, std::vector<double>(n));
  for (int a = 0; a < d; ++a)
    for (int i = 0; i < n; ++i) soa[a][i] = data.points(i, a);
  std::vector<const double*> cols(d);
  for (int a = 0; a < d; ++a) cols[a] = soa[a].data();

  const Eigen::MatrixXd global_cov = global_covariance(data.points);

  EmRun best;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < cfg.n_restarts; ++r) {
    EmRun run = run_em_once(data.points, cols, k, cfg, global_cov,
                            derive_seed(cfg.seed, {0x454d, static_cast<std::uint64_t>(r)}));
    if (run.trace.back() > best_ll) {
      best_ll = run.trace.back();
      best = std::move(run);
    }
  }

  if (report != nullptr) {
    report->loglik_trace = best.trace;
    report->final_loglik = best_ll;
    report->iterations = static_cast<int>(best.trace.size());
    report->collapse_events = best.collapse_events;
  }

  std::vector<Eigen::VectorXd> means = best.state.means;
  std::vector<Eigen::MatrixXd> covs = best.state.covs;
  return make_mixture(means, covs, best.state.weights);
}

}  // namespace distill
