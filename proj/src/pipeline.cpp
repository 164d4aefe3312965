#include "distill/pipeline.hpp"

#include <algorithm>
#include <iostream>
#include <stdexcept>
#include <string>

#include "distill/rng.hpp"

namespace distill {

GaussianMixture default_grid_ground_truth() {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  std::vector<double> weights;
  const Eigen::MatrixXd cov = 0.1 * Eigen::MatrixXd::Identity(2, 2);
  const double pair_weight[] = {0.15, 0.26, 0.24, 0.35};
  int column = 0;
  for (double x : {-6.0, -2.0, 2.0, 6.0}) {
    for (double y : {-0.75, 0.75}) {
      Eigen::VectorXd mu(2);
      mu << x, y;
      means.push_back(mu);
      covs.push_back(cov);
      weights.push_back(pair_weight[column] / 2.0);
    }
    ++column;
  }
  return make_mixture(means, covs, weights);
}

namespace {

// Stage tags for child-seed derivation.
enum : std::uint64_t {
  kStageGroundSample = 1,
  kStageTeacherFit = 2,
  kStageTemperedSample = 3,
  kStageDistilledFit = 4,
  kStageDirectFit = 5,
};

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("run_pipeline stage '") + name +
                             "': " + e.what());
  }
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, PipelineSeeds seeds) {
  if (cfg.n_teacher_train < 1 || cfg.n_student_train < 1)
    throw std::invalid_argument("run_pipeline: sample counts must be >= 1");
  if (!(cfg.epsilon > 0.0 && cfg.epsilon < 1.0))
    throw std::invalid_argument("run_pipeline: epsilon must be in (0, 1)");
  if (!(cfg.k_student <= cfg.k_teacher &&
        cfg.k_teacher <= cfg.ground_truth.size()))
    std::clog << "run_pipeline: capacities not ordered k_student <= k_teacher"
                 " <= K (k_student=" << cfg.k_student
              << ", k_teacher=" << cfg.k_teacher
              << ", K=" << cfg.ground_truth.size() << ")\n";

  const Dataset train = stage("ground_sample", [&] {
    return sample(cfg.ground_truth, cfg.n_teacher_train,
                  derive_seed(seeds.teacher_stage, {kStageGroundSample}));
  });

  FitConfig teacher_fit = cfg.fit;
  teacher_fit.seed = derive_seed(seeds.teacher_stage, {kStageTeacherFit});
  const GaussianMixture teacher = stage(
      "teacher_fit", [&] { return fit_em(train, cfg.k_teacher, teacher_fit); });

  TemperedWeights tempered = temper_weights(teacher.weights(), cfg.beta);
  const GaussianMixture tempered_teacher =
      teacher.with_weights(tempered.tempered);

  const Dataset distill_train = stage("tempered_sample", [&] {
    return sample(tempered_teacher, cfg.n_student_train,
                  derive_seed(seeds.student_stage, {kStageTemperedSample}));
  });

  FitConfig distilled_fit = cfg.fit;
  distilled_fit.seed = derive_seed(seeds.student_stage, {kStageDistilledFit});
  const GaussianMixture student_distilled = stage("distilled_fit", [&] {
    return fit_em(distill_train, cfg.k_student, distilled_fit);
  });

  FitConfig direct_fit = cfg.fit;
  direct_fit.seed = derive_seed(seeds.student_stage, {kStageDirectFit});
  const GaussianMixture student_direct = stage(
      "direct_fit", [&] { return fit_em(train, cfg.k_student, direct_fit); });

  ComponentMapping sigma = component_mapping(cfg.ground_truth, teacher);
  const int diff =
      difficulty(cfg.k_student, tempered.tempered, sigma, cfg.epsilon);

  return PipelineResult{teacher,        tempered_teacher, student_distilled,
                        student_direct, std::move(tempered), std::move(sigma),
                        diff};
}

ComponentMapping component_mapping(const GaussianMixture& ground,
                                   const GaussianMixture& teacher) {
  if (ground.dim() != teacher.dim())
    throw std::invalid_argument("component_mapping: dimension mismatch");
  ComponentMapping sigma;
  sigma.assignment.resize(teacher.size());
  for (int k = 0; k < ground.size(); ++k) {
    const Eigen::VectorXd& mu = ground.component(k).mean();
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < teacher.size(); ++j) {
      const double score =
          teacher.log_weights()[j] + teacher.component(j).log_pdf(mu);
      if (score > best_score) {
        best_score = score;
        best = j;
      }
    }
    sigma.assignment[best].push_back(k);
  }
  return sigma;
}

std::vector<int> active_components(std::span<const double> w, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::invalid_argument("active_components: epsilon must be in (0, 1)");
  std::vector<int> active;
  for (std::size_t k = 0; k < w.size(); ++k)
    if (w[k] >= 1.0 - epsilon) active.push_back(static_cast<int>(k));
  return active;
}

int difficulty(int k_student, std::span<const double> w_tempered,
               const ComponentMapping& sigma, double epsilon) {
  std::vector<int> covered;
  for (int k : active_components(w_tempered, epsilon)) {
    const auto& assigned = sigma.assignment.at(k);
    covered.insert(covered.end(), assigned.begin(), assigned.end());
  }
  std::sort(covered.begin(), covered.end());
  covered.erase(std::unique(covered.begin(), covered.end()), covered.end());
  return k_student - static_cast<int>(covered.size());
}

}  // namespace distill
