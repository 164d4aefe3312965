#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "distill/gmm.hpp"

namespace distill {

// The default ground truth: eight well-separated modes on a 4 x 2 grid,
// means at x in {-6, -2, 2, 6} times y in {-0.75, 0.75}, covariance 0.1*I.
// Each column forms a close pair that a 4-component teacher reliably covers
// with one Gaussian; the per-column weights {0.15, 0.26, 0.24, 0.35} (split
// evenly within a pair) keep the teacher's argmax weight decisively apart
// from the runner-up, so sharpening the weights selects a single component.
GaussianMixture default_grid_ground_truth();

struct PipelineConfig {
  GaussianMixture ground_truth = default_grid_ground_truth();
  int n_teacher_train = 10000;
  int k_teacher = 4;
  int n_student_train = 10000;
  int k_student = 1;
  double beta = 100.0;
  FitConfig fit;
  double epsilon = 0.1;  // active-component threshold, weight >= 1 - epsilon
};

// assignment[k'] lists the ground-truth component indices covered by teacher
// component k'; together the lists partition the ground-truth indices.
struct ComponentMapping {
  std::vector<std::vector<int>> assignment;
};

struct PipelineResult {
  GaussianMixture teacher;
  GaussianMixture tempered_teacher;  // same components, tempered weights
  GaussianMixture student_distilled;
  GaussianMixture student_direct;
  TemperedWeights tempered_weights;
  ComponentMapping sigma;
  int difficulty = 0;
};

// Seeds for the two halves of the chain. Keeping them separate lets a sweep
// hold the ground-truth draw and the teacher fixed per seed while varying
// beta, mirroring the one-teacher many-temperatures protocol.
struct PipelineSeeds {
  std::uint64_t teacher_stage;  // ground-truth sampling + teacher fit
  std::uint64_t student_stage;  // tempered sampling + both student fits
};

PipelineResult run_pipeline(const PipelineConfig& cfg, PipelineSeeds seeds);

inline PipelineResult run_pipeline(const PipelineConfig& cfg,
                                   std::uint64_t master_seed) {
  return run_pipeline(cfg, PipelineSeeds{master_seed, master_seed});
}

// Assigns each ground-truth component to the teacher component with the
// highest posterior responsibility at the ground-truth mean; ties go to the
// lowest teacher index.
ComponentMapping component_mapping(const GaussianMixture& ground,
                                   const GaussianMixture& teacher);

// Indices k with w[k] >= 1 - epsilon, ascending.
std::vector<int> active_components(std::span<const double> w, double epsilon);

// k_student minus the number of ground-truth components covered by active
// teacher components.
int difficulty(int k_student, std::span<const double> w_tempered,
               const ComponentMapping& sigma, double epsilon);

}  // namespace distill
