#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "distill/metrics.hpp"

// Desk-scale categorical mirror of the LLM experiment: an order-1 Markov
// ground truth over a small vocabulary, a smoothed bigram teacher sampled at
// temperature tau, and a rank-constrained (aggregate Markov) student.

namespace distill {

struct MarkovModel {
  int vocab_size = 0;
  std::vector<double> start;        // V
  std::vector<double> transitions;  // V x V row-major, rows = previous token

  double transition(int prev, int next) const {
    return transitions[static_cast<std::size_t>(prev) * vocab_size + next];
  }
};

// p(next | prev) = sum_z p(z | prev) p(next | z) with r latent states; the
// implied transition matrix has rank at most r.
struct LowRankMarkov {
  int vocab_size = 0;
  int rank = 0;
  std::vector<double> start;           // V
  std::vector<double> prev_to_latent;  // V x r row-stochastic
  std::vector<double> latent_to_next;  // r x V row-stochastic

  std::vector<double> implied_transitions() const;  // V x V row-major
};

// Fixed-length token sequences stored contiguously, one row per sequence.
struct SequenceDataset {
  std::vector<std::int32_t> tokens;
  int n_sequences = 0;
  int seq_len = 0;

  std::span<const std::int32_t> row(int i) const {
    return {tokens.data() + static_cast<std::size_t>(i) * seq_len,
            static_cast<std::size_t>(seq_len)};
  }
};

struct TokenFitConfig {
  double smoothing_delta = 0.01;
  int rank = 8;
  int em_max_iter = 200;
  double em_tol = 1e-7;  // nats per transition, change in training likelihood
  std::uint64_t seed = 0;
};

struct TokenFitReport {
  std::vector<double> loglik_trace;  // mean log-likelihood per transition
  int iterations = 0;
  int reseed_events = 0;
};

// Start vector and every transition row drawn from Dirichlet(concentration);
// small concentrations give peaky, well-separated rows.
MarkovModel make_ground_truth(int v, double concentration, std::uint64_t seed);

SequenceDataset sample_sequences(const MarkovModel& m, int n, int t,
                                 std::uint64_t seed);
SequenceDataset sample_sequences(const LowRankMarkov& m, int n, int t,
                                 std::uint64_t seed);

// Escort transform of every row (and the start vector): p^(1/tau),
// renormalized. tau = 1 returns the model unchanged; tau < 1 requires a
// smoothed (strictly positive) model.
MarkovModel temper_markov(const MarkovModel& m, double tau);

// Add-delta-smoothed bigram counts.
MarkovModel fit_markov(const SequenceDataset& data, int v, double delta);

LowRankMarkov fit_lowrank_em(const SequenceDataset& data, int v,
                             const TokenFitConfig& cfg,
                             TokenFitReport* report = nullptr);

// Variant with explicit initial factors (V x r and r x V row-stochastic);
// used to hand the EM a head start.
LowRankMarkov fit_lowrank_em(const SequenceDataset& data, int v,
                             const TokenFitConfig& cfg,
                             const std::vector<double>& init_prev_to_latent,
                             const std::vector<double>& init_latent_to_next,
                             TokenFitReport* report = nullptr);

// log start[s0] + sum_t log p(s_t | s_{t-1}); impossible steps contribute the
// clamp floor each and are counted into *clamp_steps when given.
double seq_log_likelihood(const MarkovModel& m,
                          std::span<const std::int32_t> seq,
                          double clamp_floor = kDefaultScoreFloor,
                          int* clamp_steps = nullptr);
double seq_log_likelihood(const LowRankMarkov& m,
                          std::span<const std::int32_t> seq,
                          double clamp_floor = kDefaultScoreFloor,
                          int* clamp_steps = nullptr);

// Per-token precision/recall: mean per-token log-likelihood of sequences
// sampled from one model and scored under the other, with standard errors
// over sequences. Student samples are always drawn at temperature 1.
template <typename StudentModel, typename GroundModel>
MetricEstimate token_precision(const StudentModel& student,
                               const GroundModel& ground, int n, int t,
                               std::uint64_t seed,
                               double clamp_floor = kDefaultScoreFloor);
template <typename StudentModel, typename GroundModel>
MetricEstimate token_recall(const StudentModel& student,
                            const GroundModel& ground, int n, int t,
                            std::uint64_t seed,
                            double clamp_floor = kDefaultScoreFloor);

// Mean Shannon entropy of the transition rows, in nats.
double mean_row_entropy(const MarkovModel& m);

}  // namespace distill
