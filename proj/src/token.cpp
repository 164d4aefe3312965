#include "distill/token.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "distill/numerics.hpp"
#include "distill/rng.hpp"
#include "distill/simd/kernels.hpp"

namespace distill {

namespace {

void check_prob_rows(const std::vector<double>& rows, std::size_t n_rows,
                     std::size_t width, const char* what) {
  if (rows.size() != n_rows * width)
    throw std::invalid_argument(std::string(what) + ": wrong shape");
  for (std::size_t r = 0; r < n_rows; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double p = rows[r * width + j];
      if (p < 0.0)
        throw std::invalid_argument(std::string(what) + ": negative entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument(std::string(what) +
                                  ": row does not sum to 1");
  }
}

void normalize_rows(std::vector<double>& rows, std::size_t n_rows,
                    std::size_t width) {
  for (std::size_t r = 0; r < n_rows; ++r) {
    const double sum =
        simd::reduce_sum(rows.data() + r * width, width);
    for (std::size_t j = 0; j < width; ++j) rows[r * width + j] /= sum;
  }
}

struct CdfTable {
  int v;
  std::vector<double> start_cdf;
  std::vector<double> row_cdfs;  // V x V
};

CdfTable build_cdf(int v, const std::vector<double>& start,
                   const std::vector<double>& transitions) {
  CdfTable t;
  t.v = v;
  t.start_cdf = cumulative(start);
  t.row_cdfs.resize(transitions.size());
  for (int i = 0; i < v; ++i) {
    double acc = 0.0;
    for (int j = 0; j < v; ++j) {
      acc += transitions[static_cast<std::size_t>(i) * v + j];
      t.row_cdfs[static_cast<std::size_t>(i) * v + j] = acc;
    }
    t.row_cdfs[static_cast<std::size_t>(i) * v + v - 1] = 1.0;
  }
  return t;
}

SequenceDataset sample_from_cdf(const CdfTable& cdf, int n, int t,
                                std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_sequences: n must be >= 1");
  if (t < 2) throw std::invalid_argument("sample_sequences: t must be >= 2");
  SequenceDataset data;
  data.n_sequences = n;
  data.seq_len = t;
  data.tokens.resize(static_cast<std::size_t>(n) * t);
  Rng rng(seed);
  const int v = cdf.v;
  for (int s = 0; s < n; ++s) {
    std::int32_t* row = data.tokens.data() + static_cast<std::size_t>(s) * t;
    row[0] = static_cast<std::int32_t>(
        draw_from_cdf(cdf.start_cdf, rng.uniform()));
    for (int i = 1; i < t; ++i) {
      const std::int32_t prev = row[i - 1];
      const std::span<const double> row_cdf{
          cdf.row_cdfs.data() + static_cast<std::size_t>(prev) * v,
          static_cast<std::size_t>(v)};
      row[i] = static_cast<std::int32_t>(draw_from_cdf(row_cdf, rng.uniform()));
    }
  }
  return data;
}

// Clamped log-probabilities for batch scoring: V start entries followed by
// V*V transition entries, so one gather table covers a whole sequence.
struct ScoreTable {
  int v;
  double floor;
  std::vector<double> log_probs;     // clamped at floor
  std::vector<std::uint8_t> clamped;  // 1 where the raw value was below floor
  std::int64_t n_clamped_entries = 0;
};

ScoreTable build_score_table(int v, const std::vector<double>& start,
                             const std::vector<double>& transitions,
                             double floor) {
  ScoreTable st;
  st.v = v;
  st.floor = floor;
  const std::size_t total = start.size() + transitions.size();
  st.log_probs.resize(total);
  st.clamped.assign(total, 0);
  auto fill = [&](const std::vector<double>& p, std::size_t offset) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double lp = std::log(p[i]);
      if (lp < floor) {
        st.log_probs[offset + i] = floor;
        st.clamped[offset + i] = 1;
        ++st.n_clamped_entries;
      } else {
        st.log_probs[offset + i] = lp;
      }
    }
  };
  fill(start, 0);
  fill(transitions, start.size());
  return st;
}

ScoreTable build_score_table(const MarkovModel& m, double floor) {
  return build_score_table(m.vocab_size, m.start, m.transitions, floor);
}

ScoreTable build_score_table(const LowRankMarkov& m, double floor) {
  return build_score_table(m.vocab_size, m.start, m.implied_transitions(),
                           floor);
}

// Total log-likelihood per sequence. Returns the number of clamped steps.
std::int64_t score_batch(const ScoreTable& st, const SequenceDataset& data,
                         std::vector<double>& out) {
  const int n = data.n_sequences;
  const int t = data.seq_len;
  const int v = st.v;
  out.resize(n);

  std::vector<std::int32_t> idx(static_cast<std::size_t>(n) * t);
  for (int s = 0; s < n; ++s) {
    const std::int32_t* seq =
        data.tokens.data() + static_cast<std::size_t>(s) * t;
    std::int32_t* row = idx.data() + static_cast<std::size_t>(s) * t;
    row[0] = seq[0];
    for (int i = 1; i < t; ++i) row[i] = v + seq[i - 1] * v + seq[i];
  }
  simd::gather_sum_rows(st.log_probs.data(), idx.data(), n, t, out.data());

  if (st.n_clamped_entries == 0) return 0;
  std::int64_t clamps = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) clamps += st.clamped[idx[i]];
  return clamps;
}

std::vector<double> dirichlet_row(Rng& rng, int width, double concentration) {
  std::vector<double> row(width);
  double sum = 0.0;
  for (int j = 0; j < width; ++j) {
    row[j] = rng.gamma(concentration);
    sum += row[j];
  }
  for (double& p : row) p /= sum;
  return row;
}

}  // namespace

std::vector<double> LowRankMarkov::implied_transitions() const {
  const int v = vocab_size;
  const int r = rank;
  std::vector<double> out(static_cast<std::size_t>(v) * v, 0.0);
  for (int i = 0; i < v; ++i)
    for (int z = 0; z < r; ++z) {
      const double p = prev_to_latent[static_cast<std::size_t>(i) * r + z];
      if (p == 0.0) continue;
      const double* qrow = latent_to_next.data() + static_cast<std::size_t>(z) * v;
      double* orow = out.data() + static_cast<std::size_t>(i) * v;
      for (int j = 0; j < v; ++j) orow[j] += p * qrow[j];
    }
  return out;
}

MarkovModel make_ground_truth(int v, double concentration,
                              std::uint64_t seed) {
  if (v < 2) throw std::invalid_argument("make_ground_truth: need v >= 2");
  if (!(concentration > 0.0))
    throw std::invalid_argument("make_ground_truth: concentration must be > 0");
  Rng rng(seed);
  MarkovModel m;
  m.vocab_size = v;
  m.start = dirichlet_row(rng, v, concentration);
  m.transitions.reserve(static_cast<std::size_t>(v) * v);
  for (int i = 0; i < v; ++i) {
    const std::vector<double> row = dirichlet_row(rng, v, concentration);
    m.transitions.insert(m.transitions.end(), row.begin(), row.end());
  }
  return m;
}

SequenceDataset sample_sequences(const MarkovModel& m, int n, int t,
                                 std::uint64_t seed) {
  return sample_from_cdf(build_cdf(m.vocab_size, m.start, m.transitions), n, t,
                         seed);
}

SequenceDataset sample_sequences(const LowRankMarkov& m, int n, int t,
                                 std::uint64_t seed) {
  return sample_from_cdf(
      build_cdf(m.vocab_size, m.start, m.implied_transitions()), n, t, seed);
}

MarkovModel temper_markov(const MarkovModel& m, double tau) {
  if (!(tau > 0.0 && tau <= 1.0))
    throw std::invalid_argument("temper_markov: tau must be in (0, 1]");
  if (tau == 1.0) return m;
  for (double p : m.start)
    if (!(p > 0.0))
      throw std::invalid_argument(
          "temper_markov: zero probability with tau < 1; smooth the model first");
  for (double p : m.transitions)
    if (!(p > 0.0))
      throw std::invalid_argument(
          "temper_markov: zero probability with tau < 1; smooth the model first");

  const double inv_tau = 1.0 / tau;
  auto temper_row = [&](const double* p, double* out, int width) {
    std::vector<double> lw(width);
    for (int j = 0; j < width; ++j) lw[j] = inv_tau * std::log(p[j]);
    const double lse = log_sum_exp(lw);
    double sum = 0.0;
    for (int j = 0; j < width; ++j) {
      out[j] = std::exp(lw[j] - lse);
      sum += out[j];
    }
    for (int j = 0; j < width; ++j) out[j] /= sum;
  };

  MarkovModel out;
  out.vocab_size = m.vocab_size;
  out.start.resize(m.start.size());
  out.transitions.resize(m.transitions.size());
  const int v = m.vocab_size;
  temper_row(m.start.data(), out.start.data(), v);
  for (int i = 0; i < v; ++i)
    temper_row(m.transitions.data() + static_cast<std::size_t>(i) * v,
               out.transitions.data() + static_cast<std::size_t>(i) * v, v);
  return out;
}

MarkovModel fit_markov(const SequenceDataset& data, int v, double delta) {
  if (data.n_sequences < 1 || data.tokens.empty())
    throw std::invalid_argument("fit_markov: empty dataset");
  if (delta < 0.0)
    throw std::invalid_argument("fit_markov: delta must be >= 0");
  for (std::int32_t tok : data.tokens)
    if (tok < 0 || tok >= v)
      throw std::invalid_argument(
          "fit_markov: token index out of range for vocab size");

  std::vector<double> counts(static_cast<std::size_t>(v) * v, 0.0);
  std::vector<double> start_counts(v, 0.0);
  for (int s = 0; s < data.n_sequences; ++s) {
    const auto seq = data.row(s);
    start_counts[seq[0]] += 1.0;
    for (std::size_t i = 1; i < seq.size(); ++i)
      counts[static_cast<std::size_t>(seq[i - 1]) * v + seq[i]] += 1.0;
  }

  MarkovModel m;
  m.vocab_size = v;
  m.start.resize(v);
  m.transitions.resize(static_cast<std::size_t>(v) * v);
  const double start_total =
      static_cast<double>(data.n_sequences) + delta * v;
  for (int j = 0; j < v; ++j)
    m.start[j] = (start_counts[j] + delta) / start_total;
  for (int i = 0; i < v; ++i) {
    const double row_total =
        simd::reduce_sum(counts.data() + static_cast<std::size_t>(i) * v, v);
    const double denom = row_total + delta * v;
    double* row = m.transitions.data() + static_cast<std::size_t>(i) * v;
    if (denom == 0.0) {
      // unseen previous token and no smoothing: fall back to uniform
      std::fill(row, row + v, 1.0 / v);
      continue;
    }
    for (int j = 0; j < v; ++j)
      row[j] = (counts[static_cast<std::size_t>(i) * v + j] + delta) / denom;
  }
  return m;
}

namespace {

LowRankMarkov run_lowrank_em(const SequenceDataset& data, int v,
                             const TokenFitConfig& cfg,
                             std::vector<double> p_init,
                             std::vector<double> q_init,
                             TokenFitReport* report) {
  const int r = cfg.rank;

  // bigram counts
  std::vector<double> counts(static_cast<std::size_t>(v) * v, 0.0);
  std::vector<double> start_counts(v, 0.0);
  double total = 0.0;
  for (int s = 0; s < data.n_sequences; ++s) {
    const auto seq = data.row(s);
    start_counts[seq[0]] += 1.0;
    for (std::size_t i = 1; i < seq.size(); ++i) {
      counts[static_cast<std::size_t>(seq[i - 1]) * v + seq[i]] += 1.0;
      total += 1.0;
    }
  }

  std::vector<double> p = std::move(p_init);  // V x r
  std::vector<double> q = std::move(q_init);  // r x V
  Rng rng(derive_seed(cfg.seed, {0x4c52454dULL}));  // reseed stream

  std::vector<double> a(p.size());
  std::vector<double> b(q.size());
  std::vector<double> post(r);
  std::vector<double> trace;
  double prev_ll = -std::numeric_limits<double>::infinity();
  int reseeds = 0;

  for (int iter = 0; iter < cfg.em_max_iter; ++iter) {
    std::fill(a.begin(), a.end(), 0.0);
    std::fill(b.begin(), b.end(), 0.0);
    double ll = 0.0;
    for (int i = 0; i < v; ++i) {
      const double* prow = p.data() + static_cast<std::size_t>(i) * r;
      for (int j = 0; j < v; ++j) {
        const double c = counts[static_cast<std::size_t>(i) * v + j];
        if (c == 0.0) continue;
        double s = 0.0;
        for (int z = 0; z < r; ++z) {
          post[z] = prow[z] * q[static_cast<std::size_t>(z) * v + j];
          s += post[z];
        }
        ll += c * std::log(std::max(s, 1e-300));
        const double scale = c / std::max(s, 1e-300);
        for (int z = 0; z < r; ++z) {
          const double w = post[z] * scale;
          a[static_cast<std::size_t>(i) * r + z] += w;
          b[static_cast<std::size_t>(z) * v + j] += w;
        }
      }
    }
    ll /= total;
    trace.push_back(ll);

    // M-step
    for (int i = 0; i < v; ++i) {
      double* arow = a.data() + static_cast<std::size_t>(i) * r;
      const double rs = simd::reduce_sum(arow, r);
      if (rs <= 0.0) continue;  // unseen previous token; keep current row
      double* prow = p.data() + static_cast<std::size_t>(i) * r;
      for (int z = 0; z < r; ++z) prow[z] = arow[z] / rs;
    }
    for (int z = 0; z < r; ++z) {
      double* brow = b.data() + static_cast<std::size_t>(z) * v;
      const double usage = simd::reduce_sum(brow, v);
      double* qrow = q.data() + static_cast<std::size_t>(z) * v;
      if (usage < 1e-8) {
        const std::vector<double> fresh = dirichlet_row(rng, v, 1.0);
        std::copy(fresh.begin(), fresh.end(), qrow);
        for (int i = 0; i < v; ++i)
          p[static_cast<std::size_t>(i) * r + z] =
              std::max(p[static_cast<std::size_t>(i) * r + z], 1e-3 / r);
        normalize_rows(p, v, r);
        ++reseeds;
        std::clog << "fit_lowrank_em: latent state " << z
                  << " unused; re-seeded\n";
        continue;
      }
      for (int j = 0; j < v; ++j) qrow[j] = brow[j] / usage;
    }

    if (iter > 0 && std::abs(ll - prev_ll) < cfg.em_tol) break;
    prev_ll = ll;
  }

  LowRankMarkov model;
  model.vocab_size = v;
  model.rank = r;
  model.prev_to_latent = std::move(p);
  model.latent_to_next = std::move(q);
  model.start.resize(v);
  const double delta = cfg.smoothing_delta;
  const double start_total = static_cast<double>(data.n_sequences) + delta * v;
  for (int j = 0; j < v; ++j)
    model.start[j] = (start_counts[j] + delta) / start_total;

  if (report != nullptr) {
    report->loglik_trace = std::move(trace);
    report->iterations = static_cast<int>(report->loglik_trace.size());
    report->reseed_events = reseeds;
  }
  return model;
}

}  // namespace

LowRankMarkov fit_lowrank_em(const SequenceDataset& data, int v,
                             const TokenFitConfig& cfg,
                             TokenFitReport* report) {
  if (data.n_sequences < 1)
    throw std::invalid_argument("fit_lowrank_em: empty dataset");
  if (cfg.rank < 1 || cfg.rank > v)
    throw std::invalid_argument("fit_lowrank_em: rank must be in [1, v]");
  if (cfg.em_max_iter < 1)
    throw std::invalid_argument("fit_lowrank_em: em_max_iter must be >= 1");
  Rng rng(derive_seed(cfg.seed, {0x494e4954ULL}));
  std::vector<double> p(static_cast<std::size_t>(v) * cfg.rank);
  std::vector<double> q(static_cast<std::size_t>(cfg.rank) * v);
  for (int i = 0; i < v; ++i) {
    const auto row = dirichlet_row(rng, cfg.rank, 1.0);
    std::copy(row.begin(), row.end(),
              p.begin() + static_cast<std::size_t>(i) * cfg.rank);
  }
  for (int z = 0; z < cfg.rank; ++z) {
    const auto row = dirichlet_row(rng, v, 1.0);
    std::copy(row.begin(), row.end(),
              q.begin() + static_cast<std::size_t>(z) * v);
  }
  return run_lowrank_em(data, v, cfg, std::move(p), std::move(q), report);
}

LowRankMarkov fit_lowrank_em(const SequenceDataset& data, int v,
                             const TokenFitConfig& cfg,
                             const std::vector<double>& init_prev_to_latent,
                             const std::vector<double>& init_latent_to_next,
                             TokenFitReport* report) {
  if (data.n_sequences < 1)
    throw std::invalid_argument("fit_lowrank_em: empty dataset");
  if (cfg.rank < 1 || cfg.rank > v)
    throw std::invalid_argument("fit_lowrank_em: rank must be in [1, v]");
  check_prob_rows(init_prev_to_latent, v, cfg.rank,
                  "fit_lowrank_em: init_prev_to_latent");
  check_prob_rows(init_latent_to_next, cfg.rank, v,
                  "fit_lowrank_em: init_latent_to_next");
  return run_lowrank_em(data, v, cfg, init_prev_to_latent, init_latent_to_next,
                        report);
}

namespace {

double seq_ll_from_table(const ScoreTable& st,
                         std::span<const std::int32_t> seq, int* clamp_steps) {
  const int v = st.v;
  double ll = st.log_probs[seq[0]];
  int clamps = st.clamped[seq[0]];
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const std::size_t idx = v + static_cast<std::size_t>(seq[i - 1]) * v + seq[i];
    ll += st.log_probs[idx];
    clamps += st.clamped[idx];
  }
  if (clamp_steps != nullptr) *clamp_steps = clamps;
  return ll;
}

void check_tokens(int v, std::span<const std::int32_t> seq) {
  if (seq.empty()) throw std::invalid_argument("seq_log_likelihood: empty sequence");
  for (std::int32_t tok : seq)
    if (tok < 0 || tok >= v)
      throw std::invalid_argument("seq_log_likelihood: token out of range");
}

}  // namespace

double seq_log_likelihood(const MarkovModel& m,
                          std::span<const std::int32_t> seq,
                          double clamp_floor, int* clamp_steps) {
  check_tokens(m.vocab_size, seq);
  return seq_ll_from_table(build_score_table(m, clamp_floor), seq, clamp_steps);
}

double seq_log_likelihood(const LowRankMarkov& m,
                          std::span<const std::int32_t> seq,
                          double clamp_floor, int* clamp_steps) {
  check_tokens(m.vocab_size, seq);
  return seq_ll_from_table(build_score_table(m, clamp_floor), seq, clamp_steps);
}

namespace {

template <typename SamplerModel, typename ScorerModel>
MetricEstimate sample_and_score(const SamplerModel& sampler,
                                const ScorerModel& scorer, int n, int t,
                                std::uint64_t seed, double clamp_floor) {
  if (sampler.vocab_size != scorer.vocab_size)
    throw std::invalid_argument("token metrics: vocab size mismatch");
  if (n < 2) throw std::invalid_argument("token metrics: need n >= 2");
  const SequenceDataset data = sample_sequences(sampler, n, t, seed);
  const ScoreTable st = build_score_table(scorer, clamp_floor);
  std::vector<double> totals;
  const std::int64_t clamps = score_batch(st, data, totals);
  for (double& x : totals) x /= static_cast<double>(t);
  const MeanAndSe ms = mean_and_se(totals);
  return {ms.mean, ms.std_error, n, clamps};
}

}  // namespace

template <typename StudentModel, typename GroundModel>
MetricEstimate token_precision(const StudentModel& student,
                               const GroundModel& ground, int n, int t,
                               std::uint64_t seed, double clamp_floor) {
  return sample_and_score(student, ground, n, t, seed, clamp_floor);
}

template <typename StudentModel, typename GroundModel>
MetricEstimate token_recall(const StudentModel& student,
                            const GroundModel& ground, int n, int t,
                            std::uint64_t seed, double clamp_floor) {
  return sample_and_score(ground, student, n, t, seed, clamp_floor);
}

template MetricEstimate token_precision<MarkovModel, MarkovModel>(
    const MarkovModel&, const MarkovModel&, int, int, std::uint64_t, double);
template MetricEstimate token_precision<LowRankMarkov, MarkovModel>(
    const LowRankMarkov&, const MarkovModel&, int, int, std::uint64_t, double);
template MetricEstimate token_precision<MarkovModel, LowRankMarkov>(
    const MarkovModel&, const LowRankMarkov&, int, int, std::uint64_t, double);
template MetricEstimate token_precision<LowRankMarkov, LowRankMarkov>(
    const LowRankMarkov&, const LowRankMarkov&, int, int, std::uint64_t,
    double);
template MetricEstimate token_recall<MarkovModel, MarkovModel>(
    const MarkovModel&, const MarkovModel&, int, int, std::uint64_t, double);
template MetricEstimate token_recall<LowRankMarkov, MarkovModel>(
    const LowRankMarkov&, const MarkovModel&, int, int, std::uint64_t, double);
template MetricEstimate token_recall<MarkovModel, LowRankMarkov>(
    const MarkovModel&, const LowRankMarkov&, int, int, std::uint64_t, double);
template MetricEstimate token_recall<LowRankMarkov, LowRankMarkov>(
    const LowRankMarkov&, const LowRankMarkov&, int, int, std::uint64_t,
    double);

double mean_row_entropy(const MarkovModel& m) {
  const int v = m.vocab_size;
  double h = 0.0;
  for (int i = 0; i < v; ++i)
    h += entropy_nats(
        {m.transitions.data() + static_cast<std::size_t>(i) * v,
         static_cast<std::size_t>(v)});
  return h / v;
}

}  // namespace distill
