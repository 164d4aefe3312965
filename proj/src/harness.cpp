#include "distill/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "distill/rng.hpp"

namespace distill {

namespace {

using nlohmann::json;

// Salts for child-seed derivation. The ground-truth draw and the teacher fit
// depend only on the seed index, so one teacher serves every knob value of a
// sweep (one teacher, many temperatures); everything downstream of the knob
// also mixes in the knob index.
enum : std::uint64_t {
  kSaltTeacherStage = 0x11,
  kSaltStudentStage = 0x12,
  kSaltPrecision = 0x13,
  kSaltRecall = 0x14,
  kSaltTokenGround = 0x21,
  kSaltTokenData = 0x22,
  kSaltTokenDistillData = 0x23,
  kSaltTokenStudent = 0x24,
};

}  // namespace

const char* kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::gmm_repro: return "gmm-repro";
    case ExperimentKind::beta_sweep: return "beta-sweep";
    case ExperimentKind::token_sweep: return "token-sweep";
    case ExperimentKind::density_export: return "density-export";
  }
  return "unknown";
}

ExperimentKind kind_from_name(const std::string& name) {
  if (name == "gmm-repro") return ExperimentKind::gmm_repro;
  if (name == "beta-sweep") return ExperimentKind::beta_sweep;
  if (name == "token-sweep") return ExperimentKind::token_sweep;
  if (name == "density-export") return ExperimentKind::density_export;
  throw std::invalid_argument("unknown experiment kind '" + name + "'");
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig cfg;
  cfg.kind = kind;
  // A single-component student cannot track a mildly sharpened teacher (its
  // maximum-likelihood fit bridges the still-active distant components), so
  // the sweep over intermediate beta values gives it two components; the
  // section-3.2 reproduction keeps the paper's single-Gaussian student.
  if (kind == ExperimentKind::beta_sweep) cfg.pipeline.k_student = 2;
  return cfg;
}

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw std::invalid_argument("config field '" + field + "': " + why);
}

void require_keys(const json& obj, const std::string& where,
                  std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw std::invalid_argument("unknown config key '" +
                                  (where.empty() ? it.key() : where + "." + it.key()) +
                                  "'");
  }
}

template <typename T>
void read_field(const json& obj, const std::string& where, const char* key,
                T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    bad_field(where.empty() ? key : where + "." + key, "wrong type");
  }
}

GaussianMixture parse_ground_truth(const json& obj) {
  require_keys(obj, "pipeline.ground_truth", {"weights", "means", "covariances"});
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<std::vector<double>>> covs;
  read_field(obj, "pipeline.ground_truth", "weights", weights);
  read_field(obj, "pipeline.ground_truth", "means", means);
  read_field(obj, "pipeline.ground_truth", "covariances", covs);
  if (weights.empty() || means.size() != weights.size() ||
      covs.size() != weights.size())
    bad_field("pipeline.ground_truth",
              "weights, means and covariances must have equal nonzero length");
  std::vector<Eigen::VectorXd> mu(weights.size());
  std::vector<Eigen::MatrixXd> sigma(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const auto d = means[k].size();
    mu[k] = Eigen::Map<const Eigen::VectorXd>(means[k].data(), d);
    if (covs[k].size() != d) bad_field("pipeline.ground_truth.covariances", "shape");
    sigma[k].resize(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      if (covs[k][i].size() != d)
        bad_field("pipeline.ground_truth.covariances", "shape");
      for (std::size_t j = 0; j < d; ++j) sigma[k](i, j) = covs[k][i][j];
    }
  }
  try {
    return make_mixture(mu, sigma, weights);
  } catch (const std::exception& e) {
    bad_field("pipeline.ground_truth", e.what());
  }
}

ExperimentConfig parse_config_json(const json& root) {
  require_keys(root, "",
               {"kind", "master_seed", "seeds", "beta_list", "tau_list",
                "output_dir", "mc_samples", "clamp_floor", "pipeline", "token",
                "grid"});
  if (!root.contains("kind")) bad_field("kind", "missing");
  std::string kind_str;
  read_field(root, "", "kind", kind_str);
  ExperimentConfig cfg = default_config(kind_from_name(kind_str));

  read_field(root, "", "master_seed", cfg.master_seed);
  read_field(root, "", "seeds", cfg.seeds);
  read_field(root, "", "beta_list", cfg.beta_list);
  read_field(root, "", "tau_list", cfg.tau_list);
  read_field(root, "", "output_dir", cfg.output_dir);
  read_field(root, "", "mc_samples", cfg.mc_samples);
  read_field(root, "", "clamp_floor", cfg.clamp_floor);

  if (cfg.seeds < 1) bad_field("seeds", "must be >= 1");
  if (cfg.beta_list.empty()) bad_field("beta_list", "must be nonempty");
  for (double b : cfg.beta_list)
    if (!(b >= 1.0)) bad_field("beta_list", "entries must be >= 1");
  if (cfg.tau_list.empty()) bad_field("tau_list", "must be nonempty");
  for (double t : cfg.tau_list)
    if (!(t > 0.0 && t <= 1.0)) bad_field("tau_list", "entries must be in (0, 1]");
  if (cfg.mc_samples < 2) bad_field("mc_samples", "must be >= 2");

  if (root.contains("pipeline")) {
    const json& p = root.at("pipeline");
    require_keys(p, "pipeline",
                 {"ground_truth", "n_teacher_train", "k_teacher",
                  "n_student_train", "k_student", "beta", "epsilon", "fit"});
    if (p.contains("ground_truth"))
      cfg.pipeline.ground_truth = parse_ground_truth(p.at("ground_truth"));
    read_field(p, "pipeline", "n_teacher_train", cfg.pipeline.n_teacher_train);
    read_field(p, "pipeline", "k_teacher", cfg.pipeline.k_teacher);
    read_field(p, "pipeline", "n_student_train", cfg.pipeline.n_student_train);
    read_field(p, "pipeline", "k_student", cfg.pipeline.k_student);
    read_field(p, "pipeline", "beta", cfg.pipeline.beta);
    read_field(p, "pipeline", "epsilon", cfg.pipeline.epsilon);
    if (p.contains("fit")) {
      const json& f = p.at("fit");
      require_keys(f, "pipeline.fit",
                   {"max_iter", "tol", "reg_eps", "n_restarts"});
      read_field(f, "pipeline.fit", "max_iter", cfg.pipeline.fit.max_iter);
      read_field(f, "pipeline.fit", "tol", cfg.pipeline.fit.tol);
      read_field(f, "pipeline.fit", "reg_eps", cfg.pipeline.fit.reg_eps);
      read_field(f, "pipeline.fit", "n_restarts", cfg.pipeline.fit.n_restarts);
    }
    if (cfg.pipeline.n_teacher_train < 1)
      bad_field("pipeline.n_teacher_train", "must be >= 1");
    if (cfg.pipeline.n_student_train < 1)
      bad_field("pipeline.n_student_train", "must be >= 1");
    if (cfg.pipeline.k_teacher < 1) bad_field("pipeline.k_teacher", "must be >= 1");
    if (cfg.pipeline.k_student < 1) bad_field("pipeline.k_student", "must be >= 1");
    if (!(cfg.pipeline.beta >= 1.0)) bad_field("pipeline.beta", "must be >= 1");
    if (!(cfg.pipeline.epsilon > 0.0 && cfg.pipeline.epsilon < 1.0))
      bad_field("pipeline.epsilon", "must be in (0, 1)");
    if (cfg.pipeline.fit.max_iter < 1)
      bad_field("pipeline.fit.max_iter", "must be >= 1");
    if (!(cfg.pipeline.fit.tol > 0.0)) bad_field("pipeline.fit.tol", "must be > 0");
    if (!(cfg.pipeline.fit.reg_eps > 0.0))
      bad_field("pipeline.fit.reg_eps", "must be > 0");
    if (cfg.pipeline.fit.n_restarts < 1)
      bad_field("pipeline.fit.n_restarts", "must be >= 1");
  }

  if (root.contains("token")) {
    const json& t = root.at("token");
    require_keys(t, "token",
                 {"vocab_size", "seq_len", "n_train", "concentration",
                  "smoothing_delta", "rank", "em_max_iter", "em_tol"});
    read_field(t, "token", "vocab_size", cfg.token.vocab_size);
    read_field(t, "token", "seq_len", cfg.token.seq_len);
    read_field(t, "token", "n_train", cfg.token.n_train);
    read_field(t, "token", "concentration", cfg.token.concentration);
    read_field(t, "token", "smoothing_delta", cfg.token.fit.smoothing_delta);
    read_field(t, "token", "rank", cfg.token.fit.rank);
    read_field(t, "token", "em_max_iter", cfg.token.fit.em_max_iter);
    read_field(t, "token", "em_tol", cfg.token.fit.em_tol);
    if (cfg.token.vocab_size < 2) bad_field("token.vocab_size", "must be >= 2");
    if (cfg.token.seq_len < 2) bad_field("token.seq_len", "must be >= 2");
    if (cfg.token.n_train < 1) bad_field("token.n_train", "must be >= 1");
    if (!(cfg.token.concentration > 0.0))
      bad_field("token.concentration", "must be > 0");
    if (cfg.token.fit.smoothing_delta < 0.0)
      bad_field("token.smoothing_delta", "must be >= 0");
    if (cfg.token.fit.rank < 1 || cfg.token.fit.rank > cfg.token.vocab_size)
      bad_field("token.rank", "must be in [1, vocab_size]");
    if (cfg.token.fit.em_max_iter < 1)
      bad_field("token.em_max_iter", "must be >= 1");
    if (!(cfg.token.fit.em_tol > 0.0)) bad_field("token.em_tol", "must be > 0");
  }

  if (root.contains("grid")) {
    const json& g = root.at("grid");
    require_keys(g, "grid", {"x_lo", "x_hi", "x_steps", "y_lo", "y_hi", "y_steps"});
    read_field(g, "grid", "x_lo", cfg.grid.x.lo);
    read_field(g, "grid", "x_hi", cfg.grid.x.hi);
    read_field(g, "grid", "x_steps", cfg.grid.x.steps);
    read_field(g, "grid", "y_lo", cfg.grid.y.lo);
    read_field(g, "grid", "y_hi", cfg.grid.y.hi);
    read_field(g, "grid", "y_steps", cfg.grid.y.steps);
    if (cfg.grid.x.steps < 2 || cfg.grid.y.steps < 2)
      bad_field("grid", "steps must be >= 2");
  }

  return cfg;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(origin + ": " + e.what());
  }
  if (!root.is_object())
    throw std::invalid_argument(origin + ": top level must be an object");
  return parse_config_json(root);
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str(), path);
}

std::string config_defaults_help() {
  return
      "Config file keys (JSON object; unknown keys are rejected):\n"
      "  kind                     experiment kind; must match the subcommand\n"
      "  master_seed              root seed for all derived streams (default 1)\n"
      "  seeds                    number of seed repetitions (default 5)\n"
      "  beta_list                beta values for beta-sweep (default [1,2,5,10,100])\n"
      "  tau_list                 tau values for token-sweep (default [0.8,0.875,0.95,1.0])\n"
      "  output_dir               where CSV/grid files go (default \"out\")\n"
      "  mc_samples               Monte-Carlo samples per metric (default 100000)\n"
      "  clamp_floor              score floor in nats (default -700)\n"
      "  pipeline.n_teacher_train ground-truth training samples (default 10000)\n"
      "  pipeline.k_teacher       teacher components (default 4)\n"
      "  pipeline.n_student_train student training samples (default 10000)\n"
      "  pipeline.k_student       student components (default 1; 2 for\n"
      "                           beta-sweep)\n"
      "  pipeline.beta            weight-sharpening beta (default 100)\n"
      "  pipeline.epsilon         active-component threshold (default 0.1)\n"
      "  pipeline.fit.max_iter    EM iteration cap (default 500)\n"
      "  pipeline.fit.tol         EM convergence, nats (default 1e-6)\n"
      "  pipeline.fit.reg_eps     covariance diagonal floor (default 1e-6)\n"
      "  pipeline.fit.n_restarts  EM restarts, best kept (default 5)\n"
      "  pipeline.ground_truth    explicit mixture {weights, means, covariances}\n"
      "                           (default: 8 modes on a 4x2 grid, cov 0.3*I)\n"
      "  token.vocab_size         vocabulary size (default 50)\n"
      "  token.seq_len            tokens per sequence (default 32)\n"
      "  token.n_train            training sequences (default 100000)\n"
      "  token.concentration      Dirichlet concentration of the ground truth\n"
      "                           (default 0.1)\n"
      "  token.smoothing_delta    add-delta smoothing for the teacher (default 0.01)\n"
      "  token.rank               student latent rank (default 8)\n"
      "  token.em_max_iter        student EM iteration cap (default 200)\n"
      "  token.em_tol             student EM convergence, nats/transition\n"
      "                           (default 1e-7)\n"
      "  grid.x_lo/x_hi/x_steps   density-export x axis (default -9..9, 181)\n"
      "  grid.y_lo/y_hi/y_steps   density-export y axis (default -3..3, 61)\n";
}

namespace {

struct Cell {
  int seed_idx;
  int knob_idx;
  double knob;
};

std::string sanitize_csv_field(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

SweepResultRow error_row(const std::string& experiment, int seed_idx,
                         double knob, const std::string& msg) {
  SweepResultRow row;
  row.experiment = experiment + "#error=" + sanitize_csv_field(msg);
  row.seed = seed_idx;
  row.knob = knob;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  row.precision_mean = row.precision_se = row.recall_mean = row.recall_se =
      row.teacher_weight_entropy = nan;
  row.difficulty = kDifficultySentinel;
  row.clamp_count = 0;
  row.failed = true;
  return row;
}

// gmm-repro / density-export cell: one pipeline run, rows for the distilled
// and the direct student.
std::vector<SweepResultRow> run_gmm_cell(
    const ExperimentConfig& cfg, const char* label, int seed_idx, int knob_idx,
    double beta, std::optional<PipelineResult>* result_out = nullptr) {
  PipelineConfig pc = cfg.pipeline;
  pc.beta = beta;
  const std::uint64_t ms = cfg.master_seed;
  const std::uint64_t si = static_cast<std::uint64_t>(seed_idx);
  const std::uint64_t ki = static_cast<std::uint64_t>(knob_idx);
  PipelineSeeds seeds{derive_seed(ms, {si, kSaltTeacherStage}),
                      derive_seed(ms, {si, ki, kSaltStudentStage})};
  PipelineResult res = run_pipeline(pc, seeds);

  const std::uint64_t prec_seed = derive_seed(ms, {si, ki, kSaltPrecision});
  const std::uint64_t rec_seed = derive_seed(ms, {si, ki, kSaltRecall});

  auto make_row = [&](const char* variant, const GaussianMixture& student,
                      std::span<const double> entropy_weights,
                      int difficulty_value) {
    const MetricEstimate prec =
        precision_mc(student, cfg.pipeline.ground_truth, cfg.mc_samples,
                     prec_seed, cfg.clamp_floor);
    const MetricEstimate rec =
        recall_mc(student, cfg.pipeline.ground_truth, cfg.mc_samples, rec_seed,
                  cfg.clamp_floor);
    SweepResultRow row;
    row.experiment = std::string(label) + "/" + variant;
    row.seed = seed_idx;
    row.knob = beta;
    row.precision_mean = prec.mean;
    row.precision_se = prec.std_error;
    row.recall_mean = rec.mean;
    row.recall_se = rec.std_error;
    row.teacher_weight_entropy = weight_entropy(entropy_weights);
    row.difficulty = difficulty_value;
    row.clamp_count = prec.clamp_count + rec.clamp_count;
    return row;
  };

  std::vector<SweepResultRow> rows;
  rows.push_back(make_row("distilled", res.student_distilled,
                          res.tempered_weights.tempered, res.difficulty));
  rows.push_back(make_row("direct", res.student_direct, res.teacher.weights(),
                          difficulty(pc.k_student, res.teacher.weights(),
                                     res.sigma, pc.epsilon)));
  if (result_out != nullptr) *result_out = std::move(res);
  return rows;
}

// beta-sweep cell: the distilled student only.
SweepResultRow run_beta_cell(const ExperimentConfig& cfg, int seed_idx,
                             int knob_idx, double beta) {
  PipelineConfig pc = cfg.pipeline;
  pc.beta = beta;
  const std::uint64_t ms = cfg.master_seed;
  const std::uint64_t si = static_cast<std::uint64_t>(seed_idx);
  const std::uint64_t ki = static_cast<std::uint64_t>(knob_idx);
  PipelineSeeds seeds{derive_seed(ms, {si, kSaltTeacherStage}),
                      derive_seed(ms, {si, ki, kSaltStudentStage})};
  PipelineResult res = run_pipeline(pc, seeds);

  const MetricEstimate prec = precision_mc(
      res.student_distilled, cfg.pipeline.ground_truth, cfg.mc_samples,
      derive_seed(ms, {si, ki, kSaltPrecision}), cfg.clamp_floor);
  const MetricEstimate rec = recall_mc(
      res.student_distilled, cfg.pipeline.ground_truth, cfg.mc_samples,
      derive_seed(ms, {si, ki, kSaltRecall}), cfg.clamp_floor);

  SweepResultRow row;
  row.experiment = "beta-sweep";
  row.seed = seed_idx;
  row.knob = beta;
  row.precision_mean = prec.mean;
  row.precision_se = prec.std_error;
  row.recall_mean = rec.mean;
  row.recall_se = rec.std_error;
  row.teacher_weight_entropy = weight_entropy(res.tempered_weights.tempered);
  row.difficulty = res.difficulty;
  row.clamp_count = prec.clamp_count + rec.clamp_count;
  return row;
}

SweepResultRow run_token_cell(const ExperimentConfig& cfg, int seed_idx,
                              int knob_idx, double tau) {
  const TokenWorldConfig& tc = cfg.token;
  const std::uint64_t ms = cfg.master_seed;
  const std::uint64_t si = static_cast<std::uint64_t>(seed_idx);
  const std::uint64_t ki = static_cast<std::uint64_t>(knob_idx);

  const MarkovModel ground = make_ground_truth(
      tc.vocab_size, tc.concentration, derive_seed(ms, {si, kSaltTokenGround}));
  const SequenceDataset train = sample_sequences(
      ground, tc.n_train, tc.seq_len, derive_seed(ms, {si, kSaltTokenData}));
  const MarkovModel teacher =
      fit_markov(train, tc.vocab_size, tc.fit.smoothing_delta);
  const MarkovModel tempered_teacher = temper_markov(teacher, tau);

  const SequenceDataset distill_train =
      sample_sequences(tempered_teacher, tc.n_train, tc.seq_len,
                       derive_seed(ms, {si, ki, kSaltTokenDistillData}));
  TokenFitConfig fit = tc.fit;
  fit.seed = derive_seed(ms, {si, ki, kSaltTokenStudent});
  const LowRankMarkov student =
      fit_lowrank_em(distill_train, tc.vocab_size, fit);

  const int n_eval = static_cast<int>(cfg.mc_samples);
  const MetricEstimate prec =
      token_precision(student, ground, n_eval, tc.seq_len,
                      derive_seed(ms, {si, ki, kSaltPrecision}), cfg.clamp_floor);
  const MetricEstimate rec =
      token_recall(student, ground, n_eval, tc.seq_len,
                   derive_seed(ms, {si, ki, kSaltRecall}), cfg.clamp_floor);

  SweepResultRow row;
  row.experiment = "token-sweep";
  row.seed = seed_idx;
  row.knob = tau;
  row.precision_mean = prec.mean;
  row.precision_se = prec.std_error;
  row.recall_mean = rec.mean;
  row.recall_se = rec.std_error;
  row.teacher_weight_entropy = mean_row_entropy(tempered_teacher);
  row.difficulty = kDifficultySentinel;
  row.clamp_count = prec.clamp_count + rec.clamp_count;
  return row;
}

std::vector<SweepResultRow> run_density_export_cell(
    const ExperimentConfig& cfg) {
  std::optional<PipelineResult> result;
  std::vector<SweepResultRow> rows =
      run_gmm_cell(cfg, "density-export", 0, 0, cfg.pipeline.beta, &result);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const auto write = [&](const char* name, const GaussianMixture& m) {
    write_density_grid(density_grid(m, cfg.grid.x, cfg.grid.y),
                       (fs::path(cfg.output_dir) / name).string());
  };
  write("ground_truth.tsv", cfg.pipeline.ground_truth);
  write("teacher.tsv", result->teacher);
  write("teacher_tempered.tsv", result->tempered_teacher);
  write("student_distilled.tsv", result->student_distilled);
  write("student_direct.tsv", result->student_direct);
  return rows;
}

bool row_order(const SweepResultRow& a, const SweepResultRow& b) {
  if (a.knob != b.knob) return a.knob < b.knob;
  if (a.seed != b.seed) return a.seed < b.seed;
  return a.experiment < b.experiment;
}

// Across-seed summary (seed = -1): mean of per-seed means, standard error of
// those means.
SweepResultRow summarize(const std::string& experiment,
                         const std::vector<SweepResultRow>& rows) {
  SweepResultRow out;
  out.experiment = experiment + "/mean";
  out.seed = -1;
  out.knob = rows.front().knob;
  const auto stat = [&](auto get) {
    std::vector<double> vals;
    vals.reserve(rows.size());
    for (const auto& r : rows) vals.push_back(get(r));
    if (vals.size() == 1) return MeanAndSe{vals[0], 0.0};
    return mean_and_se(vals);
  };
  const auto p = stat([](const SweepResultRow& r) { return r.precision_mean; });
  const auto rc = stat([](const SweepResultRow& r) { return r.recall_mean; });
  const auto h = stat(
      [](const SweepResultRow& r) { return r.teacher_weight_entropy; });
  out.precision_mean = p.mean;
  out.precision_se = p.std_error;
  out.recall_mean = rc.mean;
  out.recall_se = rc.std_error;
  out.teacher_weight_entropy = h.mean;
  out.difficulty = kDifficultySentinel;
  for (const auto& row : rows) out.clamp_count += row.clamp_count;
  return out;
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  switch (cfg.kind) {
    case ExperimentKind::gmm_repro:
      for (int s = 0; s < cfg.seeds; ++s)
        cells.push_back({s, 0, cfg.pipeline.beta});
      break;
    case ExperimentKind::beta_sweep:
      for (int k = 0; k < static_cast<int>(cfg.beta_list.size()); ++k)
        for (int s = 0; s < cfg.seeds; ++s)
          cells.push_back({s, k, cfg.beta_list[k]});
      break;
    case ExperimentKind::token_sweep:
      for (int k = 0; k < static_cast<int>(cfg.tau_list.size()); ++k)
        for (int s = 0; s < cfg.seeds; ++s)
          cells.push_back({s, k, cfg.tau_list[k]});
      break;
    case ExperimentKind::density_export:
      cells.push_back({0, 0, cfg.pipeline.beta});
      break;
  }

  std::vector<std::vector<SweepResultRow>> slots(cells.size());
  std::atomic<std::size_t> next{0};
  std::atomic<int> failed{0};

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Cell& cell = cells[i];
      try {
        switch (cfg.kind) {
          case ExperimentKind::gmm_repro:
            slots[i] = run_gmm_cell(cfg, "gmm-repro", cell.seed_idx,
                                    cell.knob_idx, cell.knob);
            break;
          case ExperimentKind::beta_sweep:
            slots[i] = {run_beta_cell(cfg, cell.seed_idx, cell.knob_idx,
                                      cell.knob)};
            break;
          case ExperimentKind::token_sweep:
            slots[i] = {run_token_cell(cfg, cell.seed_idx, cell.knob_idx,
                                       cell.knob)};
            break;
          case ExperimentKind::density_export:
            slots[i] = run_density_export_cell(cfg);
            break;
        }
      } catch (const std::exception& e) {
        slots[i] = {error_row(kind_name(cfg.kind), cell.seed_idx, cell.knob,
                              e.what())};
        failed.fetch_add(1);
      }
    }
  };

  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1 || cells.size() <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    const int n_threads = std::min<int>(jobs, static_cast<int>(cells.size()));
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  RunOutcome outcome;
  outcome.failed_cells = failed.load();
  for (auto& rows : slots)
    for (auto& row : rows) outcome.rows.push_back(std::move(row));
  std::stable_sort(outcome.rows.begin(), outcome.rows.end(), row_order);

  if (cfg.kind == ExperimentKind::gmm_repro) {
    for (const char* variant : {"gmm-repro/direct", "gmm-repro/distilled"}) {
      std::vector<SweepResultRow> group;
      for (const auto& row : outcome.rows)
        if (row.experiment == variant) group.push_back(row);
      if (!group.empty()) outcome.rows.push_back(summarize(variant, group));
    }
    std::stable_sort(outcome.rows.begin(), outcome.rows.end(), row_order);
  }
  return outcome;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void emit_csv(const std::vector<SweepResultRow>& rows, std::ostream& os) {
  if (rows.empty()) throw std::invalid_argument("emit_csv: no rows");
  os << "experiment,seed,knob,precision_mean,precision_se,recall_mean,"
        "recall_se,teacher_weight_entropy,difficulty,clamp_count\n";
  for (const auto& r : rows) {
    os << sanitize_csv_field(r.experiment) << ',' << r.seed << ','
       << fmt17(r.knob) << ',' << fmt17(r.precision_mean) << ','
       << fmt17(r.precision_se) << ',' << fmt17(r.recall_mean) << ','
       << fmt17(r.recall_se) << ',' << fmt17(r.teacher_weight_entropy) << ','
       << r.difficulty << ',' << r.clamp_count << '\n';
  }
}

void emit_csv(const std::vector<SweepResultRow>& rows,
              const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("emit_csv: cannot open for writing: " + path);
  emit_csv(rows, os);
  os.flush();
  if (!os) throw std::runtime_error("emit_csv: write failed: " + path);
}

std::vector<SweepResultRow> parse_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::invalid_argument("parse_csv: empty input");
  if (line != "experiment,seed,knob,precision_mean,precision_se,recall_mean,"
              "recall_se,teacher_weight_entropy,difficulty,clamp_count")
    throw std::invalid_argument("parse_csv: unexpected header");
  std::vector<SweepResultRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      fields.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (fields.size() != 10)
      throw std::invalid_argument("parse_csv: wrong field count");
    SweepResultRow r;
    r.experiment = fields[0];
    r.seed = std::stoll(fields[1]);
    r.knob = std::strtod(fields[2].c_str(), nullptr);
    r.precision_mean = std::strtod(fields[3].c_str(), nullptr);
    r.precision_se = std::strtod(fields[4].c_str(), nullptr);
    r.recall_mean = std::strtod(fields[5].c_str(), nullptr);
    r.recall_se = std::strtod(fields[6].c_str(), nullptr);
    r.teacher_weight_entropy = std::strtod(fields[7].c_str(), nullptr);
    r.difficulty = std::stoi(fields[8]);
    r.clamp_count = std::stoll(fields[9]);
    r.failed = r.experiment.find("#error=") != std::string::npos;
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace distill
