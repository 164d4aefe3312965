#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "distill/metrics.hpp"
#include "distill/pipeline.hpp"
#include "distill/token.hpp"

namespace distill {

enum class ExperimentKind {
  gmm_repro,
  beta_sweep,
  token_sweep,
  density_export,
};

const char* kind_name(ExperimentKind kind);
ExperimentKind kind_from_name(const std::string& name);

struct TokenWorldConfig {
  int vocab_size = 50;
  int seq_len = 32;
  int n_train = 100000;
  double concentration = 0.1;
  TokenFitConfig fit;
};

struct GridSpec {
  AxisSpec x{-9.0, 9.0, 181};
  AxisSpec y{-3.0, 3.0, 61};
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::gmm_repro;
  std::uint64_t master_seed = 1;
  int seeds = 5;
  std::vector<double> beta_list{1.0, 2.0, 5.0, 10.0, 100.0};
  std::vector<double> tau_list{0.8, 0.875, 0.95, 1.0};
  std::string output_dir = "out";
  std::int64_t mc_samples = 100000;
  double clamp_floor = kDefaultScoreFloor;
  PipelineConfig pipeline;
  TokenWorldConfig token;
  GridSpec grid;
  int jobs = 1;  // CLI/env only, not a config-file key
};

// One (knob, seed) cell worth of results. Summary rows across seeds use
// seed = -1; token rows carry the difficulty sentinel -999.
struct SweepResultRow {
  std::string experiment;
  std::int64_t seed = 0;
  double knob = 0.0;
  double precision_mean = 0.0;
  double precision_se = 0.0;
  double recall_mean = 0.0;
  double recall_se = 0.0;
  double teacher_weight_entropy = 0.0;
  int difficulty = 0;
  std::int64_t clamp_count = 0;
  bool failed = false;
};

constexpr int kDifficultySentinel = -999;

ExperimentConfig default_config(ExperimentKind kind);

// Strict parse: unknown keys are rejected by name, values are validated by
// field, and anything absent takes its documented default.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin);

// One line per key with its default, shown under --help.
std::string config_defaults_help();

struct RunOutcome {
  std::vector<SweepResultRow> rows;
  int failed_cells = 0;
};

// Runs every (knob, seed) cell, possibly across cfg.jobs threads. Output is
// byte-identical regardless of the degree of parallelism; a failed cell
// becomes an error row rather than aborting the sweep.
RunOutcome run_experiment(const ExperimentConfig& cfg);

void emit_csv(const std::vector<SweepResultRow>& rows, std::ostream& os);
void emit_csv(const std::vector<SweepResultRow>& rows, const std::string& path);
std::vector<SweepResultRow> parse_csv(std::istream& is);

// Full command-line entry point ("distill-lab <subcommand> ...").
int run_cli(int argc, const char* const* argv);

}  // namespace distill
