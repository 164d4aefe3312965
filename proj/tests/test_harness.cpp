#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "distill/harness.hpp"
#include "distill/rng.hpp"

using namespace distill;
namespace fs = std::filesystem;

namespace {

// A configuration small enough for unit tests.
ExperimentConfig tiny_config(ExperimentKind kind) {
  ExperimentConfig cfg = default_config(kind);
  cfg.seeds = 2;
  cfg.mc_samples = 2000;
  cfg.pipeline.n_teacher_train = 1200;
  cfg.pipeline.n_student_train = 1200;
  cfg.pipeline.fit.n_restarts = 2;
  cfg.beta_list = {1.0, 100.0};
  cfg.tau_list = {0.8, 1.0};
  cfg.token.vocab_size = 10;
  cfg.token.seq_len = 6;
  cfg.token.n_train = 3000;
  cfg.token.fit.rank = 3;
  cfg.grid.x = {-8.0, 8.0, 17};
  cfg.grid.y = {-2.0, 2.0, 9};
  return cfg;
}

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("distill_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("parse_config: minimal config applies documented defaults") {
  const ExperimentConfig cfg = parse_config_text(
      R"({"kind": "gmm-repro", "master_seed": 7})", "inline");
  CHECK(cfg.kind == ExperimentKind::gmm_repro);
  CHECK(cfg.master_seed == 7);
  CHECK(cfg.seeds == 5);
  CHECK(cfg.beta_list == std::vector<double>{1.0, 2.0, 5.0, 10.0, 100.0});
  CHECK(cfg.tau_list == std::vector<double>{0.8, 0.875, 0.95, 1.0});
  CHECK(cfg.mc_samples == 100000);
  CHECK(cfg.clamp_floor == -700.0);
  CHECK(cfg.pipeline.k_teacher == 4);
  CHECK(cfg.pipeline.k_student == 1);
  CHECK(cfg.pipeline.beta == 100.0);
  CHECK(cfg.pipeline.fit.max_iter == 500);
  CHECK(cfg.pipeline.fit.n_restarts == 5);
  CHECK(cfg.token.vocab_size == 50);
  CHECK(cfg.token.seq_len == 32);
  CHECK(cfg.token.fit.rank == 8);
}

TEST_CASE("parse_config: validation errors name the field") {
  CHECK_THROWS_WITH_AS(
      parse_config_text(R"({"kind": "beta-sweep", "beta_list": []})", "inline"),
      doctest::Contains("beta_list"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_config_text(R"({"kind": "gmm-repro", "pipeline": {"bogus": 1}})",
                        "inline"),
      doctest::Contains("pipeline.bogus"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_config_text(R"({"kind": "gmm-repro", "typo_key": 1})", "inline"),
      doctest::Contains("typo_key"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"master_seed": 1})", "inline"),
                       doctest::Contains("kind"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text(R"({"kind": "unknown-kind"})", "inline"),
                  std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_config_text(R"({"kind": "gmm-repro", "seeds": 0})", "inline"),
      doctest::Contains("seeds"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_config_text(R"({"kind": "gmm-repro", "tau_list": [1.5]})", "inline"),
      doctest::Contains("tau_list"), std::invalid_argument);
}

TEST_CASE("parse_config: syntax errors carry position information") {
  CHECK_THROWS_WITH_AS(parse_config_text("{\n  \"kind\": oops\n}", "inline"),
                       doctest::Contains("line"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("/nonexistent/config.json"),
                  std::invalid_argument);
}

TEST_CASE("parse_config: ground-truth override") {
  const ExperimentConfig cfg = parse_config_text(R"({
    "kind": "gmm-repro",
    "pipeline": {
      "ground_truth": {
        "weights": [0.5, 0.5],
        "means": [[-1.0, 0.0], [1.0, 0.0]],
        "covariances": [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]]
      }
    }
  })", "inline");
  CHECK(cfg.pipeline.ground_truth.size() == 2);
  CHECK(cfg.pipeline.ground_truth.component(0).mean()[0] == -1.0);
}

TEST_CASE("shipped repro config matches the reproduction setup") {
  const ExperimentConfig cfg = parse_config("configs/repro_sec32.json");
  CHECK(cfg.kind == ExperimentKind::gmm_repro);
  CHECK(cfg.pipeline.k_teacher == 4);
  CHECK(cfg.pipeline.k_student == 1);
  CHECK(cfg.pipeline.beta == 100.0);
  CHECK(cfg.seeds == 5);
}

TEST_CASE("emit_csv") {
  SweepResultRow row;
  row.experiment = "beta-sweep";
  row.seed = 3;
  row.knob = 2.0;
  row.precision_mean = -1.25;
  row.precision_se = 0.01;
  row.recall_mean = -4.5;
  row.recall_se = 0.02;
  row.teacher_weight_entropy = 1.23456789012345678;
  row.difficulty = -1;
  row.clamp_count = 7;

  SUBCASE("one row gives header plus one line") {
    std::ostringstream os;
    emit_csv({row}, os);
    const std::string text = os.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    CHECK(text.find("experiment,seed,knob,precision_mean,precision_se,"
                    "recall_mean,recall_se,teacher_weight_entropy,difficulty,"
                    "clamp_count\n") == 0);
  }

  SUBCASE("round-trip reproduces rows exactly") {
    std::ostringstream os;
    emit_csv({row}, os);
    std::istringstream is(os.str());
    const std::vector<SweepResultRow> parsed = parse_csv(is);
    REQUIRE(parsed.size() == 1);
    CHECK(parsed[0].experiment == row.experiment);
    CHECK(parsed[0].seed == row.seed);
    CHECK(parsed[0].knob == row.knob);
    CHECK(parsed[0].precision_mean == row.precision_mean);
    CHECK(parsed[0].teacher_weight_entropy == row.teacher_weight_entropy);
    CHECK(parsed[0].difficulty == row.difficulty);
    CHECK(parsed[0].clamp_count == row.clamp_count);

    std::ostringstream os2;
    emit_csv(parsed, os2);
    CHECK(os2.str() == os.str());
  }

  SUBCASE("empty rows are rejected and bad paths name the file") {
    CHECK_THROWS_AS(emit_csv({}, std::cout), std::invalid_argument);
    CHECK_THROWS_WITH_AS(emit_csv({row}, "/nonexistent_dir/x.csv"),
                         doctest::Contains("/nonexistent_dir/x.csv"),
                         std::runtime_error);
  }
}

TEST_CASE("child seeds across a sweep are collision-free") {
  std::set<std::uint64_t> seen;
  const std::uint64_t master = 1;
  int count = 0;
  for (std::uint64_t s = 0; s < 64; ++s)
    for (std::uint64_t k = 0; k < 16; ++k)
      for (std::uint64_t salt : {0x11, 0x12, 0x13, 0x14, 0x21, 0x22, 0x23, 0x24}) {
        seen.insert(derive_seed(master, {s, k, salt}));
        ++count;
      }
  CHECK(static_cast<int>(seen.size()) == count);
}

TEST_CASE("run_experiment: gmm-repro emits per-seed and summary rows") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::gmm_repro);
  const RunOutcome out = run_experiment(cfg);
  CHECK(out.failed_cells == 0);
  // 2 seeds x (distilled + direct) + 2 summary rows
  REQUIRE(out.rows.size() == 6);

  int distilled = 0, direct = 0, summaries = 0;
  for (const auto& row : out.rows) {
    if (row.seed == -1) {
      ++summaries;
      continue;
    }
    if (row.experiment == "gmm-repro/distilled") ++distilled;
    if (row.experiment == "gmm-repro/direct") ++direct;
  }
  CHECK(distilled == 2);
  CHECK(direct == 2);
  CHECK(summaries == 2);

  // distillation helps precision and costs recall, per seed
  for (int s = 0; s < 2; ++s) {
    const auto find = [&](const std::string& name) {
      for (const auto& row : out.rows)
        if (row.experiment == name && row.seed == s) return row;
      REQUIRE(false);
      return out.rows[0];
    };
    const SweepResultRow d = find("gmm-repro/distilled");
    const SweepResultRow r = find("gmm-repro/direct");
    CHECK(d.precision_mean > r.precision_mean);
    CHECK(d.recall_mean < r.recall_mean);
    CHECK(d.teacher_weight_entropy < r.teacher_weight_entropy);
  }
}

TEST_CASE("run_experiment: sweep shapes and ordering") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::beta_sweep);
  const RunOutcome out = run_experiment(cfg);
  CHECK(out.failed_cells == 0);
  REQUIRE(out.rows.size() == 4);  // 2 betas x 2 seeds
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    const auto& a = out.rows[i - 1];
    const auto& b = out.rows[i];
    CHECK((a.knob < b.knob || (a.knob == b.knob && a.seed <= b.seed)));
  }
  for (const auto& row : out.rows) CHECK(row.difficulty != kDifficultySentinel);
}

TEST_CASE("run_experiment: token sweep rows carry the difficulty sentinel") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::token_sweep);
  const RunOutcome out = run_experiment(cfg);
  CHECK(out.failed_cells == 0);
  REQUIRE(out.rows.size() == 4);  // 2 taus x 2 seeds
  for (const auto& row : out.rows) {
    CHECK(row.experiment == "token-sweep");
    CHECK(row.difficulty == kDifficultySentinel);
    CHECK(std::isfinite(row.precision_mean));
    CHECK(row.precision_se >= 0.0);
  }
}

TEST_CASE("run_experiment output is byte-identical across jobs") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::token_sweep);
  cfg.jobs = 1;
  const RunOutcome a = run_experiment(cfg);
  const RunOutcome b = run_experiment(cfg);
  cfg.jobs = 8;
  const RunOutcome c = run_experiment(cfg);

  const auto to_csv = [](const RunOutcome& o) {
    std::ostringstream os;
    emit_csv(o.rows, os);
    return os.str();
  };
  CHECK(to_csv(a) == to_csv(b));
  CHECK(to_csv(a) == to_csv(c));
}

TEST_CASE("density-export writes grid files and metric rows") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::density_export);
  const fs::path dir = temp_dir("density");
  cfg.output_dir = dir.string();
  const RunOutcome out = run_experiment(cfg);
  CHECK(out.failed_cells == 0);
  CHECK(out.rows.size() == 2);
  for (const char* name :
       {"ground_truth.tsv", "teacher.tsv", "teacher_tempered.tsv",
        "student_distilled.tsv", "student_direct.tsv"})
    CHECK(fs::exists(dir / name));
  fs::remove_all(dir);
}

TEST_CASE("run_cli end to end") {
  const fs::path dir = temp_dir("cli");
  const fs::path cfg_path = dir / "cfg.json";
  {
    std::ofstream os(cfg_path);
    os << R"({
      "kind": "gmm-repro",
      "master_seed": 5,
      "seeds": 1,
      "mc_samples": 2000,
      "pipeline": {"n_teacher_train": 1000, "n_student_train": 1000,
                   "fit": {"n_restarts": 2}}
    })";
  }
  const std::string cfg_str = cfg_path.string();
  const std::string out_str = (dir / "out").string();

  SUBCASE("successful run writes the CSV and returns 0") {
    const char* argv[] = {"distill-lab", "gmm-repro",       "--config",
                          cfg_str.c_str(), "--out",         out_str.c_str(),
                          "--jobs",        "2"};
    CHECK(run_cli(8, argv) == 0);
    const fs::path csv = fs::path(out_str) / "gmm-repro.csv";
    REQUIRE(fs::exists(csv));
    std::ifstream is(csv);
    const std::vector<SweepResultRow> rows = parse_csv(is);
    CHECK(rows.size() == 4);  // 1 seed x 2 variants + 2 summaries
  }

  SUBCASE("subcommand/config kind mismatch fails") {
    const char* argv[] = {"distill-lab", "beta-sweep", "--config",
                          cfg_str.c_str()};
    CHECK(run_cli(4, argv) == 2);
  }

  SUBCASE("seed override changes the output") {
    const char* argv1[] = {"distill-lab", "gmm-repro", "--config",
                           cfg_str.c_str(), "--out", out_str.c_str()};
    REQUIRE(run_cli(6, argv1) == 0);
    const std::string first = slurp(fs::path(out_str) / "gmm-repro.csv");
    const char* argv2[] = {"distill-lab", "gmm-repro", "--config",
                           cfg_str.c_str(), "--out",   out_str.c_str(),
                           "--seed",        "99"};
    REQUIRE(run_cli(8, argv2) == 0);
    CHECK(slurp(fs::path(out_str) / "gmm-repro.csv") != first);
  }

  SUBCASE("help exits cleanly") {
    const char* argv[] = {"distill-lab", "--help"};
    CHECK(run_cli(2, argv) == 0);
  }

  fs::remove_all(dir);
}
