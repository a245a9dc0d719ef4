#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mergesfl/common.h"
#include "mergesfl/controller.h"
#include "mergesfl/estimator.h"
#include "mergesfl/sim_env.h"
#include "mergesfl/training.h"

namespace mergesfl {

// Invalid configuration file. The message is prefixed with "<source>:<line>: ".
class ConfigError : public ValidationError {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t rounds = 80;
  std::size_t workers = 20;
  std::size_t tau = 10;
  int max_batch = 64;
  double epsilon = 0.05;
  double alpha = 0.8;

  std::size_t classes = 10;
  std::size_t dim = 16;
  std::size_t per_class = 200;
  double separation = 3.0;
  double holdout = 0.1;
  // Dirichlet concentration; the file may give p = 1 / delta instead.
  double delta = kIidConcentration;

  std::size_t hidden = 32;
  double lr_top = 0.1;
  double lr_bottom = 0.1;
  // Per-worker batch of the sfl_t and fixed_batch modes.
  int fixed_batch = 16;
  double sample_cost = 1.0;

  double target_accuracy = 0.8;
  // Simulated seconds each mode may spend; 0 means unlimited.
  double time_budget = 0.0;

  EnvConfig env;  // workers and seed follow the top-level values
  EstimatorConfig estimator;
  GaParams ga;
  FinetuneParams finetune;  // epsilon and max_batch follow the top-level values
  std::vector<Mode> modes{Mode::kMergeSfl, Mode::kSflT, Mode::kFixedBatch};

  ControllerConfig controller() const;
};

// Parses and validates a JSON configuration. Unknown keys, wrong types and
// out-of-range values raise ConfigError naming the offending line.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical JSON of the fully resolved configuration.
std::string dump_config(const ExperimentConfig& config);
// FNV-1a 64 of dump_config, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

struct RoundMetrics {
  std::size_t round = 0;
  Mode mode = Mode::kMergeSfl;
  double clock = 0.0;  // simulated seconds elapsed after this round
  double completion = 0.0;
  double avg_wait = 0.0;
  double avg_wait_all = 0.0;
  double realized_kl = 0.0;
  double plan_kl = 0.0;
  double budget_estimate = 0.0;
  double bandwidth = 0.0;  // realized B
  double planned_spend = 0.0;
  double utilization = 0.0;  // planned_spend / realized B
  bool overload = false;     // planned_spend > realized B
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  std::size_t retries = 0;
  bool epsilon_unreachable = false;
  std::vector<std::size_t> workers;
  std::vector<int> batches;
};

struct ModeRun {
  Mode mode = Mode::kMergeSfl;
  std::vector<RoundMetrics> rounds;
  std::vector<std::size_t> participations;  // K_i after the run
  bool budget_exhausted = false;
};

// The training shards every run of `config` uses.
std::vector<Shard> training_shards(const ExperimentConfig& config);

// Runs one mode for config.rounds rounds, or until the next round would
// exceed the time budget.
ModeRun run_mode(const ExperimentConfig& config, Mode mode);

// One JSONL line (without newline). Carries config hash, seed and target.
std::string metrics_json(const RoundMetrics& m, const ExperimentConfig& config);

// Labelled per-round records of one run, as read back from JSONL.
struct RunRecord {
  std::string label;
  std::string config_hash;
  std::uint64_t seed = 0;
  double target_accuracy = 0.0;
  std::vector<double> clock;
  std::vector<double> accuracy;
  std::vector<double> avg_wait;
  std::vector<std::size_t> round;
};

struct ModeSummary {
  std::string label;
  std::size_t rounds = 0;
  std::optional<double> time_to_target;
  double final_accuracy = 0.0;
  double mean_avg_wait = 0.0;
  std::optional<double> speedup;  // vs the first run; absent when either is unreached
};

struct Comparison {
  std::string config_hash;
  std::uint64_t seed = 0;
  double target_accuracy = 0.0;
  std::vector<ModeSummary> modes;
};

// Needs at least two runs with equal config hash, seed and target.
Comparison compare_report(const std::vector<RunRecord>& runs);
std::string comparison_json(const Comparison& comparison);

// Reads every *.jsonl in `dir` (name order); one run per (file, mode).
std::vector<RunRecord> read_runs(const std::filesystem::path& dir);

struct ExperimentOutputs {
  std::filesystem::path jsonl;
  std::filesystem::path comparison;
  std::vector<std::filesystem::path> summaries;
};

// Runs every configured mode and writes rounds.jsonl, summary_<mode>.csv and
// comparison.json (when at least two modes ran) into out_dir.
ExperimentOutputs run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir);

}  // namespace mergesfl
