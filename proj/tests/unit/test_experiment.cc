#include <algorithm>
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "criteria.h"
#include "json.hpp"
#include "mergesfl/common.h"
#include "mergesfl/experiment.h"

using namespace mergesfl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t error_line(const std::string& text) {
  try {
    parse_config(text, "t.json");
  } catch (const ConfigError& e) {
    return e.line();
  }
  return 0;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.rounds = 6;
  c.workers = 6;
  c.per_class = 30;
  c.classes = 4;
  c.dim = 4;
  c.hidden = 8;
  c.max_batch = 16;
  c.fixed_batch = 8;
  c.delta = 0.5;
  c.env.bandwidth_mean = 48;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const ExperimentConfig c = parse_config(R"({"seed": 9, "p": 10, "env": {"spread": 4}, "modes": ["sfl_t"]})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_DOUBLE_EQ(c.delta, 0.1);
  EXPECT_EQ(c.env.spread, 4.0);
  EXPECT_EQ(c.modes, std::vector<Mode>{Mode::kSflT});
  EXPECT_EQ(c.rounds, 80u);
  EXPECT_TRUE(std::isinf(parse_config(R"({"p": 0})").delta));
}

TEST(Config, ErrorsNameTheLine) {
  EXPECT_EQ(error_line("{\n  \"seed\": 1,\n  \"bogus\": 2\n}"), 3u);
  EXPECT_EQ(error_line("{\n  \"rounds\": -1\n}"), 2u);
  EXPECT_EQ(error_line("{\n  \"env\": {\n    \"spread\": 0.5\n  }\n}"), 3u);
  EXPECT_EQ(error_line("{\n  \"p\": 10,\n  \"delta\": 0.1\n}"), 3u);
  EXPECT_EQ(error_line("{\n  \"max_batch\": 8,\n  \"fixed_batch\": 16\n}"), 3u);
  EXPECT_EQ(error_line("{\n  \"modes\": [\"mergesfl\", \"pyramid\"]\n}"), 2u);
  // syntax errors point at the offending token
  EXPECT_EQ(error_line("{\n  \"seed\": 1,\n  \"tau\": \n}"), 4u);
  EXPECT_EQ(error_line("{\n\n  \"ga\": {\"population\": 4, \"elites\": 4}\n}"), 3u);
  try {
    parse_config("{\n  \"alpha\": 2\n}", "exp.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("exp.json:2: ", 0), 0u) << e.what();
  }
}

TEST(Config, DumpRoundTripsAndHashIsStable) {
  const ExperimentConfig c = acceptance::reference_config();
  const ExperimentConfig back = parse_config(dump_config(c));
  EXPECT_EQ(dump_config(back), dump_config(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
  ExperimentConfig other = c;
  other.seed = 2;
  EXPECT_NE(config_hash(other), config_hash(c));
}

TEST(Config, ShippedReferenceMatchesAcceptanceConfig) {
  const ExperimentConfig shipped = load_config(fs::path(MERGESFL_SOURCE_DIR) / "configs" / "reference.json");
  EXPECT_EQ(config_hash(shipped), config_hash(acceptance::reference_config()));
}

TEST(Config, ShippedPresetsLoad) {
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(MERGESFL_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
    ++n;
  }
  EXPECT_GE(n, 5u);
}

TEST(RunExperiment, ZeroRounds) {
  ExperimentConfig c = small_config();
  c.rounds = 0;
  TempDir dir("mergesfl_zero_rounds");
  const ExperimentOutputs out = run_experiment(c, dir.path);
  EXPECT_EQ(slurp(out.jsonl), "");
  ASSERT_EQ(out.summaries.size(), 3u);
  const std::string csv = slurp(out.summaries[0]);
  EXPECT_NE(csv.find("\nmergesfl,0,0,0,0,,0,0,0,0,0,0,0,false\n"), std::string::npos) << csv;
  const auto cmp = nlohmann::json::parse(slurp(out.comparison));
  for (const auto& m : cmp["modes"]) {
    EXPECT_EQ(m["rounds"], 0);
    EXPECT_TRUE(m["time_to_target"].is_null());
  }
}

TEST(RunExperiment, DeterministicAndWellFormed) {
  const ExperimentConfig c = small_config();
  TempDir a("mergesfl_det_a"), b("mergesfl_det_b");
  const ExperimentOutputs oa = run_experiment(c, a.path);
  const ExperimentOutputs ob = run_experiment(c, b.path);
  const std::string text = slurp(oa.jsonl);
  EXPECT_EQ(text, slurp(ob.jsonl));
  EXPECT_EQ(slurp(oa.comparison), slurp(ob.comparison));

  std::istringstream lines(text);
  std::string line;
  std::map<std::string, std::size_t> next_round;
  const std::vector<std::string> keys = {"round", "mode", "clock", "completion", "avg_wait", "avg_wait_all",
                                         "realized_kl", "plan_kl", "budget_estimate", "bandwidth", "planned_spend",
                                         "utilization", "overload", "train_loss", "test_accuracy", "retries",
                                         "epsilon_unreachable", "workers", "batches", "config_hash", "seed",
                                         "target_accuracy"};
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const std::string& k : keys) EXPECT_TRUE(j.contains(k)) << k;
    const std::string mode = j["mode"];
    EXPECT_EQ(j["round"].get<std::size_t>(), next_round[mode]++);
    EXPECT_EQ(j["config_hash"], config_hash(c));
    EXPECT_EQ(j["workers"].size(), j["batches"].size());
    if (!j["overload"].get<bool>()) {
      EXPECT_LE(j["utilization"].get<double>(), 1.0);
    }
  }
  EXPECT_EQ(next_round.size(), 3u);
  for (const auto& [mode, n] : next_round) EXPECT_EQ(n, c.rounds) << mode;
}

TEST(RunExperiment, TimeBudgetStopsEveryMode) {
  ExperimentConfig c = small_config();
  c.rounds = 50;
  c.time_budget = 0.0;
  // budget: enough for three rounds of the slowest mode
  double budget = 0.0;
  for (Mode m : c.modes) budget = std::max(budget, run_mode(c, m).rounds.at(2).clock);
  c.time_budget = budget;
  for (Mode m : c.modes) {
    const ModeRun run = run_mode(c, m);
    EXPECT_TRUE(run.budget_exhausted);
    ASSERT_FALSE(run.rounds.empty());
    EXPECT_LE(run.rounds.back().clock, c.time_budget);
    std::size_t total = 0;
    for (std::size_t k : run.participations) total += k;
    std::size_t selected = 0;
    for (const RoundMetrics& r : run.rounds) selected += r.workers.size();
    EXPECT_EQ(total, selected);
  }
}

TEST(Compare, IdenticalRunsGiveUnitRatios) {
  RunRecord a{"a", "h", 1, 0.5, {1, 2, 3}, {0.2, 0.6, 0.7}, {0.1, 0.1, 0.1}, {0, 1, 2}};
  RunRecord b = a;
  b.label = "b";
  const Comparison c = compare_report({a, b});
  ASSERT_EQ(c.modes.size(), 2u);
  for (const ModeSummary& s : c.modes) {
    ASSERT_TRUE(s.speedup);
    EXPECT_EQ(*s.speedup, 1.0);
    EXPECT_EQ(*s.time_to_target, 2.0);
    EXPECT_EQ(s.final_accuracy, 0.7);
  }
}

TEST(Compare, HalfTimeMeansSpeedupTwo) {
  RunRecord a{"slow", "h", 1, 0.5, {2, 4, 6}, {0.1, 0.2, 0.6}, {1, 1, 1}, {0, 1, 2}};
  RunRecord b{"fast", "h", 1, 0.5, {1, 2, 3}, {0.1, 0.2, 0.6}, {0, 0, 0}, {0, 1, 2}};
  const Comparison c = compare_report({a, b});
  EXPECT_DOUBLE_EQ(*c.modes[1].speedup, 2.0);
  EXPECT_DOUBLE_EQ(c.modes[0].mean_avg_wait, 1.0);
}

TEST(Compare, UnreachedTargetIsNullAndExcluded) {
  RunRecord a{"a", "h", 1, 0.9, {1, 2}, {0.2, 0.95}, {0, 0}, {0, 1}};
  RunRecord b{"b", "h", 1, 0.9, {1, 2}, {0.2, 0.3}, {0, 0}, {0, 1}};
  const Comparison c = compare_report({a, b});
  EXPECT_FALSE(c.modes[1].time_to_target);
  EXPECT_FALSE(c.modes[1].speedup);
  const auto j = nlohmann::json::parse(comparison_json(c));
  EXPECT_TRUE(j["modes"][1]["time_to_target"].is_null());
  EXPECT_TRUE(j["modes"][1]["speedup"].is_null());
  EXPECT_EQ(j["modes"][0]["speedup"], 1.0);
}

TEST(Compare, MismatchedRunsAreRejected) {
  RunRecord a{"a", "h", 1, 0.9, {1}, {0.2}, {0}, {0}};
  RunRecord b = a;
  b.config_hash = "g";
  EXPECT_THROW(compare_report({a, b}), ValidationError);
  b = a;
  b.seed = 2;
  EXPECT_THROW(compare_report({a, b}), ValidationError);
  EXPECT_THROW(compare_report({a}), ValidationError);
}

TEST(Compare, ReadRunsRecomputesFromJsonl) {
  const ExperimentConfig c = small_config();
  TempDir dir("mergesfl_read_runs");
  const ExperimentOutputs out = run_experiment(c, dir.path);
  const std::vector<RunRecord> runs = read_runs(dir.path);
  ASSERT_EQ(runs.size(), 3u);
  EXPECT_EQ(runs[0].label, "mergesfl");
  EXPECT_EQ(comparison_json(compare_report(runs)), slurp(out.comparison));

  fs::copy_file(out.jsonl, dir.path / "again.jsonl");
  const std::vector<RunRecord> doubled = read_runs(dir.path);
  ASSERT_EQ(doubled.size(), 6u);
  EXPECT_EQ(doubled[0].label, "again:mergesfl");

  std::ofstream(dir.path / "broken.jsonl") << "{\"mode\": 3}\n";
  EXPECT_THROW(read_runs(dir.path), ValidationError);
}
