// mergesfl: run experiments, compare runs, export shards, run the self-test.

#include <cstdio>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "criteria.h"
#include "mergesfl/data.h"
#include "mergesfl/experiment.h"
#include "mergesfl/shard_io.h"

namespace fs = std::filesystem;
using namespace mergesfl;

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  const ExperimentConfig config = load_config(config_path);
  const ExperimentOutputs out = run_experiment(config, out_dir);
  std::cout << "config " << config_hash(config) << "\n";
  std::cout << "wrote " << out.jsonl.string() << "\n";
  for (const auto& s : out.summaries) std::cout << "wrote " << s.string() << "\n";
  if (!out.comparison.empty()) std::cout << "wrote " << out.comparison.string() << "\n";
  return 0;
}

int cmd_compare(const std::string& dir, const std::string& out_file) {
  const std::string report = comparison_json(compare_report(read_runs(dir)));
  if (out_file.empty()) {
    std::cout << report;
  } else {
    std::ofstream(out_file) << report;
    std::cout << "wrote " << out_file << "\n";
  }
  return 0;
}

int cmd_export(const std::string& config_path, const std::string& out_dir) {
  const ExperimentConfig c = load_config(config_path);
  const std::vector<Shard> shards = training_shards(c);
  write_shards(out_dir, shards, c.classes);
  std::cout << "wrote " << shards.size() << " shards to " << out_dir << "\n";
  return 0;
}

int cmd_selftest(const std::string& filter, bool quick) {
  std::size_t failed = 0;
  for (const acceptance::Criterion& c : acceptance::all_criteria()) {
    if (!filter.empty() && c.id.find(filter) == std::string::npos) continue;
    const acceptance::Outcome o = c.run(quick);
    std::printf("%s  %-28s %s (%.1fs)\n", o.passed ? "PASS" : "FAIL", c.id.c_str(), o.detail.c_str(), o.seconds);
    failed += o.passed ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MergeSFL split federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs", dir, out_file, filter;
  bool quick = false;

  auto* run = app.add_subcommand("run", "Run every mode of an experiment config");
  run->add_option("config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--out", out_dir, "Output directory")->capture_default_str();

  auto* compare = app.add_subcommand("compare", "Compare runs from the *.jsonl files in a directory");
  compare->add_option("dir", dir, "Directory with metrics JSONL")->required()->check(CLI::ExistingDirectory);
  compare->add_option("-o,--out", out_file, "Write the comparison JSON here instead of stdout");

  auto* selftest = app.add_subcommand("selftest", "Run the oracle and property checks");
  selftest->add_option("-f,--filter", filter, "Only criteria whose id contains this text");
  selftest->add_flag("--quick", quick, "Fewer instances and seeds");

  auto* shards = app.add_subcommand("export-shards", "Write the partitioned dataset as binary shards");
  shards->add_option("config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);
  shards->add_option("dir", dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, out_dir);
    if (*compare) return cmd_compare(dir, out_file);
    if (*selftest) return cmd_selftest(filter, quick);
    if (*shards) return cmd_export(config_path, dir);
  } catch (const mergesfl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
