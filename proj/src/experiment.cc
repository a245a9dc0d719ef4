#include "mergesfl/experiment.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mergesfl/data.h"
#include "mergesfl/model.h"

namespace mergesfl {
namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr std::uint64_t kHoldoutTag = 0x484f4c44ULL;
constexpr std::uint64_t kPartitionTag = 0x50415254ULL;
constexpr std::uint64_t kEnvTag = 0x454e5649ULL;
constexpr std::uint64_t kBandwidthTag = 0x42414e44ULL;
constexpr std::uint64_t kNoiseTag = 0x4e4f4953ULL;
constexpr std::uint64_t kModelTag = 0x4d4f444cULL;
constexpr std::uint64_t kPlanTag = 0x504c414eULL;
constexpr std::uint64_t kBaselineTag = 0x42415345ULL;

std::uint64_t derive(std::uint64_t seed, std::uint64_t tag, std::uint64_t extra = 0) {
  Rng rng = make_rng({seed, tag, extra});
  return rng();
}

// ---------------------------------------------------------------------------
// Configuration parsing.

std::size_t line_at(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Line of the key `path` (outer to inner), found by scanning for each quoted
// key followed by a colon. Falls back to the innermost key found.
std::size_t locate(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  std::size_t found = std::string::npos;
  for (const std::string& key : path) {
    const std::string quoted = "\"" + key + "\"";
    std::size_t at = text.find(quoted, pos);
    while (at != std::string::npos) {
      std::size_t after = at + quoted.size();
      while (after < text.size() && std::isspace(static_cast<unsigned char>(text[after]))) ++after;
      if (after < text.size() && text[after] == ':') break;
      at = text.find(quoted, at + 1);
    }
    if (at == std::string::npos) break;
    found = at;
    pos = at + quoted.size();
  }
  return found == std::string::npos ? 1 : line_at(text, found);
}

class Reader {
 public:
  Reader(const std::string& text, const std::string& source) : text_(text), source_(source) {}

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& message) const {
    std::string name;
    for (const std::string& p : path) name += (name.empty() ? "" : ".") + p;
    throw ConfigError(source_, locate(text_, path), "'" + name + "' " + message);
  }

  void check_keys(const json& obj, const std::vector<std::string>& prefix, const std::set<std::string>& allowed) const {
    for (const auto& [key, value] : obj.items()) {
      if (!allowed.contains(key)) {
        std::vector<std::string> path = prefix;
        path.push_back(key);
        fail(path, "is not a recognized setting");
      }
    }
  }

  template <typename T>
  void unsigned_value(const json& obj, std::vector<std::string> path, T& out, std::uint64_t lo, std::uint64_t hi) const {
    const json* v = find(obj, path);
    if (!v) return;
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
      fail(path, "must be a non-negative integer");
    }
    const auto x = v->get<std::uint64_t>();
    if (x < lo || x > hi) fail(path, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    out = static_cast<T>(x);
  }

  void real_value(const json& obj, std::vector<std::string> path, double& out, double lo, double hi,
                  bool open_low = false) const {
    const json* v = find(obj, path);
    if (!v) return;
    if (!v->is_number()) fail(path, "must be a number");
    const double x = v->get<double>();
    if (!std::isfinite(x) || x < lo || x > hi || (open_low && x == lo)) {
      std::ostringstream range;
      range << (open_low ? "(" : "[") << lo << ", " << hi << "]";
      fail(path, "must lie in " + range.str());
    }
    out = x;
  }

  const json* object(const json& obj, const std::vector<std::string>& path) const {
    const json* v = find(obj, path);
    if (v && !v->is_object()) fail(path, "must be an object");
    return v;
  }

 private:
  static const json* find(const json& obj, const std::vector<std::string>& path) {
    const auto it = obj.find(path.back());
    return it == obj.end() ? nullptr : &*it;
  }

  const std::string& text_;
  const std::string& source_;
};

constexpr double kHuge = 1e300;
constexpr std::uint64_t kMaxCount = 1'000'000'000ULL;

double p_of(double delta) { return std::isinf(delta) ? 0.0 : 1.0 / delta; }

// ---------------------------------------------------------------------------
// Formatting.

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

template <typename T>
double mean_of(const std::vector<RoundMetrics>& rounds, T field) {
  if (rounds.empty()) return 0.0;
  double s = 0.0;
  for (const RoundMetrics& m : rounds) s += field(m);
  return s / static_cast<double>(rounds.size());
}

RunRecord record_of(const ModeRun& run, const ExperimentConfig& config) {
  RunRecord r;
  r.label = std::string(mode_name(run.mode));
  r.config_hash = config_hash(config);
  r.seed = config.seed;
  r.target_accuracy = config.target_accuracy;
  for (const RoundMetrics& m : run.rounds) {
    r.round.push_back(m.round);
    r.clock.push_back(m.clock);
    r.accuracy.push_back(m.test_accuracy);
    r.avg_wait.push_back(m.avg_wait);
  }
  return r;
}

std::optional<double> time_to_target(const RunRecord& r) {
  for (std::size_t i = 0; i < r.accuracy.size(); ++i) {
    if (r.accuracy[i] >= r.target_accuracy) return r.clock[i];
  }
  return std::nullopt;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed: " + path.string());
}

std::string summary_csv(const ModeRun& run, const ExperimentConfig& config) {
  const std::vector<RoundMetrics>& r = run.rounds;
  std::optional<double> tta;
  double best = 0.0;
  std::size_t overloads = 0;
  for (const RoundMetrics& m : r) {
    if (!tta && m.test_accuracy >= config.target_accuracy) tta = m.clock;
    best = std::max(best, m.test_accuracy);
    overloads += m.overload ? 1 : 0;
  }
  std::string out =
      "mode,rounds,total_time,final_accuracy,best_accuracy,time_to_target,mean_avg_wait,mean_avg_wait_all,"
      "mean_completion,mean_realized_kl,mean_plan_kl,mean_utilization,overloads,budget_exhausted\n";
  out += std::string(mode_name(run.mode)) + "," + std::to_string(r.size()) + ",";
  out += fmt(r.empty() ? 0.0 : r.back().clock) + ",";
  out += fmt(r.empty() ? 0.0 : r.back().test_accuracy) + "," + fmt(best) + ",";
  out += (tta ? fmt(*tta) : std::string()) + ",";
  out += fmt(mean_of(r, [](const RoundMetrics& m) { return m.avg_wait; })) + ",";
  out += fmt(mean_of(r, [](const RoundMetrics& m) { return m.avg_wait_all; })) + ",";
  out += fmt(mean_of(r, [](const RoundMetrics& m) { return m.completion; })) + ",";
  out += fmt(mean_of(r, [](const RoundMetrics& m) { return m.realized_kl; })) + ",";
  out += fmt(mean_of(r, [](const RoundMetrics& m) { return m.plan_kl; })) + ",";
  out += fmt(mean_of(r, [](const RoundMetrics& m) { return m.utilization; })) + ",";
  out += std::to_string(overloads) + "," + (run.budget_exhausted ? "true" : "false") + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Simulation world shared by all modes of one configuration.

struct World {
  Dataset test;
  std::vector<Shard> shards;
  std::vector<LabelDistribution> distributions;
  LabelDistribution reference;
  std::vector<WorkerProfile> profiles;
};

World build_world(const ExperimentConfig& c) {
  World w;
  const ClusterSpec spec{c.classes, c.per_class, c.dim, c.separation};
  const Dataset data = generate_dataset(c.seed, spec);
  HoldoutSplit split = split_holdout(data, c.holdout, derive(c.seed, kHoldoutTag));
  if (split.train.size() < c.workers) {
    throw InfeasibleError("training set of " + std::to_string(split.train.size()) + " rows cannot cover " +
                          std::to_string(c.workers) + " workers");
  }
  w.test = std::move(split.test);
  w.shards = partition_dirichlet(split.train, c.workers, c.delta, derive(c.seed, kPartitionTag));
  for (const Shard& s : w.shards) w.distributions.push_back(label_distribution(s.labels, c.classes));
  w.reference = iid_reference(w.distributions);
  EnvConfig env = c.env;
  env.workers = c.workers;
  env.seed = derive(c.seed, kEnvTag);
  w.profiles = make_profiles(env);
  return w;
}

RoundAssignment baseline_assignment(const ExperimentConfig& c, double budget, std::size_t round) {
  const double per_worker = c.sample_cost * c.fixed_batch;
  const auto fits = static_cast<std::size_t>(std::floor(budget / per_worker));
  const std::size_t r = std::min(c.workers, fits);
  if (r == 0) throw InfeasibleError("bandwidth estimate cannot carry one fixed-size batch");
  Rng rng = make_rng({c.seed, kBaselineTag, round});
  std::vector<std::size_t> pool(c.workers);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t span = c.workers - k;
    const std::size_t j = k + std::min(span - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(span)));
    std::swap(pool[k], pool[j]);
  }
  RoundAssignment a;
  a.workers.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(r));
  std::sort(a.workers.begin(), a.workers.end());
  a.batches.assign(r, c.fixed_batch);
  return a;
}

}  // namespace

ConfigError::ConfigError(const std::string& source, std::size_t line, const std::string& message)
    : ValidationError(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

ControllerConfig ExperimentConfig::controller() const {
  ControllerConfig cc;
  cc.max_batch = max_batch;
  cc.epsilon = epsilon;
  cc.sample_cost = sample_cost;
  cc.ga = ga;
  cc.finetune = finetune;
  cc.finetune.epsilon = epsilon;
  cc.finetune.max_batch = max_batch;
  return cc;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t byte = e.byte == 0 ? 0 : e.byte - 1;
    std::string what = e.what();
    const auto cut = what.find("syntax error");
    throw ConfigError(source, line_at(text, byte), "invalid JSON: " + (cut == std::string::npos ? what : what.substr(cut)));
  }
  if (!root.is_object()) throw ConfigError(source, 1, "top level must be an object");

  const Reader rd(text, source);
  ExperimentConfig c;
  rd.check_keys(root, {},
                {"seed", "rounds", "workers", "tau", "max_batch", "epsilon", "alpha", "classes", "dim", "per_class",
                 "separation", "holdout", "p", "delta", "hidden", "lr_top", "lr_bottom", "fixed_batch",
                 "target_accuracy", "time_budget", "env", "estimator", "ga", "finetune", "modes"});

  rd.unsigned_value(root, {"seed"}, c.seed, 0, UINT64_MAX);
  rd.unsigned_value(root, {"rounds"}, c.rounds, 0, kMaxCount);
  rd.unsigned_value(root, {"workers"}, c.workers, 1, 100000);
  rd.unsigned_value(root, {"tau"}, c.tau, 0, kMaxCount);
  rd.unsigned_value(root, {"max_batch"}, c.max_batch, 1, 1 << 20);
  rd.real_value(root, {"epsilon"}, c.epsilon, 0.0, kHuge);
  rd.real_value(root, {"alpha"}, c.alpha, 0.0, 1.0);
  rd.unsigned_value(root, {"classes"}, c.classes, 2, 100000);
  rd.unsigned_value(root, {"dim"}, c.dim, 1, 100000);
  rd.unsigned_value(root, {"per_class"}, c.per_class, 1, kMaxCount);
  rd.real_value(root, {"separation"}, c.separation, 0.0, kHuge);
  rd.real_value(root, {"holdout"}, c.holdout, 0.0, 0.9, true);
  if (root.contains("p") && root.contains("delta")) rd.fail({"delta"}, "cannot be combined with 'p' (p = 1/delta)");
  if (root.contains("p")) {
    double p = 0.0;
    rd.real_value(root, {"p"}, p, 0.0, kHuge);
    c.delta = p == 0.0 ? kIidConcentration : 1.0 / p;
  }
  rd.real_value(root, {"delta"}, c.delta, 0.0, kHuge, true);
  rd.unsigned_value(root, {"hidden"}, c.hidden, 1, 100000);
  rd.real_value(root, {"lr_top"}, c.lr_top, 0.0, kHuge);
  rd.real_value(root, {"lr_bottom"}, c.lr_bottom, 0.0, kHuge);
  rd.unsigned_value(root, {"fixed_batch"}, c.fixed_batch, 1, 1 << 20);
  rd.real_value(root, {"target_accuracy"}, c.target_accuracy, 0.0, 1.0);
  rd.real_value(root, {"time_budget"}, c.time_budget, 0.0, kHuge);
  if (c.fixed_batch > c.max_batch) rd.fail({"fixed_batch"}, "must not exceed max_batch");

  if (const json* env = rd.object(root, {"env"})) {
    rd.check_keys(*env, {"env"},
                  {"spread", "base_cost", "mode_spread", "mode_period", "noise_sigma", "sample_cost", "bandwidth_mean",
                   "bandwidth_jitter"});
    rd.real_value(*env, {"env", "spread"}, c.env.spread, 1.0, kHuge);
    rd.real_value(*env, {"env", "base_cost"}, c.env.base_cost, 0.0, kHuge, true);
    rd.real_value(*env, {"env", "mode_spread"}, c.env.mode_spread, 1.0, kHuge);
    rd.unsigned_value(*env, {"env", "mode_period"}, c.env.mode_period, 1, kMaxCount);
    rd.real_value(*env, {"env", "noise_sigma"}, c.env.noise_sigma, 0.0, 10.0);
    rd.real_value(*env, {"env", "sample_cost"}, c.sample_cost, 0.0, kHuge, true);
    rd.real_value(*env, {"env", "bandwidth_mean"}, c.env.bandwidth_mean, 0.0, kHuge, true);
    rd.real_value(*env, {"env", "bandwidth_jitter"}, c.env.bandwidth_jitter, 0.0, 10.0);
  }
  if (const json* est = rd.object(root, {"estimator"})) {
    rd.check_keys(*est, {"estimator"}, {"window", "quantile"});
    rd.unsigned_value(*est, {"estimator", "window"}, c.estimator.window, 1, kMaxCount);
    rd.real_value(*est, {"estimator", "quantile"}, c.estimator.quantile, 0.0, 1.0);
  }
  c.estimator.alpha = c.alpha;
  if (const json* ga = rd.object(root, {"ga"})) {
    rd.check_keys(*ga, {"ga"},
                  {"population", "generations", "tournament", "crossover", "mutation", "elites", "priority_slack"});
    rd.unsigned_value(*ga, {"ga", "population"}, c.ga.population, 2, 100000);
    rd.unsigned_value(*ga, {"ga", "generations"}, c.ga.generations, 0, 100000);
    rd.unsigned_value(*ga, {"ga", "tournament"}, c.ga.tournament, 1, 100000);
    rd.real_value(*ga, {"ga", "crossover"}, c.ga.crossover, 0.0, 1.0);
    rd.real_value(*ga, {"ga", "mutation"}, c.ga.mutation, 0.0, 1.0);
    rd.unsigned_value(*ga, {"ga", "elites"}, c.ga.elites, 0, 100000);
    rd.real_value(*ga, {"ga", "priority_slack"}, c.ga.priority_slack, 0.0, kHuge);
    if (c.ga.elites >= c.ga.population) rd.fail({"ga", "elites"}, "must be smaller than the population");
  }
  if (const json* ft = rd.object(root, {"finetune"})) {
    rd.check_keys(*ft, {"finetune"}, {"outer_steps", "inner_steps", "outer_step", "inner_step"});
    rd.unsigned_value(*ft, {"finetune", "outer_steps"}, c.finetune.outer_steps, 0, 100000);
    rd.unsigned_value(*ft, {"finetune", "inner_steps"}, c.finetune.inner_steps, 0, 100000);
    rd.real_value(*ft, {"finetune", "outer_step"}, c.finetune.outer_step, 0.0, kHuge, true);
    rd.real_value(*ft, {"finetune", "inner_step"}, c.finetune.inner_step, 0.0, kHuge, true);
  }
  c.finetune.epsilon = c.epsilon;
  c.finetune.max_batch = c.max_batch;
  if (root.contains("modes")) {
    const json& modes = root["modes"];
    if (!modes.is_array() || modes.empty()) rd.fail({"modes"}, "must be a nonempty array of mode names");
    c.modes.clear();
    for (const json& m : modes) {
      if (!m.is_string()) rd.fail({"modes"}, "must contain only strings");
      Mode mode;
      try {
        mode = parse_mode(m.get<std::string>());
      } catch (const ValidationError& e) {
        rd.fail({"modes"}, e.what());
      }
      if (std::find(c.modes.begin(), c.modes.end(), mode) != c.modes.end()) rd.fail({"modes"}, "lists a mode twice");
      c.modes.push_back(mode);
    }
  }
  c.env.workers = c.workers;
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string dump_config(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["rounds"] = c.rounds;
  j["workers"] = c.workers;
  j["tau"] = c.tau;
  j["max_batch"] = c.max_batch;
  j["epsilon"] = c.epsilon;
  j["alpha"] = c.alpha;
  j["classes"] = c.classes;
  j["dim"] = c.dim;
  j["per_class"] = c.per_class;
  j["separation"] = c.separation;
  j["holdout"] = c.holdout;
  j["p"] = p_of(c.delta);
  j["hidden"] = c.hidden;
  j["lr_top"] = c.lr_top;
  j["lr_bottom"] = c.lr_bottom;
  j["fixed_batch"] = c.fixed_batch;
  j["target_accuracy"] = c.target_accuracy;
  j["time_budget"] = c.time_budget;
  j["env"] = {{"spread", c.env.spread},
              {"base_cost", c.env.base_cost},
              {"mode_spread", c.env.mode_spread},
              {"mode_period", c.env.mode_period},
              {"noise_sigma", c.env.noise_sigma},
              {"sample_cost", c.sample_cost},
              {"bandwidth_mean", c.env.bandwidth_mean},
              {"bandwidth_jitter", c.env.bandwidth_jitter}};
  j["estimator"] = {{"window", c.estimator.window}, {"quantile", c.estimator.quantile}};
  j["ga"] = {{"population", c.ga.population}, {"generations", c.ga.generations}, {"tournament", c.ga.tournament},
             {"crossover", c.ga.crossover},   {"mutation", c.ga.mutation},       {"elites", c.ga.elites},
             {"priority_slack", c.ga.priority_slack}};
  j["finetune"] = {{"outer_steps", c.finetune.outer_steps},
                   {"inner_steps", c.finetune.inner_steps},
                   {"outer_step", c.finetune.outer_step},
                   {"inner_step", c.finetune.inner_step}};
  ordered_json modes = ordered_json::array();
  for (Mode m : c.modes) modes.push_back(std::string(mode_name(m)));
  j["modes"] = modes;
  return j.dump(2);
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Shard> training_shards(const ExperimentConfig& config) { return build_world(config).shards; }

ModeRun run_mode(const ExperimentConfig& c, Mode mode) {
  const World world = build_world(c);
  const ControllerConfig controller = c.controller();
  const BandwidthProcess bandwidth(c.env.bandwidth_mean, c.env.bandwidth_jitter, derive(c.seed, kBandwidthTag));
  const std::uint64_t noise_seed = derive(c.seed, kNoiseTag);
  SplitModel model = SplitModel::mlp(c.dim, c.hidden, c.classes, derive(c.seed, kModelTag));

  // Cold start: one noise-free observation per worker.
  std::vector<WorkerEstimate> estimates(c.workers);
  for (std::size_t i = 0; i < c.workers; ++i) {
    const Capability truth = world.profiles[i].truth(0);
    estimates[i].mu = truth.mu;
    estimates[i].beta = truth.beta;
    estimates[i].distribution = world.distributions[i];
  }

  ModeRun run;
  run.mode = mode;
  std::vector<double> history;
  double clock = 0.0;
  for (std::size_t h = 0; h < c.rounds; ++h) {
    const double realized = bandwidth.draw(h);
    const double estimate = estimate_bandwidth(history, c.env.bandwidth_mean, c.estimator.window, c.estimator.quantile);

    RoundMetrics m;
    m.round = h;
    m.mode = mode;
    m.budget_estimate = estimate;
    m.bandwidth = realized;

    RoundAssignment assignment;
    if (mode == Mode::kMergeSfl) {
      const MergePlan plan = build_plan(estimates, world.reference, estimate, controller, derive(c.seed, kPlanTag, h));
      assignment.workers = plan.workers;
      assignment.batches = plan.batches;
      m.plan_kl = plan.kl;
      m.retries = plan.retries;
      m.epsilon_unreachable = plan.epsilon_unreachable;
    } else {
      assignment = baseline_assignment(c, estimate, h);
      std::vector<LabelDistribution> members;
      for (std::size_t w : assignment.workers) members.push_back(world.distributions[w]);
      m.plan_kl = kl_divergence(merged_distribution(assignment.batches, members), world.reference);
      for (std::size_t w : assignment.workers) ++estimates[w].participations;
    }
    m.planned_spend =
        static_cast<double>(std::accumulate(assignment.batches.begin(), assignment.batches.end(), 0LL)) * c.sample_cost;
    m.utilization = m.planned_spend / realized;
    m.overload = m.planned_spend > realized;

    std::vector<double> costs(c.workers);
    for (std::size_t i = 0; i < c.workers; ++i) costs[i] = world.profiles[i].truth(h).cost();

    if (c.time_budget > 0.0) {
      double completion = 0.0;
      for (std::size_t i = 0; i < assignment.workers.size(); ++i) {
        completion = std::max(completion, duration(static_cast<double>(c.tau), assignment.batches[i],
                                                   costs[assignment.workers[i]], 0.0));
      }
      if (clock + completion > c.time_budget) {
        // The round never ran.
        for (std::size_t w : assignment.workers) --estimates[w].participations;
        run.budget_exhausted = true;
        break;
      }
    }

    const RoundContext ctx{world.shards, world.test, world.reference, costs, c.tau, c.max_batch,
                           c.lr_top,     c.lr_bottom, c.seed,         h};
    const RoundResult r = run_round(mode, model, assignment, ctx);
    clock += r.completion;

    m.clock = clock;
    m.completion = r.completion;
    m.avg_wait = r.avg_wait;
    m.avg_wait_all = r.avg_wait_all;
    m.realized_kl = r.realized_kl;
    m.train_loss = r.train_loss;
    m.test_accuracy = r.test_accuracy;
    m.workers = assignment.workers;
    m.batches = assignment.batches;

    for (std::size_t w : assignment.workers) {
      const Capability obs = observe_capabilities(world.profiles[w], h, noise_seed, c.env.noise_sigma);
      WorkerEstimate& e = estimates[w];
      e = update_estimate(e, obs.mu, obs.beta, c.alpha);
    }
    history.push_back(realized);
    run.rounds.push_back(std::move(m));
  }
  for (const WorkerEstimate& e : estimates) run.participations.push_back(e.participations);
  return run;
}

std::string metrics_json(const RoundMetrics& m, const ExperimentConfig& config) {
  ordered_json j;
  j["round"] = m.round;
  j["mode"] = std::string(mode_name(m.mode));
  j["clock"] = m.clock;
  j["completion"] = m.completion;
  j["avg_wait"] = m.avg_wait;
  j["avg_wait_all"] = m.avg_wait_all;
  j["realized_kl"] = m.realized_kl;
  j["plan_kl"] = m.plan_kl;
  j["budget_estimate"] = m.budget_estimate;
  j["bandwidth"] = m.bandwidth;
  j["planned_spend"] = m.planned_spend;
  j["utilization"] = m.utilization;
  j["overload"] = m.overload;
  j["train_loss"] = m.train_loss;
  j["test_accuracy"] = m.test_accuracy;
  j["retries"] = m.retries;
  j["epsilon_unreachable"] = m.epsilon_unreachable;
  j["workers"] = m.workers;
  j["batches"] = m.batches;
  j["config_hash"] = config_hash(config);
  j["seed"] = config.seed;
  j["target_accuracy"] = config.target_accuracy;
  return j.dump();
}

Comparison compare_report(const std::vector<RunRecord>& runs) {
  if (runs.size() < 2) throw ValidationError("compare_report: need at least two runs");
  const RunRecord& first = runs.front();
  for (const RunRecord& r : runs) {
    if (r.config_hash != first.config_hash || r.seed != first.seed || r.target_accuracy != first.target_accuracy) {
      throw ValidationError("compare_report: run '" + r.label + "' has a different config, seed or target than '" +
                            first.label + "'");
    }
    if (r.clock.size() != r.accuracy.size() || r.clock.size() != r.avg_wait.size()) {
      throw ValidationError("compare_report: run '" + r.label + "' has ragged records");
    }
  }
  Comparison out;
  out.config_hash = first.config_hash;
  out.seed = first.seed;
  out.target_accuracy = first.target_accuracy;
  const std::optional<double> base = time_to_target(first);
  for (const RunRecord& r : runs) {
    ModeSummary s;
    s.label = r.label;
    s.rounds = r.accuracy.size();
    s.time_to_target = time_to_target(r);
    s.final_accuracy = r.accuracy.empty() ? 0.0 : r.accuracy.back();
    double wait = 0.0;
    for (double w : r.avg_wait) wait += w;
    s.mean_avg_wait = r.avg_wait.empty() ? 0.0 : wait / static_cast<double>(r.avg_wait.size());
    if (base && s.time_to_target && *s.time_to_target > 0.0) s.speedup = *base / *s.time_to_target;
    out.modes.push_back(std::move(s));
  }
  return out;
}

std::string comparison_json(const Comparison& c) {
  ordered_json j;
  j["config_hash"] = c.config_hash;
  j["seed"] = c.seed;
  j["target_accuracy"] = c.target_accuracy;
  j["baseline"] = c.modes.empty() ? std::string() : c.modes.front().label;
  ordered_json modes = ordered_json::array();
  for (const ModeSummary& s : c.modes) {
    ordered_json m;
    m["mode"] = s.label;
    m["rounds"] = s.rounds;
    m["time_to_target"] = s.time_to_target ? ordered_json(*s.time_to_target) : ordered_json(nullptr);
    m["final_accuracy"] = s.final_accuracy;
    m["mean_avg_wait"] = s.mean_avg_wait;
    m["speedup"] = s.speedup ? ordered_json(*s.speedup) : ordered_json(nullptr);
    modes.push_back(m);
  }
  j["modes"] = modes;
  return j.dump(2) + "\n";
}

std::vector<RunRecord> read_runs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  struct Keyed {
    std::string file;
    std::string mode;
    RunRecord record;
  };
  std::vector<Keyed> runs;
  for (const auto& path : files) {
    std::ifstream in(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const std::string where = path.filename().string() + ":" + std::to_string(lineno);
      json j;
      try {
        j = json::parse(line);
        const std::string mode = j.at("mode").get<std::string>();
        auto it = std::find_if(runs.begin(), runs.end(),
                               [&](const Keyed& k) { return k.file == path.string() && k.mode == mode; });
        if (it == runs.end()) {
          runs.push_back({path.string(), mode, {}});
          it = runs.end() - 1;
          it->record.config_hash = j.at("config_hash").get<std::string>();
          it->record.seed = j.at("seed").get<std::uint64_t>();
          it->record.target_accuracy = j.at("target_accuracy").get<double>();
        } else if (it->record.config_hash != j.at("config_hash").get<std::string>()) {
          throw ValidationError("config hash changes within one run");
        }
        it->record.round.push_back(j.at("round").get<std::size_t>());
        it->record.clock.push_back(j.at("clock").get<double>());
        it->record.accuracy.push_back(j.at("test_accuracy").get<double>());
        it->record.avg_wait.push_back(j.at("avg_wait").get<double>());
      } catch (const json::exception& e) {
        throw ValidationError(where + ": malformed metrics record: " + e.what());
      } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
      }
    }
  }
  std::map<std::string, std::size_t> mode_count;
  for (const Keyed& k : runs) ++mode_count[k.mode];
  std::vector<RunRecord> out;
  for (Keyed& k : runs) {
    k.record.label = mode_count[k.mode] > 1 ? std::filesystem::path(k.file).stem().string() + ":" + k.mode : k.mode;
    out.push_back(std::move(k.record));
  }
  return out;
}

ExperimentOutputs run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  ExperimentOutputs outputs;
  outputs.jsonl = out_dir / "rounds.jsonl";

  std::string jsonl;
  std::vector<RunRecord> records;
  for (Mode mode : config.modes) {
    const ModeRun run = run_mode(config, mode);
    for (const RoundMetrics& m : run.rounds) jsonl += metrics_json(m, config) + "\n";
    const auto summary = out_dir / ("summary_" + std::string(mode_name(mode)) + ".csv");
    write_text(summary, summary_csv(run, config));
    outputs.summaries.push_back(summary);
    records.push_back(record_of(run, config));
  }
  write_text(outputs.jsonl, jsonl);
  if (records.size() >= 2) {
    outputs.comparison = out_dir / "comparison.json";
    write_text(outputs.comparison, comparison_json(compare_report(records)));
  }
  return outputs;
}

}  // namespace mergesfl
