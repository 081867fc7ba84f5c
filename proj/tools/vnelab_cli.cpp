// vnelab: simulations, training and evaluation from the command line.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vnelab/bench.hpp"
#include "vnelab/errors.hpp"
#include "vnelab/heuristics.hpp"
#include "vnelab/selfcheck.hpp"
#include "vnelab/trainer.hpp"

namespace fs = std::filesystem;
using namespace vnelab;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out = "out";
};

TrainConfig load_config(const Common& c, TrainConfig base = {}) {
  auto apply = [&](const std::string& key, const std::string& value) {
    if (!base.set(key, value)) throw ConfigError(key, "unknown key");
  };
  if (!c.config_path.empty())
    for (const auto& kv : parse_key_values(read_text_file(c.config_path))) apply(kv.key, kv.value);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
    apply(o.substr(0, eq), o.substr(eq + 1));
  }
  base.validate();
  return base;
}

struct SolverChoice {
  std::string name = "grc";
  std::string checkpoint;
  std::string mapping = "two-stage";
  std::string routing = "subgraph";
  int max_hops = 5;
};

GreedyOptions greedy_options(const SolverChoice& c, int k_paths) {
  GreedyOptions o;
  o.k = k_paths;
  o.max_hops = c.max_hops;
  if (c.mapping == "two-stage") o.mapping = MappingMode::TwoStage;
  else if (c.mapping == "incremental") o.mapping = MappingMode::Incremental;
  else throw UsageError("--mapping expects two-stage or incremental");
  if (c.routing == "subgraph") o.routing = LinkRouting::FeasibleSubgraph;
  else if (c.routing == "kshortest") o.routing = LinkRouting::KShortest;
  else throw UsageError("--routing expects subgraph or kshortest");
  return o;
}

SolverFactory solver_factory(const SolverChoice& c, int k_paths) {
  const std::string& name = c.name;
  const std::string& checkpoint = c.checkpoint;
  if (name == "nrm" || name == "grc") {
    const GreedyOptions o = greedy_options(c, k_paths);
    const RankingKind kind = name == "nrm" ? RankingKind::Nrm : RankingKind::Grc;
    return [o, kind] { return std::make_unique<NodeRankSolver>(kind, o); };
  }
  if (name == "exhaustive") return [] { return std::make_unique<ExhaustiveSolver>(); };
  if (name == "conal") {
    if (checkpoint.empty()) throw UsageError("--solver conal needs --checkpoint <prefix>");
    auto policy = std::make_shared<ConalPolicy>(ConalPolicy::load(checkpoint));
    return [policy, k_paths] { return std::make_unique<ConalSolver>(*policy, k_paths); };
  }
  throw UsageError("unknown solver '" + name + "' (expected nrm, grc, exhaustive or conal)");
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  if (text == "paper") return paper_seeds();
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + item + "' in --seeds");
    }
  }
  if (seeds.empty()) throw UsageError("--seeds is empty");
  return seeds;
}

std::vector<std::string> parse_range(const std::string& text) {
  double lo = 0, hi = 0, step = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0 || hi < lo)
    throw UsageError("--values expects lo:hi:step with step > 0, got '" + text + "'");
  const int count = static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<std::string> values;
  for (int i = 0; i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", lo + i * step);
    values.emplace_back(buf);
  }
  return values;
}

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream f(dir / name, std::ios::binary);
  if (!f) throw Error("cannot write " + (dir / name).string());
  return f;
}

struct Anchor {
  double acr, r2c;
};

bool anchor_for(const std::string& solver, Anchor& a) {
  if (solver == "grc") a = {0.694, 0.468};
  else if (solver == "nrm") a = {0.675, 0.461};
  else return false;
  return true;
}

int check_anchor(const BenchmarkResult& r) {
  Anchor a{};
  if (!anchor_for(r.solver, a)) return 0;
  const bool ok = std::abs(r.vn_acr.mean - a.acr) <= 0.05 && std::abs(r.lt_r2c.mean - a.r2c) <= 0.05;
  std::cout << (ok ? "PASS" : "FAIL") << " anchor " << r.solver << ": VN_ACR " << r.vn_acr.mean
            << " vs " << a.acr << ", LT_R2C " << r.lt_r2c.mean << " vs " << a.r2c
            << " (tolerance 0.05)\n";
  return ok ? 0 : 3;
}

void write_benchmark(const fs::path& out, const BenchmarkResult& r) {
  auto m = open_out(out, "metrics.csv");
  write_metrics_header(m);
  write_metrics_rows(m, r);
  auto t = open_out(out, "timing.csv");
  write_timing_csv(t, r);
  open_out(out, "summary.json") << summary_json(r) << '\n';
}

int report_errors(const BenchmarkResult& r) {
  int failed = 0;
  for (const auto& run : r.runs)
    if (!run.metrics) {
      std::cerr << "seed " << run.seed << " failed: " << run.error << '\n';
      ++failed;
    }
  return failed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual network embedding lab"};
  app.require_subcommand(1);

  Common common;
  SolverChoice solver;
  std::string seeds_text = "paper";
  std::uint64_t seed = 0;
  bool have_seed = false;
  bool assert_thresholds = false;
  bool events = false;
  bool tiny = false;
  std::string param, values;
  int instances = 200;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "key = value configuration file");
    sub->add_option("--set", common.overrides, "override key=value (repeatable)");
    sub->add_option("--out", common.out, "output directory");
  };
  auto add_solver = [&](CLI::App* sub) {
    sub->add_option("--solver", solver.name, "nrm, grc, exhaustive or conal");
    sub->add_option("--checkpoint", solver.checkpoint, "policy checkpoint prefix for conal");
    sub->add_option("--mapping", solver.mapping, "heuristic node mapping: two-stage or incremental");
    sub->add_option("--routing", solver.routing, "heuristic link routing: subgraph or kshortest");
    sub->add_option("--max-hops", solver.max_hops, "path length cap for subgraph routing");
  };

  auto* simulate = app.add_subcommand("simulate", "one simulation run");
  add_common(simulate);
  add_solver(simulate);
  simulate->add_option("--seed", seed, "request stream seed")->each([&](const std::string&) {
    have_seed = true;
  });
  simulate->add_flag("--events", events, "also write events.jsonl");

  auto* evaluate = app.add_subcommand("evaluate", "multi-seed benchmark");
  add_common(evaluate);
  add_solver(evaluate);
  evaluate->add_option("--seeds", seeds_text, "'paper' or a comma-separated list");
  evaluate->add_flag("--assert", assert_thresholds, "fail when a reference anchor is missed");

  auto* sweep = app.add_subcommand("sweep", "multi-seed benchmark per parameter value");
  add_common(sweep);
  add_solver(sweep);
  sweep->add_option("--seeds", seeds_text, "'paper' or a comma-separated list");
  sweep->add_option("--param", param, "configuration key to vary")->required();
  sweep->add_option("--values", values, "lo:hi:step")->required();

  auto* train_cmd = app.add_subcommand("train", "train a policy");
  add_common(train_cmd);
  train_cmd->add_flag("--tiny", tiny, "start from the small smoke-test setting");
  train_cmd->add_flag("--assert", assert_thresholds,
                      "fail unless greedy reward improves by 20% and the multiplier stays below 100");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--out", common.out, "output directory");
  gradcheck->add_option("--seed", seed, "input seed");

  auto* oracle = app.add_subcommand("oracle-verify", "constraint checker versus enumeration");
  oracle->add_option("--out", common.out, "output directory");
  oracle->add_option("--seed", seed, "instance seed");
  oracle->add_option("--instances", instances, "number of random instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const fs::path out(common.out);
    if (simulate->parsed()) {
      TrainConfig cfg = load_config(common);
      const std::uint64_t s = have_seed ? seed : cfg.sim.seed;
      auto factory = solver_factory(solver, cfg.k_paths);
      if (events) {
        SimulationConfig sim = cfg.sim;
        sim.seed = s;
        auto sv = factory();
        const auto record = run_simulation(*sv, sim);
        auto ev = open_out(out, "events.jsonl");
        write_event_log(ev, record);
      }
      const auto r = run_benchmark(cfg.sim, factory, {s});
      write_benchmark(out, r);
      std::cout << format_table_row(r) << '\n';
      return report_errors(r) > 0 ? 1 : 0;
    }
    if (evaluate->parsed()) {
      TrainConfig cfg = load_config(common);
      const auto r =
          run_benchmark(cfg.sim, solver_factory(solver, cfg.k_paths), parse_seeds(seeds_text));
      write_benchmark(out, r);
      std::cout << format_table_row(r) << '\n';
      int status = report_errors(r) > 0 ? 1 : 0;
      if (assert_thresholds && status == 0) status = check_anchor(r);
      return status;
    }
    if (sweep->parsed()) {
      const TrainConfig cfg = load_config(common);
      const auto seeds = parse_seeds(seeds_text);
      auto m = open_out(out, "metrics.csv");
      write_metrics_header(m);
      nlohmann::json summary = nlohmann::json::array();
      int status = 0;
      for (const auto& v : parse_range(values)) {
        TrainConfig point = cfg;
        if (!point.set(param, v)) throw ConfigError(param, "unknown key");
        point.validate();
        const auto r = run_benchmark(point.sim, solver_factory(solver, point.k_paths), seeds);
        const RowLabel label{param, v};
        write_metrics_rows(m, r, label);
        summary.push_back(nlohmann::json::parse(summary_json(r, label)));
        std::cout << param << '=' << v << "  " << format_table_row(r) << '\n';
        if (report_errors(r) > 0) status = 1;
      }
      open_out(out, "summary.json") << summary.dump(2) << '\n';
      return status;
    }
    if (train_cmd->parsed()) {
      const TrainConfig cfg = load_config(common, tiny ? tiny_train_config() : TrainConfig{});
      SimulationConfig pool_sim = cfg.sim;
      pool_sim.num_requests = cfg.pool_requests;
      const auto stream = InstanceStream::from_simulation(pool_sim);
      SimulationConfig eval_sim = cfg.sim;
      eval_sim.seed = cfg.sim.seed + 1;
      eval_sim.num_requests = cfg.eval_instances;
      const auto eval_pool = InstanceStream::from_simulation(eval_sim).pool();

      ConalPolicy untrained(cfg.policy);
      const double before = evaluate_greedy(untrained, eval_pool, cfg.k_paths);
      TrainResult res = train(cfg, stream);
      const double after = evaluate_greedy(res.policy, eval_pool, cfg.k_paths);

      auto curves = open_out(out, "curves.csv");
      write_curves_csv(curves, res.curves);
      res.policy.save((out / "policy").string());
      auto m = open_out(out, "metrics.csv");
      m << "stage,eval_reward,max_lambda\n"
        << "untrained," << format_double(before) << ",\n"
        << "trained," << format_double(after) << ',' << format_double(res.max_lambda) << '\n';
      nlohmann::json j{{"eval_reward_untrained", before},
                       {"eval_reward_trained", after},
                       {"max_lambda", res.max_lambda},
                       {"updates", cfg.updates},
                       {"syncs", res.syncs}};
      open_out(out, "summary.json") << j.dump(2) << '\n';
      std::cout << "greedy reward " << before << " -> " << after << ", max lambda "
                << res.max_lambda << '\n';
      if (assert_thresholds) {
        const bool ok = after >= 1.2 * before && res.max_lambda < 100.0;
        std::cout << (ok ? "PASS" : "FAIL") << " training thresholds\n";
        return ok ? 0 : 3;
      }
      return 0;
    }
    if (gradcheck->parsed()) {
      const auto rows = gradcheck_suite(seed);
      bool ok = true;
      auto m = open_out(out, "metrics.csv");
      m << "family,max_rel_error,checked,nudged\n";
      for (const auto& r : rows) {
        const bool pass = r.result.max_rel_error <= kGradCheckTolerance;
        ok = ok && pass;
        std::printf("%-20s %.3e %s\n", r.family.c_str(), r.result.max_rel_error,
                    pass ? "ok" : "FAIL");
        m << r.family << ',' << format_double(r.result.max_rel_error) << ',' << r.result.checked
          << ',' << r.result.nudged << '\n';
      }
      return ok ? 0 : 3;
    }
    if (oracle->parsed()) {
      const auto rep = oracle_verify(instances, seed);
      auto m = open_out(out, "metrics.csv");
      m << "instances,candidates,feasible,disagreements\n"
        << rep.instances << ',' << rep.candidates << ',' << rep.feasible << ','
        << rep.disagreements << '\n';
      std::cout << rep.instances << " instances, " << rep.candidates << " candidates, "
                << rep.feasible << " feasible, " << rep.disagreements << " disagreements\n";
      if (rep.disagreements > 0) std::cout << "first: " << rep.first_disagreement << '\n';
      return rep.disagreements == 0 ? 0 : 3;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
