#include <cstdlib>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "json.hpp"
#include "vnelab/bench.hpp"
#include "vnelab/errors.hpp"
#include "vnelab/heuristics.hpp"

using namespace vnelab;

namespace {

InstanceOutcome outcome(bool accepted, double rev, double cons, double life, double vio = 0.0) {
  InstanceOutcome o;
  o.accepted = accepted;
  o.revenue = rev;
  o.consumption = cons;
  o.lifetime = life;
  o.violation = vio;
  return o;
}

SimulationConfig small_sim() {
  SimulationConfig cfg;
  cfg.pn_nodes = 20;
  cfg.num_requests = 120;
  cfg.arrival_rate = 0.05;
  return cfg;
}

class FailOnSeed : public Solver {
 public:
  std::string name() const override { return "fragile"; }
  SolveResult solve(const VNEInstance& inst) override { return inner.solve(inst); }
  NodeRankSolver inner{RankingKind::Nrm};
};

}  // namespace

TEST_CASE("acceptance ratio") {
  SimulationRecord rec;
  for (int i = 0; i < 1000; ++i) rec.outcomes.push_back(outcome(i < 700, 1, 1, 1));
  const auto m = compute_metrics(rec);
  CHECK(m.total == 1000);
  CHECK(m.accepted == 700);
  CHECK(m.vn_acr == doctest::Approx(0.7));
}

TEST_CASE("lifetime-weighted revenue and ratio") {
  SimulationRecord rec;
  rec.outcomes.push_back(outcome(true, 12, 20, 500));
  const auto m = compute_metrics(rec);
  CHECK(m.lt_rev == 6000.0);
  CHECK(m.lt_r2c == doctest::Approx(0.6));
  CHECK(m.c_vio == 0.0);
}

TEST_CASE("violations count only for rejected instances") {
  SimulationRecord rec;
  rec.outcomes.push_back(outcome(true, 12, 20, 500, 0.0));
  rec.outcomes.push_back(outcome(false, 9, 0, 10, 2.5));
  rec.outcomes.push_back(outcome(false, 9, 0, 10, 1.0));
  CHECK(compute_metrics(rec).c_vio == 3.5);
  CHECK_THROWS_AS(compute_metrics(SimulationRecord{}), EmptyRecord);
}

TEST_CASE("property: metrics from the record match the event log") {
  for (auto kind : {RankingKind::Grc, RankingKind::Nrm}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      NodeRankSolver solver(kind);
      auto cfg = small_sim();
      cfg.seed = seed;
      const auto rec = run_simulation(solver, cfg);
      std::stringstream log;
      write_event_log(log, rec);
      const auto a = compute_metrics(rec);
      const auto b = metrics_from_event_log(log);
      CHECK(a.total == b.total);
      CHECK(a.accepted == b.accepted);
      CHECK(a.vn_acr == b.vn_acr);
      CHECK(a.lt_rev == b.lt_rev);
      CHECK(a.lt_r2c == b.lt_r2c);
      CHECK(a.c_vio == b.c_vio);
      CHECK(a.vn_acr >= 0.0);
      CHECK(a.vn_acr <= 1.0);
      CHECK(a.lt_r2c <= 1.0);
    }
  }
}

TEST_CASE("event log errors") {
  std::stringstream bad("{\"type\":\"arrival\",\"accepted\":true}\nnot json\n");
  CHECK_THROWS_AS(metrics_from_event_log(bad), ParseError);
  std::stringstream none("{\"type\":\"departure\",\"time\":1,\"vn\":0}\n");
  CHECK_THROWS_AS(metrics_from_event_log(none), EmptyRecord);
}

TEST_CASE("seed list and aggregation") {
  const auto seeds = paper_seeds();
  REQUIRE(seeds.size() == 10);
  CHECK(seeds.front() == 0);
  CHECK(seeds[1] == 1111);
  CHECK(seeds.back() == 9999);
  const auto ms = mean_stderr({1.0, 2.0, 3.0, 4.0});
  CHECK(ms.mean == 2.5);
  CHECK(ms.stderr_ == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
  CHECK(mean_stderr({7.0}).stderr_ == 0.0);
}

TEST_CASE("worker count honours the environment") {
  ::setenv("VNE_LAB_THREADS", "3", 1);
  CHECK(worker_count(10) == 3);
  CHECK(worker_count(2) == 2);
  ::setenv("VNE_LAB_THREADS", "0", 1);
  CHECK(worker_count(10) >= 1);
  ::unsetenv("VNE_LAB_THREADS");
  CHECK(worker_count(1) == 1);
}

TEST_CASE("failing seeds are recorded and the rest still run") {
  const SolverFactory factory = [] { return std::make_unique<FailOnSeed>(); };
  auto cfg = small_sim();
  cfg.vn_size_min = 5;
  cfg.vn_size_max = 3;  // invalid config makes every seed fail
  const auto broken = run_benchmark(cfg, factory, {1, 2});
  CHECK(broken.succeeded == 0);
  for (const auto& r : broken.runs) {
    CHECK_FALSE(r.metrics.has_value());
    CHECK_FALSE(r.error.empty());
  }
  const auto ok = run_benchmark(small_sim(), factory, {1, 2, 3});
  CHECK(ok.succeeded == 3);
  CHECK(ok.runs[0].seed == 1);
}

TEST_CASE("metric rows are byte-stable across runs") {
  const SolverFactory factory = [] { return std::make_unique<NodeRankSolver>(RankingKind::Grc); };
  auto render = [&] {
    std::ostringstream out;
    write_metrics_header(out);
    write_metrics_rows(out, run_benchmark(small_sim(), factory, {0, 1111, 2222}), {"eta", "0.05"});
    return out.str();
  };
  const std::string a = render();
  CHECK(a == render());
  CHECK(a.starts_with("solver,param,param_value,seed,total,accepted,VN_ACR,LT_REV_1e7,LT_R2C,C_VIO\n"));
  CHECK(a.find("\ngrc,eta,0.05,mean,") != std::string::npos);
  CHECK(a.find("\ngrc,eta,0.05,stderr,") != std::string::npos);
}

TEST_CASE("summary and table formatting") {
  const SolverFactory factory = [] { return std::make_unique<NodeRankSolver>(RankingKind::Nrm); };
  const auto res = run_benchmark(small_sim(), factory, {5, 6});
  const auto j = nlohmann::json::parse(summary_json(res));
  CHECK(j.at("solver") == "nrm");
  CHECK(j.at("runs").size() == 2);
  const auto row = format_table_row(res);
  CHECK(row.find("VN_ACR") != std::string::npos);
  CHECK(row.find("±") != std::string::npos);
  std::ostringstream timing;
  write_timing_csv(timing, res);
  CHECK(!timing.str().empty());
}
