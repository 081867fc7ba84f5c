#include "vnelab/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>

#include "json.hpp"
#include "vnelab/errors.hpp"

namespace vnelab {

namespace {

MetricsReport finish(MetricsReport m, double rev_w, double cons_w, double solve_total) {
  if (m.total == 0) throw EmptyRecord("no arrivals recorded");
  m.vn_acr = static_cast<double>(m.accepted) / m.total;
  m.lt_r2c = cons_w > 0.0 ? rev_w / cons_w : 0.0;
  m.avg_st = solve_total / m.total;
  return m;
}

}  // namespace

MetricsReport compute_metrics(const SimulationRecord& record) {
  MetricsReport m;
  double rev_w = 0.0, cons_w = 0.0, solve_total = 0.0;
  for (const auto& o : record.outcomes) {
    ++m.total;
    solve_total += o.solve_seconds;
    if (o.accepted) {
      ++m.accepted;
      rev_w += o.revenue * o.lifetime;
      cons_w += o.consumption * o.lifetime;
    } else {
      m.c_vio += o.violation;
    }
  }
  m.lt_rev = rev_w;
  return finish(m, rev_w, cons_w, solve_total);
}

MetricsReport metrics_from_event_log(std::istream& in) {
  MetricsReport m;
  double rev_w = 0.0, cons_w = 0.0;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("type").get<std::string>() != "arrival") continue;
      ++m.total;
      if (j.at("accepted").get<bool>()) {
        ++m.accepted;
        const double life = j.at("lifetime").get<double>();
        rev_w += j.at("revenue").get<double>() * life;
        cons_w += j.at("consumption").get<double>() * life;
      } else {
        m.c_vio += j.at("violation").get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  m.lt_rev = rev_w;
  return finish(m, rev_w, cons_w, 0.0);
}

std::vector<std::uint64_t> paper_seeds() {
  std::vector<std::uint64_t> s;
  for (std::uint64_t i = 0; i < 10; ++i) s.push_back(i * 1111);
  return s;
}

int worker_count(int jobs) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("VNE_LAB_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) n = v;
  }
  return std::clamp(n, 1, std::max(jobs, 1));
}

MeanStderr mean_stderr(const std::vector<double>& values) {
  MeanStderr r;
  if (values.empty()) return r;
  const double n = static_cast<double>(values.size());
  for (double v : values) r.mean += v;
  r.mean /= n;
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - r.mean) * (v - r.mean);
    r.stderr_ = std::sqrt(sq / (n - 1.0)) / std::sqrt(n);
  }
  return r;
}

BenchmarkResult run_benchmark(const SimulationConfig& config, const SolverFactory& factory,
                              const std::vector<std::uint64_t>& seeds) {
  BenchmarkResult res;
  res.runs.resize(seeds.size());
  {
    auto probe = factory();
    res.solver = probe->name();
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      SeedRun& run = res.runs[i];
      run.seed = seeds[i];
      const auto start = std::chrono::steady_clock::now();
      try {
        SimulationConfig cfg = config;
        cfg.seed = seeds[i];
        auto solver = factory();
        run.metrics = compute_metrics(run_simulation(*solver, cfg));
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      run.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  const int workers = worker_count(static_cast<int>(seeds.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<double> acr, rev, r2c, st, vio;
  for (const auto& run : res.runs) {
    if (!run.metrics) continue;
    ++res.succeeded;
    acr.push_back(run.metrics->vn_acr);
    rev.push_back(run.metrics->lt_rev);
    r2c.push_back(run.metrics->lt_r2c);
    st.push_back(run.metrics->avg_st);
    vio.push_back(run.metrics->c_vio);
  }
  res.vn_acr = mean_stderr(acr);
  res.lt_rev = mean_stderr(rev);
  res.lt_r2c = mean_stderr(r2c);
  res.avg_st = mean_stderr(st);
  res.c_vio = mean_stderr(vio);
  return res;
}

void write_metrics_header(std::ostream& out) {
  out << "solver,param,param_value,seed,total,accepted,VN_ACR,LT_REV_1e7,LT_R2C,C_VIO\n";
}

void write_metrics_rows(std::ostream& out, const BenchmarkResult& result, const RowLabel& label) {
  const std::string prefix = result.solver + ',' + label.param + ',' + label.value + ',';
  for (const auto& run : result.runs) {
    if (!run.metrics) continue;
    const auto& m = *run.metrics;
    out << prefix << run.seed << ',' << m.total << ',' << m.accepted << ','
        << format_double(m.vn_acr) << ',' << format_double(m.lt_rev / kLtRevDisplayScale) << ','
        << format_double(m.lt_r2c) << ',' << format_double(m.c_vio) << '\n';
  }
  out << prefix << "mean,,," << format_double(result.vn_acr.mean) << ','
      << format_double(result.lt_rev.mean / kLtRevDisplayScale) << ','
      << format_double(result.lt_r2c.mean) << ',' << format_double(result.c_vio.mean) << '\n';
  out << prefix << "stderr,,," << format_double(result.vn_acr.stderr_) << ','
      << format_double(result.lt_rev.stderr_ / kLtRevDisplayScale) << ','
      << format_double(result.lt_r2c.stderr_) << ',' << format_double(result.c_vio.stderr_)
      << '\n';
}

void write_timing_csv(std::ostream& out, const BenchmarkResult& result) {
  out << "solver,seed,AVG_ST,wall_seconds\n";
  for (const auto& run : result.runs) {
    out << result.solver << ',' << run.seed << ','
        << format_double(run.metrics ? run.metrics->avg_st : 0.0) << ','
        << format_double(run.wall_seconds) << '\n';
  }
}

std::string summary_json(const BenchmarkResult& result, const RowLabel& label) {
  using nlohmann::json;
  auto ms = [](const MeanStderr& v) { return json{{"mean", v.mean}, {"stderr", v.stderr_}}; };
  json j;
  j["solver"] = result.solver;
  if (!label.param.empty()) {
    j["param"] = label.param;
    j["param_value"] = label.value;
  }
  j["succeeded"] = result.succeeded;
  j["aggregate"] = {{"VN_ACR", ms(result.vn_acr)},
                    {"LT_REV", ms(result.lt_rev)},
                    {"LT_R2C", ms(result.lt_r2c)},
                    {"AVG_ST", ms(result.avg_st)},
                    {"C_VIO", ms(result.c_vio)}};
  json runs = json::array();
  for (const auto& run : result.runs) {
    json r{{"seed", run.seed}};
    if (run.metrics) {
      const auto& m = *run.metrics;
      r["total"] = m.total;
      r["accepted"] = m.accepted;
      r["VN_ACR"] = m.vn_acr;
      r["LT_REV"] = m.lt_rev;
      r["LT_R2C"] = m.lt_r2c;
      r["AVG_ST"] = m.avg_st;
      r["C_VIO"] = m.c_vio;
    } else {
      r["error"] = run.error;
    }
    runs.push_back(std::move(r));
  }
  j["runs"] = std::move(runs);
  return j.dump(2);
}

std::string format_table_row(const BenchmarkResult& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "%-8s VN_ACR %.3f \xC2\xB1 %.3f  LT_REV %.3f \xC2\xB1 %.3f  LT_R2C %.3f \xC2\xB1 %.3f"
                "  AVG_ST %.4f s  C_VIO %.3f",
                r.solver.c_str(), r.vn_acr.mean, r.vn_acr.stderr_,
                r.lt_rev.mean / kLtRevDisplayScale, r.lt_rev.stderr_ / kLtRevDisplayScale,
                r.lt_r2c.mean, r.lt_r2c.stderr_, r.avg_st.mean, r.c_vio.mean);
  return buf;
}

}  // namespace vnelab
