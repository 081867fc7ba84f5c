#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vnelab/sim_engine.hpp"
#include "vnelab/solver.hpp"

namespace vnelab {

struct MetricsReport {
  int total = 0;
  int accepted = 0;
  double vn_acr = 0.0;
  double lt_rev = 0.0;  // raw revenue x lifetime
  double lt_r2c = 0.0;
  double avg_st = 0.0;  // seconds per solve
  double c_vio = 0.0;
};

inline constexpr double kLtRevDisplayScale = 1e7;

/// Throws EmptyRecord when the record holds no arrivals.
MetricsReport compute_metrics(const SimulationRecord& record);

/// Recomputes the metrics from a JSONL event log. AVG_ST is not logged and
/// stays 0. Throws ParseError on malformed lines, EmptyRecord without arrivals.
MetricsReport metrics_from_event_log(std::istream& in);

/// 0, 1111, ..., 9999.
std::vector<std::uint64_t> paper_seeds();

struct SeedRun {
  std::uint64_t seed = 0;
  std::optional<MetricsReport> metrics;
  std::string error;
  double wall_seconds = 0.0;
};

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

struct BenchmarkResult {
  std::string solver;
  std::vector<SeedRun> runs;
  MeanStderr vn_acr, lt_rev, lt_r2c, avg_st, c_vio;
  int succeeded = 0;
};

using SolverFactory = std::function<std::unique_ptr<Solver>()>;

/// Worker count: VNE_LAB_THREADS when set and positive, else hardware
/// concurrency, never more than `jobs`.
int worker_count(int jobs);

/// One simulation per seed with `config.seed` overridden. A failing seed is
/// recorded with its error and the remaining seeds still run.
BenchmarkResult run_benchmark(const SimulationConfig& config, const SolverFactory& factory,
                              const std::vector<std::uint64_t>& seeds);

MeanStderr mean_stderr(const std::vector<double>& values);

/// Extra leading columns of a metrics row, e.g. a swept parameter.
struct RowLabel {
  std::string param;
  std::string value;
};

void write_metrics_header(std::ostream& out);
/// Per-seed rows followed by `mean` and `stderr` rows. Timing is excluded so
/// repeated runs produce identical bytes.
void write_metrics_rows(std::ostream& out, const BenchmarkResult& result,
                        const RowLabel& label = {});
void write_timing_csv(std::ostream& out, const BenchmarkResult& result);
std::string summary_json(const BenchmarkResult& result, const RowLabel& label = {});

/// "GRC  VN_ACR 0.694 ± 0.020  LT_REV ...", LT_REV scaled by 1e-7.
std::string format_table_row(const BenchmarkResult& result);

}  // namespace vnelab
