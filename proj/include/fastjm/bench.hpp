#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fastjm/simulate.hpp"

namespace fastjm {

// Timed methods. Each naive/scan pair runs the same computation through the
// quadratic (or cubic, for SEs) backend and the linear-scan backend.
//   *_em      EM iterations (LMM start and node setup excluded)
//   *_se      profiled score matrix at a fitted parameter
//   *_lookup  Lambda_k(T_i) for every subject and cause
//   *_ebayes  empirical Bayes pass with cached vs per-subject fixed-effect info
inline const std::vector<std::string>& bench_method_names() {
  static const std::vector<std::string> names = {
      "naive_em",     "scan_em",     "naive_se",     "scan_se",
      "naive_lookup", "scan_lookup", "naive_ebayes", "scan_ebayes"};
  return names;
}

struct BenchPlan {
  std::vector<int> sample_sizes = {100, 500, 1000, 5000, 10000, 50000, 100000};
  std::vector<std::string> methods = {"naive_em",  "scan_em",      "naive_se",
                                      "scan_se",   "naive_lookup", "scan_lookup"};
  int repetitions = 3;
  double time_budget = 60.0;  // seconds per cell
  int em_iterations = 20;
  int threads = 1;
  bool check_equivalence = true;

  void validate() const;
};

struct BenchRow {
  int n = 0;
  std::string method;
  double seconds = 0.0;  // median over repetitions; NaN when not run
  double fold_change_vs_scan = 0.0;
  std::string status;  // ok | skipped(budget) | failed: ...
};

struct BenchResult {
  std::vector<BenchRow> rows;
  double timer_overhead = 0.0;  // seconds per timed call, empty body
  std::string equivalence;      // summary of the pre-timing backend check
};

// Cross-backend agreement on a small simulated instance; returns the largest
// relative discrepancy seen and throws FitError if it exceeds 1e-10.
double bench_equivalence_check(const SimConfig& sim, int n = 200);

BenchResult run_bench(const BenchPlan& plan, const SimConfig& sim, std::ostream* log = nullptr);

void write_bench_csv(const BenchResult& result, std::ostream& out);
void write_bench_summary(const BenchResult& result, std::ostream& out);

}  // namespace fastjm
