#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fastjm/bench.hpp"

using namespace fastjm;

TEST_SUITE("bench") {

TEST_CASE("plan validation") {
  BenchPlan p;
  CHECK_NOTHROW(p.validate());
  p.sample_sizes = {500, 100};
  CHECK_THROWS(p.validate());
  p = BenchPlan{};
  p.methods = {"scan_em", "fast_em"};
  CHECK_THROWS(p.validate());
}

TEST_CASE("backends agree before timing") {
  CHECK(bench_equivalence_check(SimConfig{}, 120) <= 1e-10);
}

TEST_CASE("small run: rows, fold changes, csv") {
  BenchPlan p;
  p.sample_sizes = {60, 120};
  p.methods = {"naive_em", "scan_em", "naive_se", "scan_se", "naive_lookup", "scan_lookup",
               "naive_ebayes", "scan_ebayes"};
  p.repetitions = 1;
  p.em_iterations = 3;
  p.check_equivalence = false;
  const BenchResult r = run_bench(p, SimConfig{});
  REQUIRE(r.rows.size() == 16);
  for (const BenchRow& row : r.rows) {
    INFO(row.method << " n=" << row.n << " " << row.status);
    CHECK(row.status == "ok");
    CHECK(row.seconds >= 0.0);
    if (row.method.rfind("scan_", 0) == 0) CHECK(row.fold_change_vs_scan == 1.0);
  }
  std::ostringstream csv;
  write_bench_csv(r, csv);
  const std::string text = csv.str();
  CHECK(text.rfind("n,method,seconds,fold_change_vs_scan,status\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 17);
}

TEST_CASE("budget skips predicted-slow cells") {
  BenchPlan p;
  p.sample_sizes = {50, 5000};
  p.methods = {"naive_se", "scan_se"};
  p.repetitions = 1;
  p.em_iterations = 2;
  p.time_budget = 0.05;
  p.check_equivalence = false;
  const BenchResult r = run_bench(p, SimConfig{});
  bool skipped = false;
  for (const BenchRow& row : r.rows) {
    if (row.status == "skipped(budget)") {
      skipped = true;
      CHECK(std::isnan(row.seconds));
    }
  }
  CHECK(skipped);
}

}
