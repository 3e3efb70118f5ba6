#include "fastjm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <ostream>

#include "fastjm/em.hpp"
#include "fastjm/errors.hpp"
#include "fastjm/inference.hpp"
#include "fastjm/lmm.hpp"
#include "fastjm/parallel.hpp"

namespace fastjm {

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <class Fn>
double time_call(Fn&& fn) {
  const auto t0 = Clock::now();
  fn();
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double growth_order(const std::string& method) {
  if (method == "naive_se") return 3.0;
  if (method.rfind("naive_", 0) == 0) return 2.0;
  return 1.0;
}

std::string family(const std::string& method) { return method.substr(method.find('_') + 1); }

EmConfig fixed_iteration_config(int iterations, Backend backend) {
  EmConfig c;
  c.tol = std::numeric_limits<double>::min();
  c.max_iter = iterations;
  c.backend = backend;
  return c;
}

double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

double max_rel_diff(const Mat& a, const Mat& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    // Entries that are zero up to rounding are compared on an absolute scale.
    const double scale = std::max({std::abs(a(i)), std::abs(b(i)), 1e-8 * a.cwiseAbs().maxCoeff()});
    if (scale > 0.0) worst = std::max(worst, std::abs(a(i) - b(i)) / scale);
  }
  return worst;
}

// Lazily built per-n state shared by the methods.
struct SizeState {
  const Dataset* data = nullptr;
  std::optional<LmmFit> lmm;
  std::optional<ParameterSet> init;
  std::optional<FitResult> fit;
  int em_iterations = 20;

  const LmmFit& get_lmm() {
    if (!lmm) lmm = fit_lmm(*data);
    return *lmm;
  }
  const ParameterSet& get_init() {
    if (!init) init = initial_parameters(*data, get_lmm());
    return *init;
  }
  const FitResult& get_fit() {
    if (!fit) fit = em_fit(*data, fixed_iteration_config(em_iterations, Backend::scan));
    return *fit;
  }
};

double run_method(const std::string& method, SizeState& st) {
  const Dataset& data = *st.data;
  const Backend backend = method.rfind("naive_", 0) == 0 ? Backend::naive : Backend::scan;
  const std::string fam = family(method);
  if (fam == "em") {
    const FitResult fit = em_fit(data, fixed_iteration_config(st.em_iterations, backend));
    return fit.timing.e_step + fit.timing.m_step;
  }
  if (fam == "se") {
    const FitResult& fit = st.get_fit();
    return time_call([&] { (void)profiled_scores(data, fit, backend, nullptr, false); });
  }
  if (fam == "lookup") {
    const ParameterSet& p = st.get_init();
    return time_call([&] { (void)cumulative_hazard_at_T(data, p, backend); });
  }
  if (fam == "ebayes") {
    const LmmFit& lmm = st.get_lmm();
    return time_call([&] {
      if (backend == Backend::naive) {
        (void)empirical_bayes_all_naive(data, lmm);
      } else {
        (void)empirical_bayes_all(data, lmm);
      }
    });
  }
  throw std::invalid_argument("unknown bench method '" + method + "'");
}

std::string fmt(double x) {
  if (std::isnan(x)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

}  // namespace

void BenchPlan::validate() const {
  if (sample_sizes.empty()) throw std::invalid_argument("bench needs at least one sample size");
  for (std::size_t j = 0; j < sample_sizes.size(); ++j) {
    if (sample_sizes[j] < 1) throw std::invalid_argument("bench sample sizes must be positive");
    if (j > 0 && sample_sizes[j] <= sample_sizes[j - 1]) {
      throw std::invalid_argument("bench sample sizes must be ascending");
    }
  }
  for (const std::string& m : methods) {
    const auto& all = bench_method_names();
    if (std::find(all.begin(), all.end(), m) == all.end()) {
      throw std::invalid_argument("unknown bench method '" + m + "'");
    }
  }
  if (repetitions < 1) throw std::invalid_argument("bench repetitions must be at least 1");
  if (!(time_budget > 0.0)) throw std::invalid_argument("bench time_budget must be positive");
  if (em_iterations < 1) throw std::invalid_argument("bench em_iterations must be at least 1");
  if (threads < 1) throw std::invalid_argument("bench threads must be at least 1");
}

double bench_equivalence_check(const SimConfig& sim, int n) {
  SimConfig s = sim;
  s.n = n;
  const Dataset data = simulate_dataset(s);

  EmConfig cfg = fixed_iteration_config(5, Backend::scan);
  cfg.record_trajectory = true;
  const FitResult a = em_fit(data, cfg);
  cfg.backend = Backend::naive;
  const FitResult b = em_fit(data, cfg);
  double worst = 0.0;
  for (std::size_t m = 0; m < a.trajectory.size(); ++m) {
    for (Eigen::Index j = 0; j < a.trajectory[m].size(); ++j) {
      worst = std::max(worst, rel_diff(a.trajectory[m](j), b.trajectory[m](j)));
    }
  }

  const auto ca = cumulative_hazard_at_T(data, a.params, Backend::scan);
  const auto cb = cumulative_hazard_at_T(data, a.params, Backend::naive);
  for (std::size_t k = 0; k < ca.size(); ++k) {
    for (std::size_t i = 0; i < ca[k].size(); ++i) {
      if (ca[k][i] != cb[k][i]) worst = std::max(worst, 1.0);
    }
  }

  const Mat sa = profiled_scores(data, a, Backend::scan, nullptr, false);
  const Mat sb = profiled_scores(data, a, Backend::naive, nullptr, false);
  worst = std::max(worst, max_rel_diff(sa, sb));
  if (worst > 1e-10) {
    throw FitError("backend equivalence check failed: max relative discrepancy " + fmt(worst));
  }
  return worst;
}

BenchResult run_bench(const BenchPlan& plan, const SimConfig& sim, std::ostream* log) {
  plan.validate();
  sim.validate();
  const ScopedThreadCap cap(plan.threads);
  BenchResult result;

  if (plan.check_equivalence) {
    const double d = bench_equivalence_check(sim);
    result.equivalence = "scan vs naive backends agree (max relative discrepancy " + fmt(d) + ")";
    if (log) *log << result.equivalence << '\n';
  } else {
    result.equivalence = "not run";
  }

  {
    std::vector<double> t(1001);
    for (double& x : t) x = time_call([] {});
    result.timer_overhead = median(t);
  }

  std::map<std::string, std::pair<int, double>> last;  // method -> (n, seconds)
  for (int n : plan.sample_sizes) {
    SimConfig s = sim;
    s.n = n;
    s.seed = sim.seed + static_cast<std::uint64_t>(n);
    const Dataset data = simulate_dataset(s);
    SizeState st;
    st.data = &data;
    st.em_iterations = plan.em_iterations;

    const std::size_t first = result.rows.size();
    for (const std::string& method : plan.methods) {
      BenchRow row;
      row.n = n;
      row.method = method;
      row.seconds = kNaN;
      const auto prev = last.find(method);
      if (prev != last.end()) {
        const double predicted = prev->second.second *
                                 std::pow(static_cast<double>(n) / prev->second.first,
                                          growth_order(method));
        if (predicted * plan.repetitions > plan.time_budget) {
          row.status = "skipped(budget)";
          result.rows.push_back(row);
          if (log) *log << "n=" << n << ' ' << method << ": skipped(budget)\n";
          continue;
        }
      }
      try {
        std::vector<double> times;
        for (int r = 0; r < plan.repetitions; ++r) {
          times.push_back(run_method(method, st));
          // A single repetition already over budget settles the cell.
          if (times.back() > plan.time_budget) break;
        }
        row.seconds = median(times);
        row.status = "ok";
        last[method] = {n, row.seconds};
      } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
      }
      if (log) *log << "n=" << n << ' ' << method << ": " << fmt(row.seconds) << " s\n";
      result.rows.push_back(row);
    }

    for (std::size_t r = first; r < result.rows.size(); ++r) {
      BenchRow& row = result.rows[r];
      const std::string fam = family(row.method);
      if (row.method.rfind("scan_", 0) == 0) {
        row.fold_change_vs_scan = std::isnan(row.seconds) ? kNaN : 1.0;
        continue;
      }
      row.fold_change_vs_scan = kNaN;
      for (std::size_t q = first; q < result.rows.size(); ++q) {
        if (result.rows[q].method == "scan_" + fam && !std::isnan(result.rows[q].seconds)) {
          row.fold_change_vs_scan = row.seconds / result.rows[q].seconds;
        }
      }
    }
  }
  return result;
}

void write_bench_csv(const BenchResult& result, std::ostream& out) {
  out << "n,method,seconds,fold_change_vs_scan,status\n";
  for (const BenchRow& r : result.rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out << r.n << ',' << r.method << ',' << fmt(r.seconds) << ',' << fmt(r.fold_change_vs_scan)
        << ',' << status << '\n';
  }
}

void write_bench_summary(const BenchResult& result, std::ostream& out) {
  char line[200];
  out << "equivalence: " << result.equivalence << '\n';
  std::snprintf(line, sizeof line, "timer overhead: %.3g s per call\n", result.timer_overhead);
  out << line;
  std::snprintf(line, sizeof line, "%10s  %-14s %14s %14s  %s\n", "n", "method", "seconds",
                "fold_vs_scan", "status");
  out << line;
  for (const BenchRow& r : result.rows) {
    std::snprintf(line, sizeof line, "%10d  %-14s %14s %14s  %s\n", r.n, r.method.c_str(),
                  fmt(r.seconds).c_str(), fmt(r.fold_change_vs_scan).c_str(), r.status.c_str());
    out << line;
  }
}

}  // namespace fastjm
