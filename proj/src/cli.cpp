#include "fastjm/cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "fastjm/bench.hpp"
#include "fastjm/em.hpp"
#include "fastjm/errors.hpp"
#include "fastjm/inference.hpp"
#include "fastjm/io.hpp"
#include "fastjm/simulate.hpp"

namespace fastjm {

namespace {

struct FitArgs {
  std::string config;
  std::string long_path;
  std::string surv_path;
  std::string out;
  bool drop_post_event = false;
  bool no_se = false;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << text;
  if (!f) throw InputError("write failed for '" + path + "'");
}

int do_fit(const FitArgs& a, bool force_se, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
  IngestOptions opts;
  opts.drop_post_event = a.drop_post_event;
  const Dataset data = ingest_files(a.long_path, a.surv_path, cfg.model, opts);

  FitResult fit = em_fit(data, cfg.em);
  for (const std::string& w : fit.warnings) err << "warning: " << w << '\n';

  std::optional<SeReport> se;
  if (force_se || (cfg.se_enabled && !a.no_se)) {
    const auto t0 = std::chrono::steady_clock::now();
    se = standard_errors(fit, data, cfg.em.backend);
    fit.timing.se = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  const ReportInput rep{&data, &fit, se ? &*se : nullptr};
  if (!a.out.empty()) write_text(a.out, fit_report_json(rep));
  out << fit_report_table(rep);
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint model of longitudinal and competing-risk data fitted by EM"};
  app.require_subcommand(1);

  std::string sim_config, sim_prefix;
  std::uint64_t sim_seed = 0;
  int sim_n = 0;
  auto* sim = app.add_subcommand("simulate", "Write a simulated longitudinal/survival file pair");
  sim->add_option("--config", sim_config, "JSON config (simulation block)");
  sim->add_option("--out-prefix", sim_prefix, "Output prefix; writes P_long.csv and P_surv.csv")
      ->required();
  auto* seed_opt = sim->add_option("--seed", sim_seed, "Random seed");
  auto* n_opt = sim->add_option("--n", sim_n, "Number of subjects")->check(CLI::PositiveNumber);

  FitArgs fit_args;
  auto add_fit_options = [&](CLI::App* cmd) {
    cmd->add_option("--config", fit_args.config, "JSON config");
    cmd->add_option("--long", fit_args.long_path, "Longitudinal CSV")->required();
    cmd->add_option("--surv", fit_args.surv_path, "Survival CSV")->required();
    cmd->add_option("--out", fit_args.out, "JSON report path");
    cmd->add_flag("--drop-post-event", fit_args.drop_post_event,
                  "Discard measurements after the observed time instead of failing");
  };
  auto* fit = app.add_subcommand("fit", "Fit the joint model (standard errors if enabled)");
  add_fit_options(fit);
  fit->add_flag("--no-se", fit_args.no_se, "Skip standard errors");
  auto* se = app.add_subcommand("se", "Fit the joint model and compute standard errors");
  add_fit_options(se);

  std::string plan_path, bench_out;
  std::vector<int> sizes;
  double budget = 0.0;
  int reps = 0;
  int threads = 0;
  std::vector<std::string> methods;
  auto* bench = app.add_subcommand("bench", "Time scan against naive backends");
  bench->add_option("--plan", plan_path, "JSON config with bench/simulation blocks");
  bench->add_option("--sizes", sizes, "Sample sizes, ascending")->delimiter(',');
  bench->add_option("--budget", budget, "Time budget per cell in seconds")
      ->check(CLI::PositiveNumber);
  bench->add_option("--repetitions", reps, "Repetitions per cell")->check(CLI::PositiveNumber);
  bench->add_option("--threads", threads, "Worker threads while timing")
      ->check(CLI::PositiveNumber);
  bench->add_option("--methods", methods, "Subset of methods")->delimiter(',');
  bench->add_option("--out", bench_out, "CSV results path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*sim) {
      RunConfig cfg = sim_config.empty() ? RunConfig{} : load_config(sim_config);
      if (*seed_opt) cfg.simulation.seed = sim_seed;
      if (*n_opt) cfg.simulation.n = sim_n;
      const Dataset data = simulate_dataset(cfg.simulation);
      write_dataset_files(data, sim_prefix);
      out << "wrote " << sim_prefix << "_long.csv (" << data.total_obs() << " rows) and "
          << sim_prefix << "_surv.csv (" << data.n() << " rows)\n";
      return 0;
    }
    if (*fit) return do_fit(fit_args, false, out, err);
    if (*se) return do_fit(fit_args, true, out, err);
    if (*bench) {
      RunConfig cfg = plan_path.empty() ? RunConfig{} : load_config(plan_path);
      if (!sizes.empty()) cfg.bench.sample_sizes = sizes;
      if (budget > 0.0) cfg.bench.time_budget = budget;
      if (reps > 0) cfg.bench.repetitions = reps;
      if (threads > 0) cfg.bench.threads = threads;
      if (!methods.empty()) cfg.bench.methods = methods;
      try {
        cfg.bench.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      const BenchResult res = run_bench(cfg.bench, cfg.simulation, &err);
      if (!bench_out.empty()) {
        std::ostringstream csv;
        write_bench_csv(res, csv);
        write_text(bench_out, csv.str());
      } else {
        write_bench_csv(res, out);
      }
      write_bench_summary(res, bench_out.empty() ? err : out);
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace fastjm
