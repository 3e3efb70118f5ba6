#include "fastjm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "fastjm/errors.hpp"

namespace fastjm {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---- config ---------------------------------------------------------------

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: " + where + "." + key + " has the wrong type");
  }
}

Vec read_vec(const json& j, const std::string& what) {
  try {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  } catch (const json::exception&) {
    throw ConfigError("config: " + what + " must be an array of numbers");
  }
}

Mat read_mat(const json& j, const std::string& what) {
  try {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    Mat m(static_cast<Eigen::Index>(rows.size()),
          rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<Eigen::Index>(rows[r].size()) != m.cols()) {
        throw ConfigError("config: " + what + " rows have unequal lengths");
      }
      for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
    }
    return m;
  } catch (const json::exception&) {
    throw ConfigError("config: " + what + " must be an array of number arrays");
  }
}

std::vector<Vec> read_vec_list(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError("config: " + what + " must be an array of arrays");
  std::vector<Vec> out;
  for (std::size_t k = 0; k < j.size(); ++k) {
    out.push_back(read_vec(j[k], what + "[" + std::to_string(k) + "]"));
  }
  return out;
}

// ---- CSV ------------------------------------------------------------------

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return std::string(s.substr(a, b - a));
}

void split_csv(const std::string& line, std::vector<std::string>& cells) {
  cells.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(trim(std::string_view(line).substr(start)));
      return;
    }
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    start = comma + 1;
  }
}

class CsvReader {
 public:
  CsvReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!trim(line).empty()) {
        split_csv(line, header_);
        return;
      }
    }
    throw InputError(name_ + ": empty file (no header)");
  }

  int column(const std::string& col) const {
    const auto it = std::find(header_.begin(), header_.end(), col);
    if (it == header_.end()) {
      throw ConfigError(name_ + ": column '" + col + "' not found in header");
    }
    return static_cast<int>(it - header_.begin());
  }

  bool next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (trim(line).empty()) continue;
      split_csv(line, cells_);
      if (cells_.size() != header_.size()) {
        throw InputError(where() + ": expected " + std::to_string(header_.size()) +
                         " fields, found " + std::to_string(cells_.size()));
      }
      return true;
    }
    return false;
  }

  const std::string& cell(int c) const { return cells_[static_cast<std::size_t>(c)]; }

  double number(int c) const {
    const std::string& s = cell(c);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
      throw InputError(where() + ": non-numeric value '" + s + "' in column '" +
                       header_[static_cast<std::size_t>(c)] + "'");
    }
    return v;
  }

  std::string where() const { return name_ + " row " + std::to_string(line_no_); }
  int line() const { return line_no_; }

 private:
  std::istream& in_;
  std::string name_;
  std::vector<std::string> header_;
  std::vector<std::string> cells_;
  int line_no_ = 0;
};

struct DesignColumns {
  std::vector<int> index;  // -1 = intercept, -2 = time column
};

DesignColumns design_columns(const CsvReader& reader, const std::vector<std::string>& cols,
                             bool intercept, int time_col) {
  DesignColumns d;
  if (intercept) d.index.push_back(-1);
  for (const std::string& c : cols) {
    const int j = reader.column(c);
    d.index.push_back(j == time_col ? -2 : j);
  }
  return d;
}

Vec design_row(const CsvReader& reader, const DesignColumns& d, double time) {
  Vec v(static_cast<Eigen::Index>(d.index.size()));
  for (std::size_t j = 0; j < d.index.size(); ++j) {
    const int c = d.index[j];
    v(static_cast<Eigen::Index>(j)) = c == -1 ? 1.0 : c == -2 ? time : reader.number(c);
  }
  return v;
}

std::vector<std::string> with_intercept(const std::vector<std::string>& cols, bool intercept) {
  std::vector<std::string> out;
  if (intercept) out.push_back("(intercept)");
  out.insert(out.end(), cols.begin(), cols.end());
  return out;
}

bool is_structural(const std::string& name) { return name == "(intercept)" || name == "time"; }

ojson named_values(const std::vector<std::string>& names, const Vec& v) {
  ojson o = ojson::object();
  for (std::size_t j = 0; j < names.size(); ++j) o[names[j]] = v(static_cast<Eigen::Index>(j));
  return o;
}

const char* metric_name(ConvergenceMetric m) {
  return m == ConvergenceMetric::relative_param_change ? "relative_param_change" : "loglik_change";
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown(root, "config", {"model", "em", "quadrature", "se", "bench", "simulation"});
  RunConfig cfg;

  if (root.contains("model")) {
    const json& m = root["model"];
    reject_unknown(m, "model",
                   {"fixed", "random", "survival", "fixed_intercept", "random_intercept",
                    "n_causes"});
    read(m, "fixed", cfg.model.fixed, "model");
    read(m, "random", cfg.model.random, "model");
    read(m, "survival", cfg.model.survival, "model");
    read(m, "fixed_intercept", cfg.model.fixed_intercept, "model");
    read(m, "random_intercept", cfg.model.random_intercept, "model");
    read(m, "n_causes", cfg.model.n_causes, "model");
    if (cfg.model.n_causes < 1) throw ConfigError("config: model.n_causes must be >= 1");
  }

  bool n_q_given = false;
  if (root.contains("quadrature")) {
    const json& q = root["quadrature"];
    reject_unknown(q, "quadrature", {"mode", "n_q"});
    std::string mode = "pseudo_adaptive";
    read(q, "mode", mode, "quadrature");
    if (mode == "pseudo_adaptive") {
      cfg.em.quad_mode = QuadMode::pseudo_adaptive;
    } else if (mode == "standard") {
      cfg.em.quad_mode = QuadMode::standard;
    } else {
      throw ConfigError("config: quadrature.mode must be 'standard' or 'pseudo_adaptive'");
    }
    n_q_given = q.contains("n_q");
    read(q, "n_q", cfg.em.n_q, "quadrature");
  }
  if (!n_q_given) cfg.em.n_q = cfg.em.quad_mode == QuadMode::standard ? 20 : 6;

  if (root.contains("em")) {
    const json& e = root["em"];
    reject_unknown(e, "em",
                   {"tol", "max_iter", "convergence_metric", "backend", "threads", "lmm_tol",
                    "lmm_max_iter"});
    read(e, "tol", cfg.em.tol, "em");
    read(e, "max_iter", cfg.em.max_iter, "em");
    read(e, "threads", cfg.em.threads, "em");
    read(e, "lmm_tol", cfg.em.lmm_tol, "em");
    read(e, "lmm_max_iter", cfg.em.lmm_max_iter, "em");
    std::string metric = metric_name(cfg.em.metric);
    read(e, "convergence_metric", metric, "em");
    if (metric == "relative_param_change") {
      cfg.em.metric = ConvergenceMetric::relative_param_change;
    } else if (metric == "loglik_change") {
      cfg.em.metric = ConvergenceMetric::loglik_change;
    } else {
      throw ConfigError("config: em.convergence_metric must be 'relative_param_change' or "
                        "'loglik_change'");
    }
    std::string backend = "scan";
    read(e, "backend", backend, "em");
    if (backend == "scan") {
      cfg.em.backend = Backend::scan;
    } else if (backend == "naive") {
      cfg.em.backend = Backend::naive;
    } else {
      throw ConfigError("config: em.backend must be 'scan' or 'naive'");
    }
  }
  try {
    cfg.em.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (root.contains("se")) {
    const json& s = root["se"];
    reject_unknown(s, "se", {"enabled"});
    read(s, "enabled", cfg.se_enabled, "se");
  }

  if (root.contains("bench")) {
    const json& b = root["bench"];
    reject_unknown(b, "bench",
                   {"sample_sizes", "methods", "repetitions", "time_budget", "em_iterations",
                    "threads", "check_equivalence"});
    read(b, "sample_sizes", cfg.bench.sample_sizes, "bench");
    read(b, "methods", cfg.bench.methods, "bench");
    read(b, "repetitions", cfg.bench.repetitions, "bench");
    read(b, "time_budget", cfg.bench.time_budget, "bench");
    read(b, "em_iterations", cfg.bench.em_iterations, "bench");
    read(b, "threads", cfg.bench.threads, "bench");
    read(b, "check_equivalence", cfg.bench.check_equivalence, "bench");
    try {
      cfg.bench.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  if (root.contains("simulation")) {
    const json& s = root["simulation"];
    reject_unknown(s, "simulation",
                   {"n", "beta", "sigma2", "Sigma", "gamma", "nu", "lambda0", "censor_mean",
                    "max_visits", "seed"});
    SimConfig& sim = cfg.simulation;
    read(s, "n", sim.n, "simulation");
    read(s, "sigma2", sim.sigma2, "simulation");
    read(s, "lambda0", sim.lambda0, "simulation");
    read(s, "censor_mean", sim.censor_mean, "simulation");
    read(s, "max_visits", sim.max_visits, "simulation");
    read(s, "seed", sim.seed, "simulation");
    if (s.contains("beta")) sim.beta = read_vec(s["beta"], "simulation.beta");
    if (s.contains("Sigma")) sim.Sigma = read_mat(s["Sigma"], "simulation.Sigma");
    if (s.contains("gamma")) sim.gamma = read_vec_list(s["gamma"], "simulation.gamma");
    if (s.contains("nu")) sim.nu = read_vec_list(s["nu"], "simulation.nu");
    try {
      sim.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: simulation: ") + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

Dataset ingest(std::istream& longitudinal, std::istream& survival, const ModelSpec& model,
               const IngestOptions& opts, const std::string& long_name,
               const std::string& surv_name) {
  // Survival file first: one subject per row.
  CsvReader sr(survival, surv_name);
  const int s_id = sr.column("id");
  const int s_time = sr.column("obs_time");
  const int s_cause = sr.column("cause");
  std::vector<int> s_cov;
  for (const std::string& c : model.survival) s_cov.push_back(sr.column(c));

  std::vector<Subject> subjects;
  std::unordered_map<std::string, std::size_t> index;
  while (sr.next()) {
    Subject s;
    s.id = sr.cell(s_id);
    if (s.id.empty()) throw InputError(sr.where() + ": empty id");
    if (!index.emplace(s.id, subjects.size()).second) {
      throw InputError(sr.where() + ": duplicate id '" + s.id + "'");
    }
    s.obs_time = sr.number(s_time);
    if (s.obs_time < 0.0) throw InputError(sr.where() + ": negative obs_time");
    const double cause = sr.number(s_cause);
    if (cause != std::floor(cause) || cause < 0 || cause > model.n_causes) {
      throw InputError(sr.where() + ": cause " + sr.cell(s_cause) + " outside 0.." +
                       std::to_string(model.n_causes));
    }
    s.cause = static_cast<int>(cause);
    s.surv_covariates.resize(static_cast<Eigen::Index>(s_cov.size()));
    for (std::size_t j = 0; j < s_cov.size(); ++j) {
      s.surv_covariates(static_cast<Eigen::Index>(j)) = sr.number(s_cov[j]);
    }
    subjects.push_back(std::move(s));
  }
  if (subjects.empty()) throw InputError(surv_name + ": no subjects");

  CsvReader lr(longitudinal, long_name);
  const int l_id = lr.column("id");
  const int l_time = lr.column("time");
  const int l_y = lr.column("y");
  const DesignColumns fixed = design_columns(lr, model.fixed, model.fixed_intercept, l_time);
  const DesignColumns random = design_columns(lr, model.random, model.random_intercept, l_time);
  if (fixed.index.empty()) throw ConfigError("config: model has no fixed-effect columns");
  if (random.index.empty()) throw ConfigError("config: model has no random-effect columns");

  std::vector<std::vector<int>> rows_of(subjects.size());
  std::vector<std::string> post_event;
  std::size_t n_post_event = 0;
  while (lr.next()) {
    const auto it = index.find(lr.cell(l_id));
    if (it == index.end()) {
      throw InputError(lr.where() + ": id '" + lr.cell(l_id) + "' has no survival record");
    }
    Subject& s = subjects[it->second];
    LongitudinalObs o;
    o.time = lr.number(l_time);
    if (o.time < 0.0) throw InputError(lr.where() + ": negative time");
    o.response = lr.number(l_y);
    o.fixed_design = design_row(lr, fixed, o.time);
    o.random_design = design_row(lr, random, o.time);
    if (o.time > s.obs_time) {
      ++n_post_event;
      if (post_event.size() < 10) {
        post_event.push_back("id " + s.id + " row " + std::to_string(lr.line()) + " (time " +
                             format_double(o.time) + " > obs_time " +
                             format_double(s.obs_time) + ")");
      }
      if (opts.drop_post_event) continue;
    }
    s.obs.push_back(std::move(o));
    rows_of[it->second].push_back(lr.line());
  }
  if (n_post_event > 0 && !opts.drop_post_event) {
    std::string msg = long_name + ": " + std::to_string(n_post_event) +
                      " measurement(s) after the subject's observed time (use --drop-post-event "
                      "to discard them):";
    for (const std::string& p : post_event) msg += "\n  " + p;
    if (n_post_event > post_event.size()) msg += "\n  ...";
    throw InputError(msg);
  }

  for (std::size_t i = 0; i < subjects.size(); ++i) {
    Subject& s = subjects[i];
    std::vector<std::size_t> order(s.obs.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s.obs[a].time < s.obs[b].time; });
    std::vector<LongitudinalObs> sorted;
    sorted.reserve(order.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
      if (j > 0 && s.obs[order[j]].time == s.obs[order[j - 1]].time) {
        const auto r0 = std::min(rows_of[i][order[j - 1]], rows_of[i][order[j]]);
        const auto r1 = std::max(rows_of[i][order[j - 1]], rows_of[i][order[j]]);
        throw InputError(long_name + " row " + std::to_string(r1) + ": duplicate (id, time) = (" +
                         s.id + ", " + format_double(s.obs[order[j]].time) + "), first seen at row " +
                         std::to_string(r0));
      }
      sorted.push_back(std::move(s.obs[order[j]]));
    }
    s.obs = std::move(sorted);
  }

  ColumnNames names{with_intercept(model.fixed, model.fixed_intercept),
                    with_intercept(model.random, model.random_intercept), model.survival};
  Dims dims{static_cast<int>(fixed.index.size()), static_cast<int>(random.index.size()),
            static_cast<int>(model.survival.size())};
  return Dataset(std::move(subjects), model.n_causes, dims, std::move(names));
}

Dataset ingest_files(const std::string& long_path, const std::string& surv_path,
                     const ModelSpec& model, const IngestOptions& opts) {
  std::ifstream lin(long_path);
  if (!lin) throw InputError("cannot read longitudinal file '" + long_path + "'");
  std::ifstream sin(surv_path);
  if (!sin) throw InputError("cannot read survival file '" + surv_path + "'");
  return ingest(lin, sin, model, opts, long_path, surv_path);
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_dataset_csv(const Dataset& data, std::ostream& longitudinal, std::ostream& survival) {
  const ColumnNames& names = data.names();
  if (static_cast<int>(names.fixed.size()) != data.dims().p ||
      static_cast<int>(names.random.size()) != data.dims().q ||
      static_cast<int>(names.survival.size()) != data.dims().p2) {
    throw std::invalid_argument("write_dataset_csv needs column names for every design column");
  }
  // Covariate columns: (is_fixed, index) per distinct non-structural name.
  std::vector<std::string> cov;
  std::vector<std::pair<bool, int>> src;
  for (int j = 0; j < data.dims().p; ++j) {
    if (is_structural(names.fixed[j])) continue;
    cov.push_back(names.fixed[j]);
    src.push_back({true, j});
  }
  for (int j = 0; j < data.dims().q; ++j) {
    const std::string& nm = names.random[j];
    if (is_structural(nm) || std::find(cov.begin(), cov.end(), nm) != cov.end()) continue;
    cov.push_back(nm);
    src.push_back({false, j});
  }

  longitudinal << "id,time,y";
  for (const std::string& c : cov) longitudinal << ',' << c;
  longitudinal << '\n';
  survival << "id,obs_time,cause";
  for (const std::string& c : names.survival) survival << ',' << c;
  survival << '\n';

  for (const Subject& s : data.subjects()) {
    for (const LongitudinalObs& o : s.obs) {
      longitudinal << s.id << ',' << format_double(o.time) << ',' << format_double(o.response);
      for (const auto& [fixed, j] : src) {
        longitudinal << ',' << format_double(fixed ? o.fixed_design(j) : o.random_design(j));
      }
      longitudinal << '\n';
    }
    survival << s.id << ',' << format_double(s.obs_time) << ',' << s.cause;
    for (Eigen::Index j = 0; j < s.surv_covariates.size(); ++j) {
      survival << ',' << format_double(s.surv_covariates(j));
    }
    survival << '\n';
  }
}

void write_dataset_files(const Dataset& data, const std::string& prefix) {
  const std::string lp = prefix + "_long.csv";
  const std::string sp = prefix + "_surv.csv";
  std::ofstream lout(lp, std::ios::binary);
  if (!lout) throw InputError("cannot write '" + lp + "'");
  std::ofstream sout(sp, std::ios::binary);
  if (!sout) throw InputError("cannot write '" + sp + "'");
  write_dataset_csv(data, lout, sout);
  if (!lout || !sout) throw InputError("write failed for '" + prefix + "_*.csv'");
}

std::string fit_report_json(const ReportInput& in) {
  const Dataset& data = *in.data;
  const FitResult& fit = *in.fit;
  const OmegaLayout layout(data.dims(), data.n_causes(), data.names());
  const Vec est = layout.pack(fit.params);

  ojson r;
  r["report_version"] = kReportVersion;
  r["n_subjects"] = data.n();
  r["n_observations"] = data.total_obs();
  r["n_causes"] = data.n_causes();
  std::vector<int> events(static_cast<std::size_t>(data.n_causes()), 0);
  for (const Subject& s : data.subjects()) {
    if (s.cause > 0) ++events[static_cast<std::size_t>(s.cause - 1)];
  }
  r["events_per_cause"] = events;
  r["converged"] = fit.converged;
  r["iterations"] = fit.iterations;
  r["loglik"] = fit.loglik_trace.empty() ? 0.0 : fit.loglik_trace.back();
  r["estimates"] = named_values(layout.names(), est);
  if (in.se != nullptr) {
    r["standard_errors"] = named_values(layout.names(), in.se->se);
    r["score_stationarity"] = in.se->stationarity;
  } else {
    r["standard_errors"] = nullptr;
  }
  ojson base = ojson::array();
  for (std::size_t k = 0; k < fit.params.causes.size(); ++k) {
    const BaselineHazard& h = fit.params.causes[k].baseline;
    ojson b;
    b["cause"] = k + 1;
    b["times"] = h.knots();
    b["jumps"] = h.jumps();
    base.push_back(std::move(b));
  }
  r["baseline_hazard"] = std::move(base);
  r["loglik_trace"] = fit.loglik_trace;
  ojson cfg;
  cfg["quad_mode"] = fit.config.quad_mode == QuadMode::standard ? "standard" : "pseudo_adaptive";
  cfg["n_q"] = fit.config.n_q;
  cfg["tol"] = fit.config.tol;
  cfg["max_iter"] = fit.config.max_iter;
  cfg["convergence_metric"] = metric_name(fit.config.metric);
  cfg["backend"] = fit.config.backend == Backend::scan ? "scan" : "naive";
  r["em_config"] = std::move(cfg);
  r["warnings"] = fit.warnings;
  ojson t;
  t["lmm"] = fit.timing.lmm;
  t["e_step"] = fit.timing.e_step;
  t["m_step"] = fit.timing.m_step;
  t["se"] = fit.timing.se;
  r["timings"] = std::move(t);
  return r.dump(2) + "\n";
}

std::string fit_report_table(const ReportInput& in) {
  const Dataset& data = *in.data;
  const FitResult& fit = *in.fit;
  const OmegaLayout layout(data.dims(), data.n_causes(), data.names());
  const Vec est = layout.pack(fit.params);
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %14s %14s\n", "parameter", "estimate", "se");
  out << line;
  for (Eigen::Index j = 0; j < est.size(); ++j) {
    if (in.se != nullptr) {
      std::snprintf(line, sizeof line, "%-28s %14.6f %14.6f\n", layout.names()[j].c_str(), est(j),
                    in.se->se(j));
    } else {
      std::snprintf(line, sizeof line, "%-28s %14.6f %14s\n", layout.names()[j].c_str(), est(j),
                    "-");
    }
    out << line;
  }
  std::snprintf(line, sizeof line, "n = %zu, iterations = %d, converged = %s, loglik = %.6f\n",
                data.n(), fit.iterations, fit.converged ? "yes" : "no",
                fit.loglik_trace.empty() ? 0.0 : fit.loglik_trace.back());
  out << line;
  return out.str();
}

}  // namespace fastjm
