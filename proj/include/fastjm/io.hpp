#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fastjm/bench.hpp"
#include "fastjm/em.hpp"
#include "fastjm/inference.hpp"
#include "fastjm/model.hpp"
#include "fastjm/simulate.hpp"

namespace fastjm {

inline constexpr int kReportVersion = 1;

// Column lists refer to CSV headers. "time" names the measurement-time column
// of the longitudinal file; intercepts are prepended when requested.
struct ModelSpec {
  std::vector<std::string> fixed = {"time", "x2"};
  std::vector<std::string> random = {"time"};
  std::vector<std::string> survival = {"x1", "x2"};
  bool fixed_intercept = true;
  bool random_intercept = true;
  int n_causes = 2;
};

struct RunConfig {
  ModelSpec model;
  EmConfig em;
  bool se_enabled = true;
  BenchPlan bench;
  SimConfig simulation;
};

// Unknown keys and bad values raise ConfigError.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

struct IngestOptions {
  bool drop_post_event = false;
};

// Streaming CSV ingestion of a longitudinal file (id, time, y, covariates...)
// and a survival file (id, obs_time, cause, covariates...).
Dataset ingest(std::istream& longitudinal, std::istream& survival, const ModelSpec& model,
               const IngestOptions& opts = {}, const std::string& long_name = "longitudinal",
               const std::string& surv_name = "survival");
Dataset ingest_files(const std::string& long_path, const std::string& surv_path,
                     const ModelSpec& model, const IngestOptions& opts = {});

// Writes the two CSV files in the layout ingest() reads. Covariate columns
// are the named design columns other than intercepts and time.
void write_dataset_csv(const Dataset& data, std::ostream& longitudinal, std::ostream& survival);
void write_dataset_files(const Dataset& data, const std::string& prefix);

std::string format_double(double x);  // 17 significant digits

struct ReportInput {
  const Dataset* data = nullptr;
  const FitResult* fit = nullptr;
  const SeReport* se = nullptr;  // may be null
};

// JSON report text (pretty-printed, keys in fixed order).
std::string fit_report_json(const ReportInput& in);
// Fixed-width table of estimates (and SEs when present).
std::string fit_report_table(const ReportInput& in);

}  // namespace fastjm
