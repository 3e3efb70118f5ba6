#pragma once

#include <span>
#include <string>
#include <vector>

#include "fastjm/linalg.hpp"
#include "fastjm/scan_kernels.hpp"

namespace fastjm {

struct LongitudinalObs {
  double time = 0.0;
  double response = 0.0;
  Vec fixed_design;   // length p
  Vec random_design;  // length q
};

struct Subject {
  std::string id;
  std::vector<LongitudinalObs> obs;  // ascending by time, may be empty
  Vec surv_covariates;               // length p2
  double obs_time = 0.0;
  int cause = 0;  // 0 = censored, otherwise 1..K
};

struct Dims {
  int p = 0;   // fixed effects
  int q = 0;   // random effects
  int p2 = 0;  // survival covariates
};

struct ColumnNames {
  std::vector<std::string> fixed;
  std::vector<std::string> random;
  std::vector<std::string> survival;
};

// Distinct uncensored times of one cause, strictly descending, with tie counts.
struct EventRegistry {
  std::vector<double> times;
  std::vector<int> multiplicity;
};

// Validated, immutable collection of subjects with the sorted views built once:
// the descending observed-time order and the per-cause event registries.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Subject> subjects, int n_causes, Dims dims, ColumnNames names = {});

  const std::vector<Subject>& subjects() const { return subjects_; }
  const Subject& subject(std::size_t i) const { return subjects_[i]; }
  std::size_t n() const { return subjects_.size(); }
  int n_causes() const { return n_causes_; }
  const Dims& dims() const { return dims_; }
  const ColumnNames& names() const { return names_; }
  std::size_t total_obs() const { return total_obs_; }

  const scan::DescendingQueries& desc_order() const { return desc_; }
  // Observed times in subject order.
  const std::vector<double>& obs_times() const { return obs_times_; }

  // cause is 1-based.
  const EventRegistry& events(int cause) const { return events_[cause - 1]; }
  // Index of subject i's own time among events(cause_i).times, or -1 if censored.
  int event_knot(std::size_t i) const { return event_knot_[i]; }

 private:
  std::vector<Subject> subjects_;
  int n_causes_ = 1;
  Dims dims_;
  ColumnNames names_;
  std::size_t total_obs_ = 0;
  scan::DescendingQueries desc_;
  std::vector<double> obs_times_;
  std::vector<EventRegistry> events_;
  std::vector<int> event_knot_;
};

// Breslow-type cumulative baseline hazard for one cause: a right-continuous
// step function with jumps at descending knots.
class BaselineHazard {
 public:
  BaselineHazard() = default;
  // knots strictly descending, jumps >= 0 and aligned with knots.
  BaselineHazard(std::vector<double> knots, std::vector<double> jumps);

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& jumps() const { return jumps_; }
  // cumulative()[j] = sum of jumps at knots <= knots()[j]
  const std::vector<double>& cumulative() const { return cumulative_; }
  std::size_t size() const { return knots_.size(); }

  // Binary-search evaluation; used by the public density API, not hot loops.
  double cumulative_at(double t) const;
  // Throws FitError("event time missing from baseline support") if t is not a knot.
  double jump_at(double t) const;

 private:
  std::vector<double> knots_;
  std::vector<double> jumps_;
  std::vector<double> cumulative_;
};

struct CauseParams {
  Vec gamma;  // length p2
  Vec nu;     // length q
  BaselineHazard baseline;
};

struct ParameterSet {
  Vec beta;
  double sigma2 = 1.0;
  Mat Sigma;
  std::vector<CauseParams> causes;  // causes[k-1] for cause k

  // Checks sigma2 > 0, Sigma SPD and dimensions against dims.
  void validate(const Dims& dims, int n_causes) const;
};

// Sum over observations of log N(Y_ij; x'beta + z'b, sigma2); 0 for no observations.
double log_longitudinal_density(const Subject& subject, const Vec& b, const ParameterSet& params);

// Event term log dLambda_k(T) + w'gamma_k + nu_k'b for the observed cause, minus
// sum_k Lambda_k(T) exp(w'gamma_k + nu_k'b). cum_hazard_at_T[k-1] = Lambda_k(T).
double log_survival_density(const Subject& subject, const Vec& b, const ParameterSet& params,
                            std::span<const double> cum_hazard_at_T);

double log_random_effect_density(const Vec& b, const SpdFactor& sigma);

// Complete-data log-likelihood summed over subjects. Cumulative hazards at each
// T_i are evaluated from the baselines in params.
double log_complete_data(const Dataset& data, std::span<const Vec> b_all,
                         const ParameterSet& params);

}  // namespace fastjm
