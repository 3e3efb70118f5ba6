#include "fastjm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fastjm/errors.hpp"

namespace fastjm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_len(const std::string& field, Eigen::Index expected, Eigen::Index actual) {
  if (expected != actual) {
    throw DimensionError(field, static_cast<std::size_t>(expected),
                         static_cast<std::size_t>(actual));
  }
}

}  // namespace

Dataset::Dataset(std::vector<Subject> subjects, int n_causes, Dims dims, ColumnNames names)
    : subjects_(std::move(subjects)), n_causes_(n_causes), dims_(dims), names_(std::move(names)) {
  if (n_causes_ < 1) throw InputError("number of causes must be at least 1");
  if (subjects_.empty()) throw InputError("dataset has no subjects");

  obs_times_.resize(subjects_.size());
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    const Subject& s = subjects_[i];
    const std::string who = "subject " + s.id;
    if (!std::isfinite(s.obs_time) || s.obs_time < 0.0) {
      throw InputError(who + ": observed time must be finite and nonnegative");
    }
    if (s.cause < 0 || s.cause > n_causes_) {
      throw InputError(who + ": cause " + std::to_string(s.cause) + " outside 0.." +
                       std::to_string(n_causes_));
    }
    check_len(who + " surv_covariates", dims_.p2, s.surv_covariates.size());
    if (!s.surv_covariates.allFinite()) throw InputError(who + ": non-finite survival covariate");
    double prev = -1.0;
    for (const LongitudinalObs& o : s.obs) {
      check_len(who + " fixed_design", dims_.p, o.fixed_design.size());
      check_len(who + " random_design", dims_.q, o.random_design.size());
      if (!std::isfinite(o.time) || !std::isfinite(o.response) || !o.fixed_design.allFinite() ||
          !o.random_design.allFinite()) {
        throw InputError(who + ": non-finite longitudinal entry");
      }
      if (o.time < 0.0) throw InputError(who + ": negative measurement time");
      if (o.time < prev) throw InputError(who + ": observations not ascending in time");
      if (o.time > s.obs_time) {
        throw InputError(who + ": measurement at time " + std::to_string(o.time) +
                         " after observed time " + std::to_string(s.obs_time));
      }
      prev = o.time;
    }
    total_obs_ += s.obs.size();
    obs_times_[i] = s.obs_time;
  }

  desc_ = scan::DescendingQueries::from_times(
      obs_times_, [this](std::size_t a, std::size_t b) { return subjects_[a].id < subjects_[b].id; });

  // Event registries: walk the descending order once and collapse ties.
  events_.assign(static_cast<std::size_t>(n_causes_), EventRegistry{});
  event_knot_.assign(subjects_.size(), -1);
  const auto& order = desc_.index();
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const std::size_t i = order[pos];
    const int k = subjects_[i].cause;
    if (k == 0) continue;
    EventRegistry& reg = events_[static_cast<std::size_t>(k - 1)];
    const double t = subjects_[i].obs_time;
    if (reg.times.empty() || reg.times.back() != t) {
      reg.times.push_back(t);
      reg.multiplicity.push_back(1);
    } else {
      ++reg.multiplicity.back();
    }
    event_knot_[i] = static_cast<int>(reg.times.size()) - 1;
  }
}

BaselineHazard::BaselineHazard(std::vector<double> knots, std::vector<double> jumps)
    : knots_(std::move(knots)), jumps_(std::move(jumps)) {
  if (knots_.size() != jumps_.size()) {
    throw DimensionError("baseline jumps", knots_.size(), jumps_.size());
  }
  scan::validate_descending_knots(knots_);
  cumulative_.assign(knots_.size(), 0.0);
  double acc = 0.0;
  for (std::size_t j = knots_.size(); j-- > 0;) {
    if (!(jumps_[j] >= 0.0) || !std::isfinite(jumps_[j])) {
      throw FitError("baseline hazard jump at knot " + std::to_string(j) +
                     " is negative or non-finite");
    }
    acc += jumps_[j];
    cumulative_[j] = acc;
  }
}

double BaselineHazard::cumulative_at(double t) const {
  // first knot (descending) with knot <= t
  auto it = std::lower_bound(knots_.begin(), knots_.end(), t, std::greater<double>());
  if (it == knots_.end()) return 0.0;
  return cumulative_[static_cast<std::size_t>(it - knots_.begin())];
}

double BaselineHazard::jump_at(double t) const {
  auto it = std::lower_bound(knots_.begin(), knots_.end(), t, std::greater<double>());
  if (it == knots_.end() || *it != t) {
    throw FitError("event time missing from baseline support (t = " + std::to_string(t) + ")");
  }
  return jumps_[static_cast<std::size_t>(it - knots_.begin())];
}

void ParameterSet::validate(const Dims& dims, int n_causes) const {
  check_len("beta", dims.p, beta.size());
  check_len("Sigma rows", dims.q, Sigma.rows());
  check_len("Sigma cols", dims.q, Sigma.cols());
  check_len("causes", n_causes, static_cast<Eigen::Index>(causes.size()));
  for (std::size_t k = 0; k < causes.size(); ++k) {
    check_len("gamma" + std::to_string(k + 1), dims.p2, causes[k].gamma.size());
    check_len("nu" + std::to_string(k + 1), dims.q, causes[k].nu.size());
  }
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw FitError("sigma2 must be positive");
  if (!is_spd(Sigma)) throw FitError("Sigma is not positive definite:\n" + format_matrix(Sigma));
}

double log_longitudinal_density(const Subject& subject, const Vec& b, const ParameterSet& params) {
  if (subject.obs.empty()) return 0.0;
  check_len("b", params.Sigma.rows() > 0 ? params.Sigma.rows() : b.size(), b.size());
  const double log_norm = -0.5 * (kLog2Pi + std::log(params.sigma2));
  double total = 0.0;
  for (const LongitudinalObs& o : subject.obs) {
    check_len("fixed_design", params.beta.size(), o.fixed_design.size());
    check_len("random_design", b.size(), o.random_design.size());
    const double r = o.response - o.fixed_design.dot(params.beta) - o.random_design.dot(b);
    total += log_norm - r * r / (2.0 * params.sigma2);
  }
  return total;
}

double log_survival_density(const Subject& subject, const Vec& b, const ParameterSet& params,
                            std::span<const double> cum_hazard_at_T) {
  check_len("cum_hazard_at_T", static_cast<Eigen::Index>(params.causes.size()),
            static_cast<Eigen::Index>(cum_hazard_at_T.size()));
  double total = 0.0;
  for (std::size_t k = 0; k < params.causes.size(); ++k) {
    const CauseParams& c = params.causes[k];
    check_len("gamma" + std::to_string(k + 1), c.gamma.size(), subject.surv_covariates.size());
    check_len("nu" + std::to_string(k + 1), c.nu.size(), b.size());
    const double eta = subject.surv_covariates.dot(c.gamma) + c.nu.dot(b);
    if (subject.cause == static_cast<int>(k) + 1) {
      total += std::log(c.baseline.jump_at(subject.obs_time)) + eta;
    }
    total -= cum_hazard_at_T[k] * std::exp(eta);
  }
  return total;
}

double log_random_effect_density(const Vec& b, const SpdFactor& sigma) {
  check_len("b", sigma.dim(), b.size());
  return -0.5 * (static_cast<double>(b.size()) * kLog2Pi + sigma.log_det() +
                 sigma.quad_form_inv(b));
}

double log_complete_data(const Dataset& data, std::span<const Vec> b_all,
                         const ParameterSet& params) {
  check_len("b_all", static_cast<Eigen::Index>(data.n()),
            static_cast<Eigen::Index>(b_all.size()));
  const SpdFactor sigma(params.Sigma, "Sigma");
  std::vector<double> cum(params.causes.size());
  double total = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const Subject& s = data.subject(i);
    for (std::size_t k = 0; k < params.causes.size(); ++k) {
      cum[k] = params.causes[k].baseline.cumulative_at(s.obs_time);
    }
    total += log_longitudinal_density(s, b_all[i], params) +
             log_survival_density(s, b_all[i], params, cum) +
             log_random_effect_density(b_all[i], sigma);
  }
  return total;
}

}  // namespace fastjm
