#pragma once

// Independent reference computations for the tests. Everything here is
// written from the model definition directly, with loops instead of the
// library's factored forms, and never calls the code under test except for
// plain data containers.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "fastjm/model.hpp"

namespace oracle {

using fastjm::Mat;
using fastjm::Vec;

inline double log_normal_pdf(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - (x - mean) * (x - mean) / (2.0 * var);
}

inline double log_mvn(const Vec& b, const Mat& S) {
  const Eigen::FullPivLU<Mat> lu(S);
  const double q = static_cast<double>(b.size());
  return -0.5 * q * std::log(2.0 * std::numbers::pi) - 0.5 * std::log(lu.determinant()) -
         0.5 * b.dot(lu.solve(b));
}

inline double log_long(const fastjm::Subject& s, const Vec& b, const Vec& beta, double sigma2) {
  double total = 0.0;
  for (const auto& o : s.obs) {
    double mean = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j) mean += o.fixed_design(j) * beta(j);
    for (Eigen::Index j = 0; j < b.size(); ++j) mean += o.random_design(j) * b(j);
    total += log_normal_pdf(o.response, mean, sigma2);
  }
  return total;
}

// Baseline as (ascending-order-free) knot list: Lambda(t) = sum of jumps at knots <= t.
struct Step {
  std::vector<double> knots;
  std::vector<double> jumps;
  double cum(double t) const {
    double c = 0.0;
    for (std::size_t j = 0; j < knots.size(); ++j)
      if (knots[j] <= t) c += jumps[j];
    return c;
  }
  double jump(double t) const {
    for (std::size_t j = 0; j < knots.size(); ++j)
      if (knots[j] == t) return jumps[j];
    return 0.0;
  }
};

inline Step step_of(const fastjm::BaselineHazard& h) { return {h.knots(), h.jumps()}; }

inline double log_surv(const fastjm::Subject& s, const Vec& b, const std::vector<Vec>& gamma,
                       const std::vector<Vec>& nu, const std::vector<Step>& base) {
  double total = 0.0;
  for (std::size_t k = 0; k < gamma.size(); ++k) {
    double eta = 0.0;
    for (Eigen::Index j = 0; j < gamma[k].size(); ++j) eta += s.surv_covariates(j) * gamma[k](j);
    for (Eigen::Index j = 0; j < nu[k].size(); ++j) eta += b(j) * nu[k](j);
    if (s.cause == static_cast<int>(k) + 1) total += std::log(base[k].jump(s.obs_time)) + eta;
    total -= base[k].cum(s.obs_time) * std::exp(eta);
  }
  return total;
}

struct Params {
  Vec beta;
  double sigma2 = 1.0;
  Mat Sigma;
  std::vector<Vec> gamma, nu;
  std::vector<Step> base;
};

inline Params params_of(const fastjm::ParameterSet& p) {
  Params o;
  o.beta = p.beta;
  o.sigma2 = p.sigma2;
  o.Sigma = p.Sigma;
  for (const auto& c : p.causes) {
    o.gamma.push_back(c.gamma);
    o.nu.push_back(c.nu);
    o.base.push_back(step_of(c.baseline));
  }
  return o;
}

inline double log_joint(const fastjm::Subject& s, const Vec& b, const Params& p) {
  return log_long(s, b, p.beta, p.sigma2) + log_surv(s, b, p.gamma, p.nu, p.base) +
         log_mvn(b, p.Sigma);
}

// Expected complete-data log-likelihood under per-subject discrete posteriors:
// W(t, i) on nodes(i).row(t).
inline double q_function(const fastjm::Dataset& data, const Params& p, const Mat& W,
                         const std::function<const Mat&(std::size_t)>& nodes) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const Mat& pts = nodes(i);
    for (Eigen::Index t = 0; t < pts.rows(); ++t) {
      const double w = W(t, static_cast<Eigen::Index>(i));
      if (w == 0.0) continue;
      total += w * log_joint(data.subject(i), pts.row(t).transpose(), p);
    }
  }
  return total;
}

// Breslow jumps by direct filtering: d_j / sum_{r : T_r >= t_j} a_r.
inline Step breslow(const fastjm::Dataset& data, int cause, const std::vector<double>& a) {
  Step s;
  std::vector<double> times;
  for (const auto& sub : data.subjects())
    if (sub.cause == cause) times.push_back(sub.obs_time);
  std::sort(times.begin(), times.end(), std::greater<double>());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  for (double t : times) {
    double d = 0.0, den = 0.0;
    for (std::size_t r = 0; r < data.n(); ++r) {
      if (data.subject(r).cause == cause && data.subject(r).obs_time == t) d += 1.0;
      if (data.subject(r).obs_time >= t) den += a[r];
    }
    s.knots.push_back(t);
    s.jumps.push_back(d / den);
  }
  return s;
}

// Central finite-difference gradient.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    g(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// Richardson-extrapolated central difference along one coordinate; removes
// the h^2 error term so a moderate h keeps cancellation small.
inline double fd_richardson(const std::function<double(const Vec&)>& f, const Vec& x,
                            Eigen::Index j, double h) {
  auto central = [&](double s) {
    Vec xp = x, xm = x;
    xp(j) += s;
    xm(j) -= s;
    return (f(xp) - f(xm)) / (2.0 * s);
  };
  return (4.0 * central(h / 2) - central(h)) / 3.0;
}

// Survival part of Q for one cause under per-subject discrete posteriors.
inline double q_survival_cause(const fastjm::Dataset& data, int cause, const Vec& gamma,
                               const Vec& nu, const Step& base, const Mat& W,
                               const std::function<const Mat&(std::size_t)>& nodes) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& s = data.subject(i);
    const Mat& pts = nodes(i);
    const double cum = base.cum(s.obs_time);
    for (Eigen::Index t = 0; t < pts.rows(); ++t) {
      double eta = 0.0;
      for (Eigen::Index j = 0; j < gamma.size(); ++j) eta += s.surv_covariates(j) * gamma(j);
      for (Eigen::Index j = 0; j < nu.size(); ++j) eta += pts(t, j) * nu(j);
      double v = -cum * std::exp(eta);
      if (s.cause == cause) v += std::log(base.jump(s.obs_time)) + eta;
      total += W(t, static_cast<Eigen::Index>(i)) * v;
    }
  }
  return total;
}

inline double logsumexp(const std::vector<double>& v) {
  double m = -INFINITY;
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Random dataset for kernel and engine tests. Times are drawn on a coarse
// grid when ties is set so that repeated event times occur.
struct RandomDataOptions {
  int n = 50;
  int K = 2;
  int p = 2;   // fixed effects incl. intercept
  int q = 2;   // random effects (intercept, time)
  int p2 = 2;
  bool ties = true;
  double censor_prob = 0.3;
  int max_obs = 5;
  bool all_censored = false;
  bool all_events = false;
};

inline fastjm::Dataset random_dataset(std::mt19937_64& rng, const RandomDataOptions& o) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  std::vector<fastjm::Subject> subs;
  for (int i = 0; i < o.n; ++i) {
    fastjm::Subject s;
    s.id = "s" + std::to_string(1000 + i);
    double T = o.ties ? std::ceil(U(rng) * 20.0) / 4.0 : 0.2 + 5.0 * U(rng);
    s.obs_time = T;
    if (o.all_censored) {
      s.cause = 0;
    } else if (o.all_events) {
      s.cause = 1 + static_cast<int>(U(rng) * o.K) % o.K;
    } else {
      s.cause = U(rng) < o.censor_prob ? 0 : 1 + static_cast<int>(U(rng) * o.K) % o.K;
    }
    s.surv_covariates = Vec(o.p2);
    for (int j = 0; j < o.p2; ++j) s.surv_covariates(j) = j == 0 ? N(rng) : (U(rng) < 0.5);
    const int nobs = static_cast<int>(U(rng) * (o.max_obs + 1));
    for (int j = 0; j < nobs; ++j) {
      const double t = T * j / std::max(nobs, 1);
      fastjm::LongitudinalObs ob;
      ob.time = t;
      ob.fixed_design = Vec(o.p);
      ob.fixed_design(0) = 1.0;
      for (int c = 1; c < o.p; ++c) ob.fixed_design(c) = c == 1 ? t : s.surv_covariates(o.p2 - 1);
      ob.random_design = Vec(o.q);
      ob.random_design(0) = 1.0;
      for (int c = 1; c < o.q; ++c) ob.random_design(c) = t;
      ob.response = 1.0 + 0.5 * t + N(rng);
      s.obs.push_back(ob);
    }
    subs.push_back(std::move(s));
  }
  return fastjm::Dataset(std::move(subs), o.K, fastjm::Dims{o.p, o.q, o.p2});
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace oracle
