#include <doctest.h>

#include <random>

#include "fastjm/errors.hpp"
#include "fastjm/lmm.hpp"
#include "fastjm/simulate.hpp"
#include "oracles.hpp"

using namespace fastjm;

namespace {

// Balanced design: every subject observed at t = 0..m-1, fixed (1, t),
// random intercept only.
Dataset balanced(std::mt19937_64& rng, int n, int m, double intercept_sd) {
  std::normal_distribution<double> N(0.0, 1.0);
  std::vector<Subject> subs;
  for (int i = 0; i < n; ++i) {
    Subject s;
    s.id = std::to_string(i);
    s.obs_time = m;
    s.surv_covariates = Vec::Zero(1);
    const double b = intercept_sd * N(rng);
    for (int j = 0; j < m; ++j) {
      LongitudinalObs o;
      o.time = j;
      o.fixed_design = (Vec(2) << 1.0, j).finished();
      o.random_design = Vec::Ones(1);
      o.response = 2.0 + 0.5 * j + b + N(rng);
      s.obs.push_back(o);
    }
    subs.push_back(std::move(s));
  }
  return Dataset(std::move(subs), 1, Dims{2, 1, 1});
}

double frob_rel(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

}  // namespace

TEST_SUITE("lmm") {

TEST_CASE("no random-effect variation: beta equals OLS") {
  std::mt19937_64 rng(5);
  const Dataset d = balanced(rng, 80, 4, 0.0);
  Mat xtx = Mat::Zero(2, 2);
  Vec xty = Vec::Zero(2);
  for (const auto& s : d.subjects())
    for (const auto& o : s.obs) {
      xtx += o.fixed_design * o.fixed_design.transpose();
      xty += o.fixed_design * o.response;
    }
  const Vec ols = xtx.ldlt().solve(xty);
  const LmmFit fit = fit_lmm(d);
  CHECK((fit.beta - ols).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(fit.Sigma(0, 0) < 0.1);
  CHECK(fit.sigma2 > 0.0);
}

TEST_CASE("marginal log-likelihood is nondecreasing and dominates the truth") {
  SimConfig cfg;
  cfg.n = 50;
  cfg.seed = 11;
  const Dataset d = simulate_dataset(cfg);
  const LmmFit fit = fit_lmm(d);
  for (std::size_t t = 1; t < fit.loglik_trace.size(); ++t) {
    CHECK(fit.loglik_trace[t] >= fit.loglik_trace[t - 1] - 1e-8);
  }
  const double at_truth = lmm_marginal_loglik(d, cfg.beta, cfg.sigma2, cfg.Sigma);
  CHECK(fit.loglik >= at_truth);
  CHECK(fit.loglik == doctest::Approx(lmm_marginal_loglik(d, fit.beta, fit.sigma2, fit.Sigma)));
}

TEST_CASE("marginal log-likelihood matches a dense multivariate normal") {
  std::mt19937_64 rng(8);
  oracle::RandomDataOptions o;
  o.n = 15;
  const Dataset d = oracle::random_dataset(rng, o);
  const Vec beta = (Vec(2) << 0.7, 0.3).finished();
  const Mat Sigma = (Mat(2, 2) << 0.8, 0.2, 0.2, 0.3).finished();
  const double s2 = 0.6;
  double want = 0.0;
  for (const auto& s : d.subjects()) {
    const auto ni = static_cast<Eigen::Index>(s.obs.size());
    if (ni == 0) continue;
    Mat X(ni, 2), Z(ni, 2);
    Vec y(ni);
    for (Eigen::Index j = 0; j < ni; ++j) {
      X.row(j) = s.obs[j].fixed_design.transpose();
      Z.row(j) = s.obs[j].random_design.transpose();
      y(j) = s.obs[j].response;
    }
    const Mat V = Z * Sigma * Z.transpose() + s2 * Mat::Identity(ni, ni);
    want += oracle::log_mvn(y - X * beta, V);
  }
  CHECK(lmm_marginal_loglik(d, beta, s2, Sigma) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("empirical Bayes: scalar conjugate formula and empty subject") {
  std::vector<Subject> subs(2);
  subs[0].id = "a";
  subs[0].obs_time = 1.0;
  subs[0].surv_covariates = Vec::Zero(1);
  LongitudinalObs o;
  o.fixed_design = Vec::Ones(1);
  o.random_design = Vec::Ones(1);
  o.response = 3.0;
  subs[0].obs.push_back(o);
  subs[1].id = "b";
  subs[1].obs_time = 2.0;
  subs[1].surv_covariates = Vec::Zero(1);
  const Dataset d(std::move(subs), 1, Dims{1, 1, 1});
  LmmFit fit;
  fit.beta = Vec::Constant(1, 1.2);
  fit.sigma2 = 0.5;
  fit.Sigma = Mat::Constant(1, 1, 2.0);
  const EBayesState eb = empirical_bayes_all(d, fit);
  CHECK(eb.subjects[0].b_tilde(0) == doctest::Approx(2.0 * (3.0 - 1.2) / (2.0 + 0.5)).epsilon(1e-14));
  CHECK(eb.subjects[1].b_tilde(0) == 0.0);
  CHECK(eb.subjects[1].H_inv(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("cached and per-subject recomputed empirical Bayes agree") {
  std::mt19937_64 rng(21);
  oracle::RandomDataOptions o;
  o.n = 200;
  o.max_obs = 6;
  const Dataset d = oracle::random_dataset(rng, o);
  const LmmFit fit = fit_lmm(d);
  const EBayesState a = empirical_bayes_all(d, fit);
  const EBayesState b = empirical_bayes_all_naive(d, fit);
  double worst_h = 0.0, worst_b = 0.0, worst_sqrt = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    const auto& x = a.subjects[i];
    const auto& y = b.subjects[i];
    worst_h = std::max(worst_h, frob_rel(x.H_inv, y.H_inv));
    worst_b = std::max(worst_b, (x.b_tilde - y.b_tilde).norm() / std::max(y.b_tilde.norm(), 1e-12));
    worst_sqrt = std::max(worst_sqrt, frob_rel(x.H_inv_sqrt * x.H_inv_sqrt.transpose(), x.H_inv));
    CHECK(is_spd(x.H_inv));
  }
  CHECK(worst_h <= 1e-12);
  CHECK(worst_b <= 1e-12);
  CHECK(worst_sqrt <= 1e-10);
}

TEST_CASE("rank-deficient fixed design names the collinear column") {
  std::vector<Subject> subs;
  for (int i = 0; i < 5; ++i) {
    Subject s;
    s.id = std::to_string(i);
    s.obs_time = 3.0;
    s.surv_covariates = Vec::Zero(1);
    for (int j = 0; j < 3; ++j) {
      LongitudinalObs o;
      o.time = j;
      o.fixed_design = (Vec(3) << 1.0, j, 2.0 * j).finished();
      o.random_design = Vec::Ones(1);
      o.response = j + i;
      s.obs.push_back(o);
    }
    subs.push_back(std::move(s));
  }
  ColumnNames names{{"(intercept)", "time", "twice_time"}, {"(intercept)"}, {"w"}};
  const Dataset d(std::move(subs), 1, Dims{3, 1, 1}, names);
  CHECK_THROWS_WITH_AS(fit_lmm(d), doctest::Contains("twice_time"), InputError);
}

TEST_CASE("no measurements at all is an error") {
  std::vector<Subject> subs(1);
  subs[0].id = "x";
  subs[0].obs_time = 1.0;
  subs[0].surv_covariates = Vec::Zero(1);
  const Dataset d(std::move(subs), 1, Dims{1, 1, 1});
  CHECK_THROWS_AS(fit_lmm(d), InputError);
}

TEST_CASE("recovery of the mixed-model truth over 50 replications" * doctest::timeout(600)) {
  SimConfig cfg;
  cfg.n = 2000;
  cfg.max_visits = 6;
  // Effectively no dropout: negligible hazards and censoring far beyond the last visit.
  cfg.lambda0 = {1e-12, 1e-12};
  cfg.censor_mean = 1e9;
  const int reps = 50;
  std::vector<Vec> est;
  for (int r = 0; r < reps; ++r) {
    cfg.seed = 1000 + r;
    const LmmFit f = fit_lmm(simulate_dataset(cfg));
    Vec v(7);
    v << f.beta, f.sigma2, f.Sigma(0, 0), f.Sigma(1, 1), f.Sigma(1, 0);
    est.push_back(v);
  }
  Vec truth(7);
  truth << cfg.beta, cfg.sigma2, cfg.Sigma(0, 0), cfg.Sigma(1, 1), cfg.Sigma(1, 0);
  Vec mean = Vec::Zero(7);
  for (const auto& v : est) mean += v / reps;
  for (Eigen::Index j = 0; j < 7; ++j) {
    double ss = 0.0;
    for (const auto& v : est) ss += (v(j) - mean(j)) * (v(j) - mean(j));
    const double mcse = std::sqrt(ss / (reps - 1)) / std::sqrt(static_cast<double>(reps));
    INFO("component " << j << " mean " << mean(j) << " truth " << truth(j) << " mcse " << mcse);
    CHECK(std::abs(mean(j) - truth(j)) <= 3.0 * mcse);
  }
}

}
