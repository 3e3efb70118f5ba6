#include <doctest.h>

#include <random>

#include "fastjm/em.hpp"
#include "fastjm/errors.hpp"
#include "fastjm/inference.hpp"
#include "fastjm/simulate.hpp"
#include "oracles.hpp"

using namespace fastjm;

namespace {

SimConfig one_cause(int n, std::uint64_t seed) {
  SimConfig c;
  c.n = n;
  c.seed = seed;
  c.lambda0 = {0.08};
  c.gamma = {(Vec(2) << 0.4, 0.5).finished()};
  c.nu = {(Vec(2) << 0.8, 0.6).finished()};
  c.max_visits = 8;
  return c;
}

SimConfig two_causes(int n, std::uint64_t seed) {
  SimConfig c;
  c.n = n;
  c.seed = seed;
  c.max_visits = 8;
  return c;
}

// Per-subject profiled log-likelihood with the posterior weights held at
// the fit: the baseline at omega is the Breslow estimator with weights
// exp(w'gamma) sum_t W_t exp(nu'b_t).
Vec profiled_loglik(const Dataset& data, const FitResult& fit, const Mat& W, const Vec& omega) {
  const OmegaLayout lay(data.dims(), data.n_causes());
  const ParameterSet ps = lay.unpack(omega, fit.params);
  oracle::Params p;
  p.beta = ps.beta;
  p.sigma2 = ps.sigma2;
  p.Sigma = ps.Sigma;
  for (int k = 1; k <= data.n_causes(); ++k) {
    const auto& c = ps.causes[k - 1];
    std::vector<double> a(data.n());
    for (std::size_t r = 0; r < data.n(); ++r) {
      const Mat& pts = fit.quad->subject_nodes[r].points;
      double e = 0.0;
      for (Eigen::Index t = 0; t < pts.rows(); ++t)
        e += W(t, static_cast<Eigen::Index>(r)) * std::exp(pts.row(t).dot(c.nu));
      a[r] = std::exp(data.subject(r).surv_covariates.dot(c.gamma)) * e;
    }
    p.gamma.push_back(c.gamma);
    p.nu.push_back(c.nu);
    p.base.push_back(oracle::breslow(data, k, a));
  }
  Vec out(static_cast<Eigen::Index>(data.n()));
  for (std::size_t i = 0; i < data.n(); ++i) {
    const NodeSet& ns = fit.quad->subject_nodes[i];
    std::vector<double> ell(static_cast<std::size_t>(ns.points.rows()));
    for (Eigen::Index t = 0; t < ns.points.rows(); ++t) {
      ell[t] = oracle::log_joint(data.subject(i), ns.points.row(t).transpose(), p) +
               fit.quad->grid.log_weight_adj(t);
    }
    out(static_cast<Eigen::Index>(i)) = oracle::logsumexp(ell) + ns.log_jacobian;
  }
  return out;
}

void check_fd_scores(const Dataset& data) {
  const FitResult fit = em_fit(data);
  const ScoreMatrix S = profiled_scores(data, fit, Backend::scan, nullptr, false);
  const EStepResult post = e_step(data, fit.params, *fit.quad, Backend::scan, true);
  const OmegaLayout lay(data.dims(), data.n_causes(), data.names());
  const Vec omega = lay.pack(fit.params);
  const double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < omega.size(); ++j) {
    Vec up = omega, dn = omega;
    up(j) += h;
    dn(j) -= h;
    const Vec fd = (profiled_loglik(data, fit, post.weights, up) -
                    profiled_loglik(data, fit, post.weights, dn)) / (2.0 * h);
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      const double an = S(i, j);
      const double err = std::abs(fd(i) - an) / std::max(std::abs(an), 1e-3);
      worst = std::max(worst, err);
      if (err > 1e-4) {
        INFO(lay.names()[j] << " subject " << i << " fd " << fd(i) << " analytic " << an);
        CHECK(err <= 1e-4);
      }
    }
  }
  MESSAGE("worst relative score error " << worst);
  CHECK(worst <= 1e-4);
}

Dataset duplicated(const Dataset& d) {
  std::vector<Subject> subs = d.subjects();
  for (const Subject& s : d.subjects()) {
    Subject c = s;
    c.id = "dup" + s.id;
    subs.push_back(std::move(c));
  }
  return Dataset(std::move(subs), d.n_causes(), d.dims(), d.names());
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("layout naming and round trip") {
  const Dims dims{3, 2, 2};
  ColumnNames names{{"(intercept)", "time", "x2"}, {"(intercept)", "time"}, {"x1", "x2"}};
  const OmegaLayout lay(dims, 2, names);
  CHECK(lay.size() == 3 + 3 + 1 + 2 * (2 + 2));
  CHECK(lay.names()[0] == "beta[(intercept)]");
  CHECK(lay.names()[lay.sigma2_offset()] == "sigma2");
  CHECK(lay.gamma_offset(2) == 9);
  CHECK(lay.nu_offset(1) == 11);

  const ParameterSet truth = sim_truth(SimConfig{});
  ParameterSet p = truth;
  p.Sigma(1, 0) = p.Sigma(0, 1) = 0.1;
  const Vec v = lay.pack(p);
  const ParameterSet back = lay.unpack(v, p);
  CHECK(lay.pack(back) == v);
  CHECK(back.Sigma == p.Sigma);
  CHECK(v(lay.sigma_offset() + 1) == 0.1);
  CHECK_THROWS_AS(lay.unpack(Vec::Zero(3), p), DimensionError);
}

TEST_CASE("covariance of the empirical information") {
  const Mat S1 = Mat::Identity(3, 3);
  CHECK((covariance(S1) - Mat::Identity(3, 3)).norm() <= 1e-14);
  Mat S2(2, 2);
  S2 << 1.0, 0.0, 0.0, 2.0;
  const Mat c = covariance(S2);
  CHECK(c(0, 0) == doctest::Approx(1.0));
  CHECK(c(1, 1) == doctest::Approx(0.25));
  Mat S3(3, 2);
  S3 << 1.0, 1.0, 2.0, 2.0, 3.0, 3.0 + 1e-9;
  CHECK_THROWS_WITH_AS(covariance(S3), doctest::Contains("condition"), FitError);
}

TEST_CASE("non-converged fits are refused") {
  EmConfig cfg;
  cfg.max_iter = 1;
  const Dataset d = simulate_dataset(two_causes(50, 1));
  const FitResult f = em_fit(d, cfg);
  CHECK_THROWS_WITH_AS(profiled_scores(d, f), doctest::Contains("converged"), FitError);
  CHECK_NOTHROW(profiled_scores(d, f, Backend::scan, nullptr, false));
}

TEST_CASE("scores match finite differences of the profiled likelihood, one cause" *
          doctest::timeout(300)) {
  check_fd_scores(simulate_dataset(one_cause(60, 31)));
}

TEST_CASE("scores match finite differences of the profiled likelihood, two causes" *
          doctest::timeout(300)) {
  check_fd_scores(simulate_dataset(two_causes(60, 32)));
}

TEST_CASE("scan and naive score assembly agree; scan work is linear") {
  const Dataset d = simulate_dataset(two_causes(200, 33));
  const FitResult f = em_fit(d);
  scan::OpCount so, no;
  const ScoreMatrix a = profiled_scores(d, f, Backend::scan, &so, false);
  const ScoreMatrix b = profiled_scores(d, f, Backend::naive, &no, false);
  const double rel = (a - b).cwiseAbs().maxCoeff() / a.cwiseAbs().maxCoeff();
  CHECK(rel <= 1e-12);
  CHECK(no.total() > 10 * so.total());

  auto ops_at = [](int n, Backend be) {
    const Dataset dd = simulate_dataset(two_causes(n, 34));
    EmConfig cfg;
    cfg.max_iter = 3;
    const FitResult ff = em_fit(dd, cfg);
    scan::OpCount c;
    (void)profiled_scores(dd, ff, be, &c, false);
    return static_cast<double>(c.total());
  };
  const double ratio = ops_at(1000, Backend::scan) / ops_at(500, Backend::scan);
  MESSAGE("scan op ratio 1000/500 = " << ratio);
  CHECK(ratio >= 1.8);
  CHECK(ratio <= 2.2);
  const double nratio = ops_at(200, Backend::naive) / ops_at(100, Backend::naive);
  MESSAGE("naive op ratio 200/100 = " << nratio);
  CHECK(nratio >= 3.5);
}

TEST_CASE("duplicating every subject shrinks standard errors by about 1/sqrt(2)" *
          doctest::timeout(300)) {
  const Dataset d = simulate_dataset(two_causes(300, 35));
  EmConfig cfg;
  cfg.tol = 1e-7;
  cfg.max_iter = 2000;
  // The empirical Bayes node scale carries the fixed-effect uncertainty, which
  // shrinks with n, so the two fits see different rules. A fine rule makes the
  // resulting difference negligible.
  cfg.n_q = 15;
  const FitResult f1 = em_fit(d, cfg);
  const Dataset d2 = duplicated(d);
  const FitResult f2 = em_fit(d2, cfg);
  REQUIRE(f1.converged);
  REQUIRE(f2.converged);
  const SeReport s1 = standard_errors(f1, d);
  const SeReport s2 = standard_errors(f2, d2);
  CHECK((s1.estimate - s2.estimate).cwiseAbs().maxCoeff() <= 1e-4);
  for (Eigen::Index j = 0; j < s1.se.size(); ++j) {
    const double r = s2.se(j) / s1.se(j);
    INFO(s1.names[j] << " ratio " << r);
    CHECK(r >= 0.65);
    CHECK(r <= 0.75);
  }
}

TEST_CASE("standard error report carries a stationarity diagnostic") {
  const Dataset d = simulate_dataset(two_causes(300, 36));
  const FitResult f = em_fit(d);
  const SeReport r = standard_errors(f, d);
  CHECK(r.names.size() == static_cast<std::size_t>(r.se.size()));
  CHECK(r.se.minCoeff() > 0.0);
  CHECK(r.stationarity ==
        doctest::Approx(r.total_score.cwiseAbs().maxCoeff() / std::sqrt(300.0)));
  MESSAGE("stationarity " << r.stationarity);
}

}
