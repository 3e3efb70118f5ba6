#include "fastjm/em.hpp"

#include <chrono>
#include <cmath>
#include <span>

#include "fastjm/errors.hpp"
#include "fastjm/naive_kernels.hpp"

namespace fastjm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <class T>
std::vector<T> riskset_sums(const Dataset& data, std::span<const T> contributions,
                            std::span<const double> knots, const T& zero, Backend backend,
                            scan::OpCount* ops) {
  if (backend == Backend::naive) {
    return naive::suffix_riskset_sums<T>(contributions, data.obs_times(), knots, zero, ops);
  }
  return scan::suffix_riskset_sums<T>(contributions, data.desc_order(), knots, zero, ops);
}

std::vector<double> lookup(const Dataset& data, const BaselineHazard& h, Backend backend,
                           scan::OpCount* ops) {
  if (backend == Backend::naive) {
    return naive::step_lookup<double>(h.knots(), h.cumulative(), data.obs_times(), 0.0, ops);
  }
  return scan::step_lookup_scan<double>(h.knots(), h.cumulative(), data.desc_order(), 0.0, ops);
}

int theta_dim(const Dims& d) { return d.p2 + d.q; }

void check_cause(const Dataset& data, int cause) {
  if (cause < 1 || cause > data.n_causes()) {
    throw std::invalid_argument("cause index " + std::to_string(cause) + " outside 1.." +
                                std::to_string(data.n_causes()));
  }
}

// Survival part of Q for one cause, dropping the log-jump constant.
double q_cause(const Dataset& data, const EStepResult& post, const QuadSetup& setup,
               const Vec& gamma, const Vec& nu, int cause, std::span<const double> cum) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const Subject& s = data.subject(i);
    const double eta = s.surv_covariates.dot(gamma);
    if (s.cause == cause) total += eta + nu.dot(post.moments[i].Eb);
    if (cum[i] != 0.0) {
      const Vec e = (post.nodes(setup, i).points * nu).array().exp().matrix();
      total -= cum[i] * std::exp(eta) * post.weights.col(static_cast<Eigen::Index>(i)).dot(e);
    }
  }
  return total;
}

}  // namespace

void EmConfig::validate() const {
  if (!(tol > 0.0)) throw std::invalid_argument("em tol must be positive");
  if (max_iter < 1) throw std::invalid_argument("em max_iter must be at least 1");
  if (n_q < 1 || n_q > 64) throw std::invalid_argument("quadrature n_q must be in 1..64");
  if (!(lmm_tol > 0.0) || lmm_max_iter < 1) throw std::invalid_argument("invalid lmm settings");
}

QuadSetup make_quad_setup(const Dataset& data, QuadMode mode, int n_q, const EBayesState* eb) {
  QuadSetup setup;
  setup.mode = mode;
  setup.grid = tensor_grid(gh_rule(n_q), data.dims().q);
  if (mode == QuadMode::pseudo_adaptive) {
    if (eb == nullptr || eb->subjects.size() != data.n()) {
      throw std::invalid_argument("pseudo-adaptive quadrature needs empirical Bayes estimates "
                                  "for every subject");
    }
    setup.subject_nodes.resize(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) {
      setup.subject_nodes[i] = subject_nodes(mode, setup.grid, Mat(), &eb->subjects[i]);
    }
  }
  return setup;
}

std::vector<std::vector<double>> cumulative_hazard_at_T(const Dataset& data,
                                                        const ParameterSet& params,
                                                        Backend backend, scan::OpCount* ops) {
  std::vector<std::vector<double>> out(params.causes.size());
  for (std::size_t k = 0; k < params.causes.size(); ++k) {
    out[k] = lookup(data, params.causes[k].baseline, backend, ops);
  }
  return out;
}

EStepResult e_step(const Dataset& data, const ParameterSet& params, const QuadSetup& setup,
                   Backend backend, bool keep_weights, int threads) {
  params.validate(data.dims(), data.n_causes());
  const std::size_t n = data.n();
  const auto K = params.causes.size();
  const auto cum = cumulative_hazard_at_T(data, params, backend);

  EStepResult out;
  out.moments.resize(n);
  if (setup.mode == QuadMode::standard) out.shared_nodes = standard_nodes(setup.grid, params.Sigma);
  if (keep_weights) out.weights.resize(setup.grid.size(), static_cast<Eigen::Index>(n));
  const SpdFactor prior(params.Sigma, "Sigma");

  parallel_for(
      n,
      [&](std::size_t i) {
        const Subject& s = data.subject(i);
        SurvivalAtT surv;
        surv.cum_hazard.resize(K);
        for (std::size_t k = 0; k < K; ++k) surv.cum_hazard[k] = cum[k][i];
        if (s.cause > 0) {
          const auto& jumps = params.causes[static_cast<std::size_t>(s.cause - 1)].baseline.jumps();
          const int j = data.event_knot(i);
          if (j < 0 || static_cast<std::size_t>(j) >= jumps.size()) {
            throw FitError("event time missing from baseline support (subject " + s.id + ")");
          }
          surv.log_jump = std::log(jumps[static_cast<std::size_t>(j)]);
        }
        double* w = keep_weights ? out.weights.col(static_cast<Eigen::Index>(i)).data() : nullptr;
        out.moments[i] =
            posterior_moments(s, params, prior, out.nodes(setup, i), setup.grid, surv, w);
      },
      threads);

  for (const SubjectMoments& m : out.moments) out.loglik += m.marginal_loglik;
  return out;
}

RegressionUpdate m_step_regression(const Dataset& data, const std::vector<SubjectMoments>& moments) {
  const int p = data.dims().p;
  Mat gram = Mat::Zero(p, p);
  Vec rhs = Vec::Zero(p);
  for (std::size_t i = 0; i < data.n(); ++i) {
    const Vec& eb = moments[i].Eb;
    for (const LongitudinalObs& o : data.subject(i).obs) {
      gram.noalias() += o.fixed_design * o.fixed_design.transpose();
      rhs.noalias() += o.fixed_design * (o.response - o.random_design.dot(eb));
    }
  }
  Eigen::LDLT<Mat> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || data.total_obs() == 0 ||
      ldlt.rcond() < 1e-14) {
    throw FitError("singular normal equations for beta");
  }
  RegressionUpdate out;
  out.beta = ldlt.solve(rhs);

  double ss = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const SubjectMoments& m = moments[i];
    for (const LongitudinalObs& o : data.subject(i).obs) {
      const double e = o.response - o.fixed_design.dot(out.beta);
      const auto& z = o.random_design;
      ss += e * e - 2.0 * e * z.dot(m.Eb) + z.dot(m.Ebb * z);
    }
  }
  out.sigma2 = ss / static_cast<double>(data.total_obs());
  if (!(out.sigma2 > 0.0) || !std::isfinite(out.sigma2)) {
    throw FitError("sigma2 update is not positive (" + std::to_string(out.sigma2) + ")");
  }
  return out;
}

Mat m_step_sigma(const std::vector<SubjectMoments>& moments) {
  if (moments.empty()) throw std::invalid_argument("m_step_sigma: no subjects");
  Mat acc = Mat::Zero(moments.front().Ebb.rows(), moments.front().Ebb.cols());
  for (const SubjectMoments& m : moments) acc += m.Ebb;
  Mat sigma = symmetrized(acc / static_cast<double>(moments.size()));
  if (!is_spd(sigma)) {
    throw FitError("Sigma update is not positive definite:\n" + format_matrix(sigma));
  }
  return sigma;
}

BaselineHazard m_step_baseline(const Dataset& data, const std::vector<SubjectMoments>& moments,
                               const ParameterSet& params, int cause, Backend backend,
                               scan::OpCount* ops) {
  check_cause(data, cause);
  const auto k = static_cast<std::size_t>(cause - 1);
  const EventRegistry& reg = data.events(cause);
  std::vector<double> a(data.n());
  for (std::size_t r = 0; r < data.n(); ++r) {
    a[r] = std::exp(data.subject(r).surv_covariates.dot(params.causes[k].gamma)) *
           moments[r].Eexp[k];
  }
  const auto S = riskset_sums<double>(data, a, reg.times, 0.0, backend, ops);
  std::vector<double> jumps(S.size());
  for (std::size_t j = 0; j < S.size(); ++j) {
    if (!(S[j] > 0.0) || !std::isfinite(S[j])) {
      throw FitError("empty weighted risk set at t = " + std::to_string(reg.times[j]) +
                     " for cause " + std::to_string(cause));
    }
    jumps[j] = reg.multiplicity[j] / S[j];
  }
  return BaselineHazard(reg.times, std::move(jumps));
}

SurvivalDerivatives survival_derivatives(const Dataset& data,
                                         const std::vector<SubjectMoments>& moments,
                                         const ParameterSet& params, int cause,
                                         const BaselineHazard& baseline, Backend backend,
                                         scan::OpCount* ops) {
  check_cause(data, cause);
  const auto k = static_cast<std::size_t>(cause - 1);
  const int p2 = data.dims().p2;
  const int q = data.dims().q;
  const int m = theta_dim(data.dims());

  SurvivalDerivatives out;
  out.score = Vec::Zero(m);
  out.information = Mat::Zero(m, m);

  std::vector<Vec> a1(data.n());
  std::vector<Mat> a2(data.n());
  for (std::size_t r = 0; r < data.n(); ++r) {
    const Subject& s = data.subject(r);
    const SubjectMoments& mo = moments[r];
    const Vec& w = s.surv_covariates;
    const double e = std::exp(w.dot(params.causes[k].gamma));
    a1[r].resize(m);
    a1[r].head(p2) = e * mo.Eexp[k] * w;
    a1[r].tail(q) = e * mo.Ebexp[k];
    a2[r].resize(m, m);
    a2[r].topLeftCorner(p2, p2) = e * mo.Eexp[k] * w * w.transpose();
    a2[r].topRightCorner(p2, q) = e * w * mo.Ebexp[k].transpose();
    a2[r].bottomLeftCorner(q, p2) = a2[r].topRightCorner(p2, q).transpose();
    a2[r].bottomRightCorner(q, q) = e * mo.Ebbexp[k];
    if (s.cause == cause) {
      out.score.head(p2) += w;
      out.score.tail(q) += mo.Eb;
    }
  }
  const auto S1 = riskset_sums<Vec>(data, a1, baseline.knots(), Vec::Zero(m), backend, ops);
  const auto S2 = riskset_sums<Mat>(data, a2, baseline.knots(), Mat::Zero(m, m), backend, ops);
  const auto& dl = baseline.jumps();
  for (std::size_t j = 0; j < dl.size(); ++j) {
    out.score.noalias() -= dl[j] * S1[j];
    out.information.noalias() += dl[j] * S2[j];
  }
  out.information = symmetrized(out.information);
  return out;
}

CauseParams m_step_survival(const Dataset& data, const EStepResult& post, const QuadSetup& setup,
                            const ParameterSet& params, int cause, const BaselineHazard& baseline,
                            Backend backend) {
  check_cause(data, cause);
  const auto k = static_cast<std::size_t>(cause - 1);
  const int p2 = data.dims().p2;
  const int q = data.dims().q;
  CauseParams out = params.causes[k];
  out.baseline = baseline;
  if (data.events(cause).times.empty()) return out;
  if (post.weights.cols() != static_cast<Eigen::Index>(data.n())) {
    throw std::invalid_argument("m_step_survival needs posterior weights");
  }

  const SurvivalDerivatives d =
      survival_derivatives(data, post.moments, params, cause, baseline, backend);
  Eigen::SelfAdjointEigenSolver<Mat> eig(d.information, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 1e-13 * hi) || !(hi > 0.0)) {
    throw FitError("singular information for cause " + std::to_string(cause) +
                   " (condition estimate " + std::to_string(hi / lo) + ")\n" +
                   format_matrix(d.information));
  }
  Vec step = d.information.ldlt().solve(d.score);
  if (!step.allFinite()) {
    throw FitError("Newton step for cause " + std::to_string(cause) + " is not finite");
  }

  const BaselineHazard& h = baseline;
  const std::vector<double> cum = lookup(data, h, backend, nullptr);
  const Vec& g0 = params.causes[k].gamma;
  const Vec& n0 = params.causes[k].nu;
  const double q0 = q_cause(data, post, setup, g0, n0, cause, cum);
  for (int halving = 0; halving <= 10; ++halving) {
    const Vec g = g0 + step.head(p2);
    const Vec nu = n0 + step.tail(q);
    const double q1 = q_cause(data, post, setup, g, nu, cause, cum);
    if (std::isfinite(q1) && q1 >= q0) {
      out.gamma = g;
      out.nu = nu;
      return out;
    }
    step *= 0.5;
  }
  return out;
}

double expected_complete_loglik(const Dataset& data, const ParameterSet& params,
                                const EStepResult& post, const QuadSetup& setup) {
  if (post.weights.cols() != static_cast<Eigen::Index>(data.n())) {
    throw std::invalid_argument("expected_complete_loglik needs posterior weights");
  }
  const SpdFactor prior(params.Sigma, "Sigma");
  std::vector<double> cum(params.causes.size());
  double total = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const Subject& s = data.subject(i);
    for (std::size_t k = 0; k < params.causes.size(); ++k) {
      cum[k] = params.causes[k].baseline.cumulative_at(s.obs_time);
    }
    const Mat& pts = post.nodes(setup, i).points;
    double acc = 0.0;
    for (Eigen::Index t = 0; t < pts.rows(); ++t) {
      const double w = post.weights(t, static_cast<Eigen::Index>(i));
      if (w == 0.0) continue;
      const Vec b = pts.row(t).transpose();
      acc += w * (log_longitudinal_density(s, b, params) + log_survival_density(s, b, params, cum) +
                  log_random_effect_density(b, prior));
    }
    total += acc;
  }
  return total;
}

Vec parametric_vector(const ParameterSet& params) {
  const Vec vs = vech(params.Sigma);
  Eigen::Index d = params.beta.size() + vs.size() + 1;
  for (const CauseParams& c : params.causes) d += c.gamma.size() + c.nu.size();
  Vec out(d);
  Eigen::Index pos = 0;
  auto put = [&](const Vec& v) {
    out.segment(pos, v.size()) = v;
    pos += v.size();
  };
  put(params.beta);
  put(vs);
  out(pos++) = params.sigma2;
  for (const CauseParams& c : params.causes) put(c.gamma);
  for (const CauseParams& c : params.causes) put(c.nu);
  return out;
}

ParameterSet initial_parameters(const Dataset& data, const LmmFit& lmm) {
  const Dims& d = data.dims();
  const auto K = static_cast<std::size_t>(data.n_causes());
  ParameterSet params;
  params.beta = lmm.beta;
  params.sigma2 = lmm.sigma2;
  params.Sigma = lmm.Sigma;
  params.causes.resize(K);
  for (CauseParams& c : params.causes) {
    c.gamma = Vec::Zero(d.p2);
    c.nu = Vec::Zero(d.q);
  }
  // Unit weights give the Nelson-Aalen increments.
  std::vector<SubjectMoments> unit(data.n());
  for (SubjectMoments& m : unit) m.Eexp.assign(K, 1.0);
  for (std::size_t k = 0; k < K; ++k) {
    params.causes[k].baseline = m_step_baseline(data, unit, params, static_cast<int>(k) + 1);
  }
  return params;
}

FitResult em_fit(const Dataset& data, const EmConfig& config) {
  config.validate();
  const int threads = config.worker_count();
  FitResult fit;
  fit.config = config;

  auto t0 = Clock::now();
  check_fixed_design_rank(data);
  fit.lmm = fit_lmm(data, config.lmm_tol, config.lmm_max_iter);
  EBayesState eb;
  if (config.quad_mode == QuadMode::pseudo_adaptive) eb = empirical_bayes_all(data, fit.lmm);
  auto setup = std::make_shared<QuadSetup>(
      make_quad_setup(data, config.quad_mode, config.n_q,
                      config.quad_mode == QuadMode::pseudo_adaptive ? &eb : nullptr));
  fit.quad = setup;
  ParameterSet params = initial_parameters(data, fit.lmm);
  fit.timing.lmm = seconds_since(t0);

  t0 = Clock::now();
  EStepResult post = e_step(data, params, *setup, config.backend, true, threads);
  fit.timing.e_step += seconds_since(t0);
  fit.loglik_trace.push_back(post.loglik);
  if (config.record_trajectory) fit.trajectory.push_back(parametric_vector(params));

  const auto K = params.causes.size();
  for (int iter = 1; iter <= config.max_iter; ++iter) {
    t0 = Clock::now();
    ParameterSet next = params;
    for (std::size_t k = 0; k < K; ++k) {
      next.causes[k].baseline =
          m_step_baseline(data, post.moments, params, static_cast<int>(k) + 1, config.backend);
    }
    for (std::size_t k = 0; k < K; ++k) {
      next.causes[k] = m_step_survival(data, post, *setup, params, static_cast<int>(k) + 1,
                                       next.causes[k].baseline, config.backend);
    }
    const RegressionUpdate reg = m_step_regression(data, post.moments);
    next.beta = reg.beta;
    next.sigma2 = reg.sigma2;
    next.Sigma = m_step_sigma(post.moments);
    for (const CauseParams& c : next.causes) {
      for (double j : c.baseline.jumps()) {
        if (!(j >= 0.0)) throw FitError("negative baseline jump");
      }
    }
    fit.timing.m_step += seconds_since(t0);

    t0 = Clock::now();
    post = e_step(data, next, *setup, config.backend, true, threads);
    fit.timing.e_step += seconds_since(t0);

    double change = 0.0;
    if (config.metric == ConvergenceMetric::relative_param_change) {
      const Vec a = parametric_vector(next);
      const Vec b = parametric_vector(params);
      change = ((a - b).array().abs() / (b.array().abs() + 1e-3)).maxCoeff();
    } else {
      change = std::abs(post.loglik - fit.loglik_trace.back());
    }
    params = std::move(next);
    fit.loglik_trace.push_back(post.loglik);
    if (config.record_trajectory) fit.trajectory.push_back(parametric_vector(params));
    fit.iterations = iter;
    if (change < config.tol) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) {
    fit.warnings.push_back("EM stopped at max_iter = " + std::to_string(config.max_iter) +
                           " without meeting tol = " + std::to_string(config.tol));
  }
  fit.params = std::move(params);
  fit.moments = std::move(post.moments);
  return fit;
}

}  // namespace fastjm
