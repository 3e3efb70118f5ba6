#include "fastjm/inference.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "fastjm/errors.hpp"
#include "fastjm/naive_kernels.hpp"
#include "fastjm/parallel.hpp"

namespace fastjm {

namespace {

std::string label(const std::vector<std::string>& names, int j, const std::string& fallback) {
  return static_cast<std::size_t>(j) < names.size() ? names[j] : fallback + std::to_string(j + 1);
}

// Per-cause profiling quantities at the knots of one cause.
struct CauseProfile {
  std::vector<double> s0;  // weighted risk-set size
  std::vector<Vec> s1;     // risk-set sums of exp(w'gamma) [Eexp w; Ebexp]
  BaselineHazard baseline;
};

CauseProfile profile_cause(const Dataset& data, const std::vector<SubjectMoments>& moments,
                           const CauseParams& cp, int cause, Backend backend,
                           scan::OpCount* ops) {
  const auto k = static_cast<std::size_t>(cause - 1);
  const int p2 = data.dims().p2;
  const int q = data.dims().q;
  const int m = p2 + q;
  const EventRegistry& reg = data.events(cause);

  std::vector<Vec> packed(data.n());
  for (std::size_t r = 0; r < data.n(); ++r) {
    const Vec& w = data.subject(r).surv_covariates;
    const double e = std::exp(w.dot(cp.gamma));
    packed[r].resize(1 + m);
    packed[r](0) = e * moments[r].Eexp[k];
    packed[r].segment(1, p2) = e * moments[r].Eexp[k] * w;
    packed[r].tail(q) = e * moments[r].Ebexp[k];
  }
  const Vec zero = Vec::Zero(1 + m);
  const std::vector<Vec> sums =
      backend == Backend::naive
          ? naive::suffix_riskset_sums<Vec>(packed, data.obs_times(), reg.times, zero, ops)
          : scan::suffix_riskset_sums<Vec>(packed, data.desc_order(), reg.times, zero, ops);

  CauseProfile out;
  out.s0.resize(sums.size());
  out.s1.resize(sums.size());
  std::vector<double> jumps(sums.size());
  for (std::size_t j = 0; j < sums.size(); ++j) {
    out.s0[j] = sums[j](0);
    out.s1[j] = sums[j].tail(m);
    if (!(out.s0[j] > 0.0) || !std::isfinite(out.s0[j])) {
      throw FitError("degenerate risk-set denominator at t = " + std::to_string(reg.times[j]));
    }
    jumps[j] = reg.multiplicity[j] / out.s0[j];
  }
  out.baseline = BaselineHazard(reg.times, std::move(jumps));
  return out;
}

// Lambda(T_i) and B(T_i) = sum_{t_j <= T_i} d_j S1_j / S0_j^2 per subject, plus
// S1/S0 at each subject's own knot, by re-summing the risk set for every
// (subject, knot) pair.
struct NaiveAccum {
  std::vector<double> cum;
  std::vector<Vec> B;
  std::vector<Vec> own;
};

NaiveAccum naive_accumulate(const Dataset& data, const std::vector<SubjectMoments>& moments,
                            const CauseParams& cp, int cause, scan::OpCount* ops) {
  const auto k = static_cast<std::size_t>(cause - 1);
  const int p2 = data.dims().p2;
  const int q = data.dims().q;
  const int m = p2 + q;
  const std::size_t n = data.n();
  const EventRegistry& reg = data.events(cause);
  const std::vector<double>& T = data.obs_times();

  std::vector<double> a(n);
  std::vector<double> c(n * static_cast<std::size_t>(m));
  for (std::size_t r = 0; r < n; ++r) {
    const Vec& w = data.subject(r).surv_covariates;
    const double e = std::exp(w.dot(cp.gamma));
    a[r] = e * moments[r].Eexp[k];
    for (int l = 0; l < p2; ++l) c[r * m + l] = a[r] * w(l);
    for (int l = 0; l < q; ++l) c[r * m + p2 + l] = e * moments[r].Ebexp[k](l);
  }

  NaiveAccum out;
  out.cum.assign(n, 0.0);
  out.B.assign(n, Vec::Zero(m));
  out.own.assign(n, Vec::Zero(m));
  std::vector<std::uint64_t> adds(n, 0), cmps(n, 0);
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> s1(static_cast<std::size_t>(m));
    for (std::size_t j = 0; j < reg.times.size(); ++j) {
      const double t = reg.times[j];
      ++cmps[i];
      if (t > T[i]) continue;
      double s0 = 0.0;
      std::fill(s1.begin(), s1.end(), 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        if (T[r] >= t) {
          s0 += a[r];
          for (int l = 0; l < m; ++l) s1[l] += c[r * m + l];
        }
      }
      cmps[i] += n;
      adds[i] += n;
      const double d = reg.multiplicity[j];
      out.cum[i] += d / s0;
      for (int l = 0; l < m; ++l) out.B[i](l) += d * s1[l] / (s0 * s0);
      if (data.subject(i).cause == cause && t == T[i]) {
        for (int l = 0; l < m; ++l) out.own[i](l) = s1[l] / s0;
      }
    }
  });
  if (ops) {
    for (std::size_t i = 0; i < n; ++i) {
      ops->additions += adds[i];
      ops->comparisons += cmps[i];
    }
  }
  return out;
}

}  // namespace

OmegaLayout::OmegaLayout(const Dims& dims, int n_causes, const ColumnNames& names)
    : dims_(dims), n_causes_(n_causes) {
  for (int j = 0; j < dims.p; ++j) names_.push_back("beta[" + label(names.fixed, j, "x") + "]");
  for (int a = 0; a < dims.q; ++a) {
    for (int b = 0; b <= a; ++b) {
      names_.push_back("Sigma[" + std::to_string(a + 1) + "," + std::to_string(b + 1) + "]");
    }
  }
  names_.push_back("sigma2");
  for (int k = 1; k <= n_causes; ++k) {
    for (int j = 0; j < dims.p2; ++j) {
      names_.push_back("gamma" + std::to_string(k) + "[" + label(names.survival, j, "w") + "]");
    }
  }
  for (int k = 1; k <= n_causes; ++k) {
    for (int j = 0; j < dims.q; ++j) {
      names_.push_back("nu" + std::to_string(k) + "[" + label(names.random, j, "z") + "]");
    }
  }
}

Vec OmegaLayout::pack(const ParameterSet& params) const {
  params.validate(dims_, n_causes_);
  return parametric_vector(params);
}

ParameterSet OmegaLayout::unpack(const Vec& omega, const ParameterSet& base) const {
  if (omega.size() != size()) {
    throw DimensionError("omega", static_cast<std::size_t>(size()),
                         static_cast<std::size_t>(omega.size()));
  }
  ParameterSet out = base;
  out.beta = omega.segment(beta_offset(), dims_.p);
  out.Sigma = unvech(omega.segment(sigma_offset(), dims_.q * (dims_.q + 1) / 2), dims_.q);
  out.sigma2 = omega(sigma2_offset());
  out.causes.resize(static_cast<std::size_t>(n_causes_));
  for (int k = 1; k <= n_causes_; ++k) {
    out.causes[k - 1].gamma = omega.segment(gamma_offset(k), dims_.p2);
    out.causes[k - 1].nu = omega.segment(nu_offset(k), dims_.q);
  }
  return out;
}

ScoreMatrix profiled_scores(const Dataset& data, const FitResult& fit, Backend backend,
                            scan::OpCount* ops, bool require_converged) {
  if (require_converged && !fit.converged) {
    throw FitError("standard errors need a converged fit");
  }
  if (!fit.quad) throw std::invalid_argument("fit carries no quadrature setup");
  if (fit.moments.size() != data.n()) {
    throw DimensionError("fit moments", data.n(), fit.moments.size());
  }
  const Dims& dims = data.dims();
  const int K = data.n_causes();
  const int m = dims.p2 + dims.q;
  const OmegaLayout layout(dims, K, data.names());
  const std::size_t n = data.n();

  // Profiled baselines and the accumulations feeding the gamma/nu blocks.
  ParameterSet prof = fit.params;
  std::vector<CauseProfile> cp(static_cast<std::size_t>(K));
  std::vector<std::vector<double>> cum(static_cast<std::size_t>(K));
  std::vector<std::vector<Vec>> B(static_cast<std::size_t>(K));
  std::vector<std::vector<Vec>> own(static_cast<std::size_t>(K), std::vector<Vec>(n, Vec::Zero(m)));
  for (int k = 1; k <= K; ++k) {
    const auto kk = static_cast<std::size_t>(k - 1);
    cp[kk] = profile_cause(data, fit.moments, fit.params.causes[kk], k, backend, ops);
    prof.causes[kk].baseline = cp[kk].baseline;
    const EventRegistry& reg = data.events(k);
    if (backend == Backend::naive) {
      NaiveAccum acc = naive_accumulate(data, fit.moments, fit.params.causes[kk], k, ops);
      cum[kk] = std::move(acc.cum);
      B[kk] = std::move(acc.B);
      own[kk] = std::move(acc.own);
    } else {
      std::vector<Vec> per_knot(reg.times.size());
      for (std::size_t j = 0; j < reg.times.size(); ++j) {
        per_knot[j] = reg.multiplicity[j] * cp[kk].s1[j] / (cp[kk].s0[j] * cp[kk].s0[j]);
      }
      B[kk] = scan::prefix_event_accumulate<Vec>(per_knot, reg.times, data.desc_order(),
                                                 Vec::Zero(m), ops);
      cum[kk] = scan::step_lookup_scan<double>(cp[kk].baseline.knots(),
                                               cp[kk].baseline.cumulative(), data.desc_order(),
                                               0.0, ops);
      for (std::size_t i = 0; i < n; ++i) {
        if (data.subject(i).cause != k) continue;
        const auto j = static_cast<std::size_t>(data.event_knot(i));
        own[kk][i] = cp[kk].s1[j] / cp[kk].s0[j];
      }
    }
  }

  // Posterior at the fitted parameters with the profiled baselines.
  const EStepResult post = e_step(data, prof, *fit.quad, backend);
  const SpdFactor sigma(fit.params.Sigma, "Sigma");
  const Mat& Si = sigma.inverse();
  const double s2 = fit.params.sigma2;

  ScoreMatrix S(static_cast<Eigen::Index>(n), layout.size());
  parallel_for(n, [&](std::size_t i) {
    const Subject& s = data.subject(i);
    const SubjectMoments& mo = post.moments[i];
    Vec row = Vec::Zero(layout.size());

    Vec gb = Vec::Zero(dims.p);
    double er2 = 0.0;
    for (const LongitudinalObs& o : s.obs) {
      const double e = o.response - o.fixed_design.dot(fit.params.beta);
      const double zeb = o.random_design.dot(mo.Eb);
      gb += o.fixed_design * (e - zeb);
      er2 += e * e - 2.0 * e * zeb + o.random_design.dot(mo.Ebb * o.random_design);
    }
    row.segment(layout.beta_offset(), dims.p) = gb / s2;
    const double ni = static_cast<double>(s.obs.size());
    row(layout.sigma2_offset()) = -ni / (2.0 * s2) + er2 / (2.0 * s2 * s2);

    const Mat G = 0.5 * (Si * mo.Ebb * Si - Si);
    Eigen::Index pos = layout.sigma_offset();
    for (int a = 0; a < dims.q; ++a) {
      for (int b = 0; b <= a; ++b) row(pos++) = a == b ? G(a, a) : 2.0 * G(a, b);
    }

    const Vec& w = s.surv_covariates;
    for (int k = 1; k <= K; ++k) {
      const auto kk = static_cast<std::size_t>(k - 1);
      const CauseParams& c = fit.params.causes[kk];
      const double e = std::exp(w.dot(c.gamma));
      const Vec& Bi = B[kk][i];
      Vec g = -e * mo.Eexp[kk] * (w * cum[kk][i] - Bi.head(dims.p2));
      Vec nu = -e * (mo.Ebexp[kk] * cum[kk][i] - mo.Eexp[kk] * Bi.tail(dims.q));
      if (s.cause == k) {
        g += w - own[kk][i].head(dims.p2);
        nu += mo.Eb - own[kk][i].tail(dims.q);
      }
      row.segment(layout.gamma_offset(k), dims.p2) = g;
      row.segment(layout.nu_offset(k), dims.q) = nu;
    }
    S.row(static_cast<Eigen::Index>(i)) = row.transpose();
  });
  return S;
}

Mat covariance(const ScoreMatrix& scores) {
  const Mat info = symmetrized(scores.transpose() * scores);
  Eigen::SelfAdjointEigenSolver<Mat> eig(info);
  const Vec& ev = eig.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    std::ostringstream msg;
    msg << "empirical information is ill-conditioned (condition number "
        << (lo > 0.0 ? hi / lo : INFINITY) << "); eigenvalues:";
    for (Eigen::Index j = 0; j < ev.size(); ++j) msg << ' ' << ev(j);
    throw FitError(msg.str());
  }
  const Mat& V = eig.eigenvectors();
  return symmetrized(V * ev.cwiseInverse().asDiagonal() * V.transpose());
}

SeReport standard_errors(const FitResult& fit, const Dataset& data, Backend backend) {
  const OmegaLayout layout(data.dims(), data.n_causes(), data.names());
  const ScoreMatrix S = profiled_scores(data, fit, backend);
  SeReport rep;
  rep.names = layout.names();
  rep.estimate = layout.pack(fit.params);
  rep.cov = covariance(S);
  rep.total_score = S.colwise().sum().transpose();
  rep.stationarity =
      rep.total_score.cwiseAbs().maxCoeff() / std::sqrt(static_cast<double>(data.n()));
  rep.se.resize(rep.cov.rows());
  for (Eigen::Index j = 0; j < rep.cov.rows(); ++j) {
    if (!(rep.cov(j, j) > 0.0)) {
      throw FitError("covariance has a nonpositive diagonal entry for " + rep.names[j]);
    }
    rep.se(j) = std::sqrt(rep.cov(j, j));
  }
  return rep;
}

}  // namespace fastjm
