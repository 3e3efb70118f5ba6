#include "fastjm/lmm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fastjm/errors.hpp"
#include "fastjm/parallel.hpp"

namespace fastjm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct SubjectDesign {
  Mat X;  // n_i x p
  Mat Z;  // n_i x q
  Vec y;
};

SubjectDesign design_of(const Subject& s, const Dims& dims) {
  const auto ni = static_cast<Eigen::Index>(s.obs.size());
  SubjectDesign d{Mat(ni, dims.p), Mat(ni, dims.q), Vec(ni)};
  for (Eigen::Index j = 0; j < ni; ++j) {
    const LongitudinalObs& o = s.obs[static_cast<std::size_t>(j)];
    d.X.row(j) = o.fixed_design.transpose();
    d.Z.row(j) = o.random_design.transpose();
    d.y(j) = o.response;
  }
  return d;
}

Vec pack(const Vec& beta, double sigma2, const Mat& Sigma) {
  Vec vs = vech(Sigma);
  Vec out(beta.size() + 1 + vs.size());
  out << beta, sigma2, vs;
  return out;
}

double max_relative_change(const Vec& a, const Vec& b) {
  return ((a - b).array().abs() / (b.array().abs() + 1e-3)).maxCoeff();
}

std::string column_label(const Dataset& data, int j) {
  if (static_cast<std::size_t>(j) < data.names().fixed.size()) return data.names().fixed[j];
  return "#" + std::to_string(j);
}

}  // namespace

Mat pooled_fixed_gram(const Dataset& data) {
  const int p = data.dims().p;
  Mat g = Mat::Zero(p, p);
  for (const Subject& s : data.subjects())
    for (const LongitudinalObs& o : s.obs) g.noalias() += o.fixed_design * o.fixed_design.transpose();
  return g;
}

void check_fixed_design_rank(const Dataset& data) {
  const Mat g = pooled_fixed_gram(data);
  const int p = data.dims().p;
  std::vector<int> kept;
  std::vector<int> collinear;
  for (int j = 0; j < p; ++j) {
    double resid = g(j, j);
    if (!kept.empty()) {
      const auto nk = static_cast<Eigen::Index>(kept.size());
      Mat gkk(nk, nk);
      Vec gkj(nk);
      for (Eigen::Index a = 0; a < nk; ++a) {
        gkj(a) = g(kept[a], j);
        for (Eigen::Index b = 0; b < nk; ++b) gkk(a, b) = g(kept[a], kept[b]);
      }
      resid -= gkj.dot(gkk.ldlt().solve(gkj));
    }
    if (!(resid > 1e-10 * std::max(g(j, j), 1e-300))) {
      collinear.push_back(j);
    } else {
      kept.push_back(j);
    }
  }
  if (!collinear.empty()) {
    std::string msg = "rank-deficient fixed-effect design; collinear column(s):";
    for (int j : collinear) msg += " " + column_label(data, j);
    throw InputError(msg);
  }
}

double lmm_marginal_loglik(const Dataset& data, const Vec& beta, double sigma2, const Mat& Sigma) {
  const SpdFactor sig(Sigma, "Sigma");
  double total = 0.0;
  for (const Subject& s : data.subjects()) {
    if (s.obs.empty()) continue;
    const SubjectDesign d = design_of(s, data.dims());
    const Vec e = d.y - d.X * beta;
    const Mat precision = sig.inverse() + d.Z.transpose() * d.Z / sigma2;
    const SpdFactor pf(precision, "posterior precision");
    const Vec zte = d.Z.transpose() * e / sigma2;
    const double ni = static_cast<double>(s.obs.size());
    const double logdet_v = ni * std::log(sigma2) + sig.log_det() + pf.log_det();
    const double quad = e.squaredNorm() / sigma2 - zte.dot(pf.solve(zte));
    total += -0.5 * (ni * kLog2Pi + logdet_v + quad);
  }
  return total;
}

LmmFit fit_lmm(const Dataset& data, double tol, int max_iter) {
  if (data.total_obs() == 0) throw InputError("no longitudinal measurements to fit");
  check_fixed_design_rank(data);

  const Dims& dims = data.dims();
  std::vector<SubjectDesign> designs;
  for (const Subject& s : data.subjects())
    if (!s.obs.empty()) designs.push_back(design_of(s, dims));
  const auto n_sub = static_cast<double>(designs.size());
  const auto n_tot = static_cast<double>(data.total_obs());

  const Mat gram = pooled_fixed_gram(data);
  const Eigen::LDLT<Mat> gram_ldlt(gram);

  // Ordinary least squares start.
  Vec xty = Vec::Zero(dims.p);
  for (const SubjectDesign& d : designs) xty.noalias() += d.X.transpose() * d.y;
  Vec beta = gram_ldlt.solve(xty);
  double rss = 0.0;
  Vec zsq = Vec::Zero(dims.q);
  for (const SubjectDesign& d : designs) {
    rss += (d.y - d.X * beta).squaredNorm();
    zsq += d.Z.colwise().squaredNorm().transpose();
  }
  const double s2 = std::max(rss / n_tot, 1e-8);
  double sigma2 = 0.5 * s2;
  Mat Sigma = Mat::Zero(dims.q, dims.q);
  for (int a = 0; a < dims.q; ++a) {
    const double mz = std::max(zsq(a) / n_tot, 1e-8);
    Sigma(a, a) = 0.5 * s2 / (mz * dims.q);
  }

  LmmFit fit;
  std::vector<Vec> means(designs.size());
  std::vector<Mat> covs(designs.size());
  for (int iter = 1; iter <= max_iter; ++iter) {
    const SpdFactor sig(Sigma, "Sigma");
    double loglik = 0.0;
    for (std::size_t i = 0; i < designs.size(); ++i) {
      const SubjectDesign& d = designs[i];
      const Vec e = d.y - d.X * beta;
      const SpdFactor pf(sig.inverse() + d.Z.transpose() * d.Z / sigma2, "posterior precision");
      const Vec zte = d.Z.transpose() * e / sigma2;
      covs[i] = pf.inverse();
      means[i] = covs[i] * zte;
      const double ni = static_cast<double>(d.y.size());
      loglik += -0.5 * (ni * kLog2Pi + ni * std::log(sigma2) + sig.log_det() + pf.log_det() +
                        e.squaredNorm() / sigma2 - zte.dot(means[i]));
    }
    fit.loglik_trace.push_back(loglik);

    const Vec old = pack(beta, sigma2, Sigma);
    Vec rhs = Vec::Zero(dims.p);
    for (std::size_t i = 0; i < designs.size(); ++i)
      rhs.noalias() += designs[i].X.transpose() * (designs[i].y - designs[i].Z * means[i]);
    beta = gram_ldlt.solve(rhs);
    double ss = 0.0;
    Mat ebb = Mat::Zero(dims.q, dims.q);
    for (std::size_t i = 0; i < designs.size(); ++i) {
      const SubjectDesign& d = designs[i];
      ss += (d.y - d.X * beta - d.Z * means[i]).squaredNorm() +
            (d.Z.transpose() * d.Z * covs[i]).trace();
      ebb += means[i] * means[i].transpose() + covs[i];
    }
    sigma2 = ss / n_tot;
    Sigma = symmetrized(ebb / n_sub);
    fit.iterations = iter;
    if (max_relative_change(pack(beta, sigma2, Sigma), old) < tol) {
      fit.converged = true;
      break;
    }
  }
  fit.beta = beta;
  fit.sigma2 = sigma2;
  fit.Sigma = Sigma;
  fit.loglik = lmm_marginal_loglik(data, beta, sigma2, Sigma);
  fit.loglik_trace.push_back(fit.loglik);
  return fit;
}

namespace {

struct VFactor {
  Eigen::LLT<Mat> llt;
  SubjectDesign design;
};

VFactor factor_v(const Subject& s, const Dims& dims, const LmmFit& fit) {
  VFactor f;
  f.design = design_of(s, dims);
  const auto ni = f.design.y.size();
  Mat v = f.design.Z * fit.Sigma * f.design.Z.transpose();
  v.diagonal().array() += fit.sigma2;
  f.llt.compute(v);
  if (f.llt.info() != Eigen::Success) {
    throw FitError("marginal covariance V_i not positive definite for subject " + s.id);
  }
  (void)ni;
  return f;
}

EbSubject assemble_eb(const Subject& s, const VFactor& f, const LmmFit& fit,
                      const Eigen::LDLT<Mat>& a_ldlt) {
  const SubjectDesign& d = f.design;
  const Vec e = d.y - d.X * fit.beta;
  const Mat vinv_z = f.llt.solve(d.Z);  // V^{-1} Z
  const Mat vinv_x = f.llt.solve(d.X);  // V^{-1} X
  EbSubject eb;
  eb.b_tilde = fit.Sigma * (vinv_z.transpose() * e);
  // Sigma Z' [V^{-1} - V^{-1} X A^{-1} X' V^{-1}] Z Sigma
  const Mat zt_vinv_z = d.Z.transpose() * vinv_z;
  const Mat xt_vinv_z = d.X.transpose() * vinv_z;
  const Mat middle = zt_vinv_z - xt_vinv_z.transpose() * a_ldlt.solve(xt_vinv_z);
  eb.H_inv = symmetrized(fit.Sigma - fit.Sigma * middle * fit.Sigma);
  Eigen::LLT<Mat> h(eb.H_inv);
  if (h.info() != Eigen::Success) {
    throw FitError("empirical Bayes covariance not positive definite for subject " + s.id);
  }
  eb.H_inv_sqrt = h.matrixL();
  return eb;
}

EbSubject prior_eb(const LmmFit& fit) {
  EbSubject eb;
  eb.b_tilde = Vec::Zero(fit.Sigma.rows());
  eb.H_inv = fit.Sigma;
  eb.H_inv_sqrt = SpdFactor(fit.Sigma, "Sigma").lower();
  return eb;
}

}  // namespace

EBayesState empirical_bayes_all(const Dataset& data, const LmmFit& fit) {
  const Dims& dims = data.dims();
  const std::size_t n = data.n();

  // Pass 1: factor V_i and accumulate A in subject order.
  std::vector<VFactor> factors(n);
  std::vector<Mat> contrib(n);
  parallel_for(n, [&](std::size_t i) {
    const Subject& s = data.subject(i);
    if (s.obs.empty()) return;
    factors[i] = factor_v(s, dims, fit);
    contrib[i] = factors[i].design.X.transpose() * factors[i].llt.solve(factors[i].design.X);
  });
  EBayesState state;
  state.fixed_info = Mat::Zero(dims.p, dims.p);
  for (std::size_t i = 0; i < n; ++i)
    if (contrib[i].size() > 0) state.fixed_info += contrib[i];
  const Eigen::LDLT<Mat> a_ldlt(state.fixed_info);

  // Pass 2: per-subject assembly against the cached A.
  state.subjects.resize(n);
  const EbSubject prior = prior_eb(fit);
  parallel_for(n, [&](std::size_t i) {
    const Subject& s = data.subject(i);
    state.subjects[i] = s.obs.empty() ? prior : assemble_eb(s, factors[i], fit, a_ldlt);
  });
  return state;
}

EBayesState empirical_bayes_all_naive(const Dataset& data, const LmmFit& fit) {
  const Dims& dims = data.dims();
  EBayesState state;
  state.subjects.resize(data.n());
  const EbSubject prior = prior_eb(fit);
  for (std::size_t i = 0; i < data.n(); ++i) {
    const Subject& s = data.subject(i);
    if (s.obs.empty()) {
      state.subjects[i] = prior;
      continue;
    }
    // Recompute sum_r X_r' V_r^{-1} X_r from scratch for every subject.
    Mat a = Mat::Zero(dims.p, dims.p);
    for (std::size_t r = 0; r < data.n(); ++r) {
      const Subject& sr = data.subject(r);
      if (sr.obs.empty()) continue;
      const VFactor fr = factor_v(sr, dims, fit);
      a += fr.design.X.transpose() * fr.llt.solve(fr.design.X);
    }
    state.fixed_info = a;
    state.subjects[i] = assemble_eb(s, factor_v(s, dims, fit), fit, Eigen::LDLT<Mat>(a));
  }
  return state;
}

}  // namespace fastjm
