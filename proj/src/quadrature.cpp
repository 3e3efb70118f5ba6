#include "fastjm/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fastjm/errors.hpp"

namespace fastjm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Orthonormal Hermite recurrence at x: returns (p_n(x), p_n'(x)) scaled so that
// the Gauss weight is 2 / p_n'(x)^2.
std::pair<double, double> hermite_eval(int n, double x) {
  double p1 = 1.0 / std::pow(std::numbers::pi, 0.25);
  double p2 = 0.0;
  for (int j = 1; j <= n; ++j) {
    const double p3 = p2;
    p2 = p1;
    p1 = x * std::sqrt(2.0 / j) * p2 - std::sqrt(static_cast<double>(j - 1) / j) * p3;
  }
  return {p1, std::sqrt(2.0 * n) * p2};
}

}  // namespace

GhRule1d gh_rule(int order) {
  if (order < 1 || order > 64) {
    throw std::invalid_argument("Gauss-Hermite order must be in 1..64, got " +
                                std::to_string(order));
  }
  GhRule1d rule;
  rule.order = order;
  if (order == 1) {
    rule.nodes = {0.0};
    rule.weights = {std::sqrt(std::numbers::pi)};
    return rule;
  }

  // Golub-Welsch starting values, then Newton polishing on the recurrence.
  Mat jacobi = Mat::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(i / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(jacobi);
  std::vector<double> x(eig.eigenvalues().data(), eig.eigenvalues().data() + order);
  std::vector<double> w(order);
  for (int i = 0; i < order; ++i) {
    double z = x[i];
    for (int it = 0; it < 10; ++it) {
      const auto [p, dp] = hermite_eval(order, z);
      const double step = p / dp;
      z -= step;
      if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    const auto [p, dp] = hermite_eval(order, z);
    (void)p;
    x[i] = z;
    w[i] = 2.0 / (dp * dp);
  }
  std::vector<int> idx(order);
  for (int i = 0; i < order; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return x[a] < x[b]; });
  rule.nodes.resize(order);
  rule.weights.resize(order);
  for (int i = 0; i < order; ++i) {
    rule.nodes[i] = x[idx[i]];
    rule.weights[i] = w[idx[i]];
  }
  // Exact antisymmetry.
  for (int i = 0; i < order / 2; ++i) {
    const int j = order - 1 - i;
    const double a = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double wt = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -a;
    rule.nodes[j] = a;
    rule.weights[i] = rule.weights[j] = wt;
  }
  if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
  return rule;
}

QuadratureGrid tensor_grid(const GhRule1d& rule, int dim) {
  if (dim < 1) throw std::invalid_argument("quadrature dimension must be >= 1");
  const Eigen::Index nq = rule.order;
  Eigen::Index rows = 1;
  for (int d = 0; d < dim; ++d) {
    if (rows > kMaxGridSize / nq) {
      throw std::invalid_argument("tensor grid of " + std::to_string(nq) + "^" +
                                  std::to_string(dim) +
                                  " points exceeds the size guard; use fewer points or "
                                  "pseudo-adaptive mode");
    }
    rows *= nq;
  }
  QuadratureGrid grid;
  grid.dim = dim;
  grid.points.resize(rows, dim);
  grid.log_weight_adj.resize(rows);
  std::vector<Eigen::Index> digit(dim, 0);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double lw = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double c = rule.nodes[digit[d]];
      grid.points(r, d) = c;
      lw += std::log(rule.weights[digit[d]]) + c * c;
    }
    grid.log_weight_adj(r) = lw;
    // Last coordinate varies fastest.
    for (int d = dim - 1; d >= 0; --d) {
      if (++digit[d] < nq) break;
      digit[d] = 0;
    }
  }
  return grid;
}

NodeSet standard_nodes(const QuadratureGrid& grid, const Mat& Sigma) {
  const SpdFactor f(Sigma, "Sigma");
  NodeSet ns;
  ns.points = std::sqrt(2.0) * grid.points * f.lower().transpose();
  ns.log_jacobian = 0.5 * grid.dim * std::log(2.0) + 0.5 * f.log_det();
  return ns;
}

NodeSet pseudo_adaptive_nodes(const QuadratureGrid& grid, const Vec& b_tilde,
                              const Mat& H_inv_sqrt) {
  if (b_tilde.size() != grid.dim) throw DimensionError("b_tilde", grid.dim, b_tilde.size());
  if (H_inv_sqrt.rows() != grid.dim || H_inv_sqrt.cols() != grid.dim) {
    throw DimensionError("H_inv_sqrt", grid.dim, H_inv_sqrt.rows());
  }
  NodeSet ns;
  ns.points = std::sqrt(2.0) * grid.points * H_inv_sqrt.transpose();
  ns.points.rowwise() += b_tilde.transpose();
  const double logdet = H_inv_sqrt.diagonal().array().abs().log().sum();
  if (!std::isfinite(logdet)) throw FitError("degenerate pseudo-adaptive scale matrix");
  ns.log_jacobian = 0.5 * grid.dim * std::log(2.0) + logdet;
  return ns;
}

NodeSet subject_nodes(QuadMode mode, const QuadratureGrid& grid, const Mat& Sigma,
                      const EbSubject* eb) {
  if (mode == QuadMode::standard) return standard_nodes(grid, Sigma);
  if (eb == nullptr) {
    throw std::invalid_argument("pseudo-adaptive nodes need empirical Bayes estimates");
  }
  return pseudo_adaptive_nodes(grid, eb->b_tilde, eb->H_inv_sqrt);
}

SubjectMoments posterior_moments(const Subject& subject, const ParameterSet& params,
                                 const SpdFactor& prior, const NodeSet& nodes,
                                 const QuadratureGrid& grid, const SurvivalAtT& surv,
                                 double* weights_out) {
  const int q = grid.dim;
  const Eigen::Index G = grid.size();
  const auto K = params.causes.size();
  if (nodes.points.rows() != G || nodes.points.cols() != q) {
    throw DimensionError("quadrature nodes", static_cast<std::size_t>(G),
                         static_cast<std::size_t>(nodes.points.rows()));
  }
  if (surv.cum_hazard.size() != K) throw DimensionError("cum_hazard", K, surv.cum_hazard.size());

  // Gaussian part: -0.5 b'Ab + h'b + c with A = Z'Z/sigma2 + Sigma^{-1}.
  const auto ni = static_cast<double>(subject.obs.size());
  Mat quad_a = prior.inverse();
  Vec lin_h = Vec::Zero(q);
  double ete = 0.0;
  for (const LongitudinalObs& o : subject.obs) {
    const double e = o.response - o.fixed_design.dot(params.beta);
    ete += e * e;
    lin_h.noalias() += e * o.random_design;
    quad_a.noalias() += o.random_design * o.random_design.transpose() / params.sigma2;
  }
  lin_h /= params.sigma2;
  const double const_part = -0.5 * ni * (kLog2Pi + std::log(params.sigma2)) -
                            0.5 * ete / params.sigma2 -
                            0.5 * (q * kLog2Pi + prior.log_det());

  // Per-cause linear predictors and exp(nu_k' b_t).
  Mat nub(G, static_cast<Eigen::Index>(K));
  for (std::size_t k = 0; k < K; ++k) nub.col(k) = nodes.points * params.causes[k].nu;
  Mat expnub = nub.array().exp().matrix();

  std::vector<double> eta(K), exp_eta(K);
  for (std::size_t k = 0; k < K; ++k) {
    eta[k] = subject.surv_covariates.dot(params.causes[k].gamma);
    exp_eta[k] = std::exp(eta[k]);
  }

  Vec ell(G);
  const Mat pa = nodes.points * quad_a;
  for (Eigen::Index t = 0; t < G; ++t) {
    const auto b = nodes.points.row(t);
    double v = const_part - 0.5 * pa.row(t).dot(b) + b.dot(lin_h.transpose());
    for (std::size_t k = 0; k < K; ++k) {
      if (subject.cause == static_cast<int>(k) + 1) v += surv.log_jump + eta[k] + nub(t, k);
      if (surv.cum_hazard[k] != 0.0) v -= surv.cum_hazard[k] * exp_eta[k] * expnub(t, k);
    }
    ell(t) = v + grid.log_weight_adj(t);
  }

  const double top = ell.maxCoeff();
  if (!std::isfinite(top)) throw FitError("posterior mass lost; widen quadrature (subject " +
                                          subject.id + ")");
  Vec w = (ell.array() - top).exp().matrix();
  const double total = w.sum();
  w /= total;

  SubjectMoments m;
  m.marginal_loglik = top + std::log(total) + nodes.log_jacobian;
  m.Eb = nodes.points.transpose() * w;
  m.Ebb = symmetrized(nodes.points.transpose() * w.asDiagonal() * nodes.points);
  m.Eexp.resize(K);
  m.Ebexp.resize(K);
  m.Ebbexp.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    const Vec v = w.cwiseProduct(expnub.col(k));
    m.Eexp[k] = v.sum();
    m.Ebexp[k] = nodes.points.transpose() * v;
    m.Ebbexp[k] = symmetrized(nodes.points.transpose() * v.asDiagonal() * nodes.points);
  }
  if (weights_out != nullptr) std::copy(w.data(), w.data() + G, weights_out);
  return m;
}

}  // namespace fastjm
