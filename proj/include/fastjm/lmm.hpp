#pragma once

#include <vector>

#include "fastjm/linalg.hpp"
#include "fastjm/model.hpp"

namespace fastjm {

struct LmmFit {
  Vec beta;
  double sigma2 = 1.0;
  Mat Sigma;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> loglik_trace;
};

// Maximum-likelihood fit of the linear mixed model alone (survival ignored) by
// EM with closed-form updates. Subjects without measurements do not enter.
// Stops when max |dtheta| / (|theta| + 1e-3) < tol or after max_iter.
LmmFit fit_lmm(const Dataset& data, double tol = 1e-6, int max_iter = 500);

// Marginal log-likelihood sum_i log N(Y_i; X_i beta, Z_i Sigma Z_i' + sigma2 I).
double lmm_marginal_loglik(const Dataset& data, const Vec& beta, double sigma2, const Mat& Sigma);

// Pooled fixed-design normal matrix sum_ij x_ij x_ij'.
Mat pooled_fixed_gram(const Dataset& data);

// Throws InputError naming collinear fixed-effect columns (by name when the
// dataset carries names, else by index).
void check_fixed_design_rank(const Dataset& data);

struct EbSubject {
  Vec b_tilde;      // empirical Bayes mean
  Mat H_inv;        // its covariance, including the fixed-effect correction
  Mat H_inv_sqrt;   // lower Cholesky factor of H_inv
};

struct EBayesState {
  std::vector<EbSubject> subjects;
  Mat fixed_info;  // A = sum_i X_i' V_i^{-1} X_i, computed once
};

// Empirical Bayes estimates and covariances for every subject, using the
// cached fixed-effect information A (two passes over subjects).
EBayesState empirical_bayes_all(const Dataset& data, const LmmFit& fit);

// Reference version that rebuilds A inside every subject's assembly (O(n^2)).
EBayesState empirical_bayes_all_naive(const Dataset& data, const LmmFit& fit);

}  // namespace fastjm
