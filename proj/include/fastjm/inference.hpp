#pragma once

#include <string>
#include <vector>

#include "fastjm/em.hpp"
#include "fastjm/linalg.hpp"
#include "fastjm/model.hpp"
#include "fastjm/scan_kernels.hpp"

namespace fastjm {

// Layout of the parametric component
//   (beta, vech Sigma, sigma2, gamma_1..gamma_K, nu_1..nu_K),
// vech taken row-major over the lower triangle.
class OmegaLayout {
 public:
  OmegaLayout(const Dims& dims, int n_causes, const ColumnNames& names = {});

  Eigen::Index size() const { return static_cast<Eigen::Index>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

  Eigen::Index beta_offset() const { return 0; }
  Eigen::Index sigma_offset() const { return dims_.p; }
  Eigen::Index sigma2_offset() const { return dims_.p + dims_.q * (dims_.q + 1) / 2; }
  Eigen::Index gamma_offset(int cause) const {
    return sigma2_offset() + 1 + static_cast<Eigen::Index>(cause - 1) * dims_.p2;
  }
  Eigen::Index nu_offset(int cause) const {
    return sigma2_offset() + 1 + static_cast<Eigen::Index>(n_causes_) * dims_.p2 +
           static_cast<Eigen::Index>(cause - 1) * dims_.q;
  }

  Vec pack(const ParameterSet& params) const;
  // Overwrites the parametric fields of base; baselines are left untouched.
  ParameterSet unpack(const Vec& omega, const ParameterSet& base) const;

 private:
  Dims dims_;
  int n_causes_;
  std::vector<std::string> names_;
};

using ScoreMatrix = Mat;  // n x d, row i = gradient of subject i's profiled log-likelihood

// Per-subject profiled scores at the fitted parameters. The baselines are
// profiled out by the Breslow estimator whose weights exp(w'gamma) E[exp(nu'b)]
// use the posterior at the fit, held fixed. The scan backend is O(n d); the
// naive backend recomputes every risk-set sum for every (subject, knot) pair.
ScoreMatrix profiled_scores(const Dataset& data, const FitResult& fit,
                            Backend backend = Backend::scan, scan::OpCount* ops = nullptr,
                            bool require_converged = true);

// (sum_i s_i s_i')^{-1}; throws FitError when the condition number exceeds 1e12.
Mat covariance(const ScoreMatrix& scores);

struct SeReport {
  std::vector<std::string> names;
  Vec estimate;
  Vec se;
  Mat cov;
  Vec total_score;           // column sums of the score matrix
  double stationarity = 0.0;  // max |total score| / sqrt(n)
};

SeReport standard_errors(const FitResult& fit, const Dataset& data,
                         Backend backend = Backend::scan);

}  // namespace fastjm
