#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>

namespace fastjm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Cholesky factorization of a symmetric positive-definite matrix with the
// quantities the model needs repeatedly: L, the inverse and log|A|.
// Construction throws FitError (with the offending matrix) if A is not SPD.
class SpdFactor {
 public:
  SpdFactor() = default;
  explicit SpdFactor(const Mat& a, std::string_view what = "matrix");

  const Mat& lower() const { return lower_; }
  const Mat& inverse() const { return inverse_; }
  double log_det() const { return log_det_; }
  Eigen::Index dim() const { return lower_.rows(); }

  Vec solve(const Vec& rhs) const;
  double quad_form_inv(const Vec& x) const;  // x' A^{-1} x

 private:
  Mat lower_;
  Mat inverse_;
  double log_det_ = 0.0;
};

inline Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

bool is_spd(const Mat& m);

std::string format_matrix(const Mat& m);

// Half-vectorization, row-major over the lower triangle: (0,0),(1,0),(1,1),(2,0),...
Vec vech(const Mat& m);
Mat unvech(const Vec& v, Eigen::Index dim);

}  // namespace fastjm
